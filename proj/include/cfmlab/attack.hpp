#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfmlab/cfm.hpp"
#include "cfmlab/nn.hpp"
#include "cfmlab/tensor.hpp"
#include "cfmlab/transforms.hpp"

namespace cfmlab {

enum class LossKind { logit, cross_entropy };

struct AttackConfig {
    std::string name = "attack";
    double epsilon = 16.0 / 255.0;
    double eta = 2.0 / 255.0;
    int iterations = 300;  // total budget T; CFM storage consumes one
    bool mi_enabled = true;
    double mi_mu = 1.0;
    TransformConfig transform;
    std::optional<CfmConfig> cfm;
    LossKind loss = LossKind::logit;
    uint64_t seed = 0;

    void validate() const;
};

struct AttackTrace {
    std::vector<double> mean_loss;         // one entry per gradient iteration
    std::vector<double> mean_target_rank;  // 0 = target logit already largest
    int gradient_iterations() const { return static_cast<int>(mean_loss.size()); }
};

struct AttackResult {
    Tensor x_adv;
    AttackTrace trace;
};

// L = -mean_i logits[i, target_i]; minimizing raises the target logit.
Tensor logit_loss(const Tensor& logits, const std::vector<int>& targets);
Tensor attack_loss(LossKind kind, const Tensor& logits, const std::vector<int>& targets);

// x - eta * sign(g), sign(0) = 0. Plain data op.
Tensor fgsm_step(const Tensor& x, const Tensor& grad, double eta);

// Clamp to the epsilon box around clean, then to [0,1].
Tensor project(const Tensor& x_adv, const Tensor& x_clean, double epsilon);

// g_{t+1} = mu * g_t + ghat / ||ghat||_1 with the L1 norm per image; an
// all-zero image gradient skips the normalization.
Tensor mi_update(const Tensor& g_momentum, const Tensor& ghat, double mu);

struct GradientEstimate {
    Tensor grad;             // mean over all transform passes
    double mean_loss = 0.0;
    double mean_target_rank = 0.0;
};

// Mean input-gradient of the configured loss over the multiset of
// transformed inputs {admix_r(si_i(rdi_or_di(x)))}; one forward/backward per
// (admix round, SI copy). RDI/DI geometry is drawn once per iteration; admix
// permutations once per round.
GradientEstimate aggregate_gradient(const Model& m, ForwardHooks* hooks, const Tensor& x_adv,
                                    const std::vector<int>& targets, const AttackConfig& cfg,
                                    uint64_t iteration);

// VT variance state update: mean_k grad L(x + r_k) - ghat over vt_samples
// perturbations r_k ~ U(-beta*eps, beta*eps). Neighborhood passes skip the
// input transforms.
Tensor vt_variance_update(const Model& m, ForwardHooks* hooks, const Tensor& x_adv,
                          const std::vector<int>& targets, const AttackConfig& cfg,
                          const Tensor& ghat, uint64_t iteration);

// Full iterative targeted attack; with CFM enabled the first inference
// stores clean features and T-1 gradient iterations remain.
AttackResult run_attack(const Model& m, const Tensor& clean, const std::vector<int>& targets,
                        const AttackConfig& cfg);

// Count of images the model classifies as their target class.
int evaluate_transfer(const Tensor& adversarial, const std::vector<int>& targets, const Model& m);

}  // namespace cfmlab
