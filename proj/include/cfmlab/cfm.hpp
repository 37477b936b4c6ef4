#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfmlab/nn.hpp"
#include "cfmlab/tensor.hpp"

namespace cfmlab {

struct CfmConfig {
    double mixing_prob = 0.1;  // 0.25 profile for 10-class data
    double alpha_max = 0.75;
    double area_fraction_threshold = 1.0 / 16.0;
    // ablation switches
    bool shuffle_enabled = true;
    bool channelwise_alpha = true;
    bool use_clean_features = true;

    void validate() const;
};

// Linear interpolation toward a constant source with pinned shuffle and
// per-(image,channel) ratios: out_b = (1-alpha_b) * live_b + alpha_b *
// source_{perm[b]}. Gradients flow through the live term only.
Tensor cfm_mix_pinned(const Tensor& live, const Tensor& source, const std::vector<int>& perm,
                      const std::vector<float>& alpha);

// Layers eligible for feature mixing: conv layers whose output spatial area
// is at most area_threshold of the model input area, plus every fc layer.
std::vector<std::string> select_cfm_layers(const Model& m, double area_threshold);

// Per-attack-run mixing state: holds the stored clean features of every
// hooked layer plus the derived RNG streams. One forward pass stores the
// clean features; every later pass stochastically mixes them in.
class CfmSession : public ForwardHooks {
public:
    CfmSession(const Model& model, CfmConfig cfg, uint64_t seed);

    const std::vector<std::string>& hooked_layers() const { return hooked_; }
    bool has_stored() const { return stored_ready_; }
    const Tensor& stored_features(const std::string& layer) const;
    const CfmConfig& config() const { return cfg_; }

    // Runs one forward pass through the mixing-hooked model and snapshots
    // every hooked layer's pre-activation output. Rejected if called twice.
    void store_clean_features(const Model& model, const Tensor& clean_batch);

    // Advances the per-layer streams so the next pass draws fresh
    // activation/permutation/alpha values. Called from begin_pass().
    void resample();
    void set_frozen(bool frozen) { frozen_ = frozen; }
    uint64_t pass_counter() const { return pass_; }

    // ForwardHooks
    void begin_pass() override;
    Tensor feature(const std::string& layer, Tensor pre_activation) override;

    // The mixing rule applied to one hooked layer's live features.
    Tensor mix(const std::string& layer, const Tensor& live);

private:
    CfmConfig cfg_;
    uint64_t seed_ = 0;
    bool storing_ = false;
    bool stored_ready_ = false;
    bool frozen_ = false;
    uint64_t pass_ = 0;
    int batch_ = 0;
    std::vector<std::string> hooked_;
    std::unordered_map<std::string, int> stream_id_;  // stable per-layer stream key
    std::unordered_map<std::string, Tensor> stored_;
};

}  // namespace cfmlab
