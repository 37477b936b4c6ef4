#include "cfmlab/attack.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "cfmlab/kernels.hpp"
#include "cfmlab/rng.hpp"

namespace cfmlab {

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
    if (eta <= 0.0) throw std::invalid_argument("attack: eta must be > 0");
    if (epsilon > 0.0 && eta > epsilon)
        throw std::invalid_argument("attack: eta must not exceed epsilon");
    if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
    if (mi_mu < 0.0) throw std::invalid_argument("attack: mi decay must be >= 0");
    transform.validate();
    if (cfm) cfm->validate();
}

Tensor logit_loss(const Tensor& logits, const std::vector<int>& targets) {
    return scale(mean_all(select_logits(logits, targets)), -1.0f);
}

Tensor attack_loss(LossKind kind, const Tensor& logits, const std::vector<int>& targets) {
    switch (kind) {
        case LossKind::logit: return logit_loss(logits, targets);
        case LossKind::cross_entropy: return softmax_cross_entropy(logits, targets);
    }
    throw std::invalid_argument("attack: unknown loss");
}

Tensor fgsm_step(const Tensor& x, const Tensor& grad, double eta) {
    if (x.shape() != grad.shape()) throw std::invalid_argument("fgsm_step: shape mismatch");
    std::vector<float> out(x.numel());
    kernels::active().sign_step(x.data(), grad.data(), static_cast<float>(eta), out.data(),
                                x.numel());
    return Tensor::from_data(x.shape(), std::move(out));
}

Tensor project(const Tensor& x_adv, const Tensor& x_clean, double epsilon) {
    if (x_adv.shape() != x_clean.shape()) throw std::invalid_argument("project: shape mismatch");
    std::vector<float> out(x_adv.numel());
    kernels::active().project_box(x_adv.data(), x_clean.data(), epsilon, out.data(),
                                  x_adv.numel());
    return Tensor::from_data(x_adv.shape(), std::move(out));
}

Tensor mi_update(const Tensor& g_momentum, const Tensor& ghat, double mu) {
    if (g_momentum.shape() != ghat.shape())
        throw std::invalid_argument("mi_update: shape mismatch");
    const int B = ghat.dim(0);
    const size_t row = ghat.numel() / static_cast<size_t>(B);
    const auto& ops = kernels::active();
    std::vector<float> out(ghat.numel());
    for (int b = 0; b < B; ++b) {
        const size_t off = static_cast<size_t>(b) * row;
        const double n1 = ops.sum_abs(ghat.data() + off, row);
        const float inv = n1 > 0.0 ? static_cast<float>(1.0 / n1) : 1.0f;
        // out = mu * g + ghat/||ghat||_1
        for (size_t i = 0; i < row; ++i) {
            out[off + i] = static_cast<float>(mu) * g_momentum.data()[off + i] +
                           inv * ghat.data()[off + i];
        }
    }
    return Tensor::from_data(ghat.shape(), std::move(out));
}

namespace {

// Expand-pad-shrink geometry pinned for one iteration so every pass of the
// iteration sees the same transform draw.
struct ResizeGeometry {
    bool active = false;
    int r = 0, top = 0, left = 0, S = 0;
};

ResizeGeometry draw_geometry(const TransformConfig& t, int H, uint64_t seed, uint64_t iteration) {
    ResizeGeometry g;
    if (t.rdi_enabled) {
        Rng rng(seed, Purpose::rdi_draw, 0, iteration);
        g.S = static_cast<int>(std::floor(H * t.rdi_scale_max));
        g.r = H + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - H + 1)));
        g.top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - g.r + 1)));
        g.left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - g.r + 1)));
        g.active = g.S != H || g.r != H;
    } else if (t.di_enabled) {
        Rng rng(seed, Purpose::di_draw, 0, iteration);
        const bool apply = rng.bernoulli(t.di_prob);
        g.S = static_cast<int>(std::floor(H * t.di_scale_max));
        g.r = H + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - H + 1)));
        g.top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - g.r + 1)));
        g.left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(g.S - g.r + 1)));
        g.active = apply && (g.S != H || g.r != H);
    }
    return g;
}

Tensor apply_geometry(const Tensor& x, const ResizeGeometry& g, int H, int W) {
    if (!g.active) return x;
    Tensor resized = (g.r == H) ? x : bilinear_resize(x, g.r, g.r);
    return bilinear_resize(pad_image(resized, g.top, g.left, g.S, g.S), H, W);
}

double target_rank_mean(const Tensor& logits, const std::vector<int>& targets) {
    const int B = logits.dim(0), N = logits.dim(1);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* row = logits.data() + static_cast<size_t>(b) * N;
        const float t = row[targets[static_cast<size_t>(b)]];
        int rank = 0;
        for (int i = 0; i < N; ++i) {
            if (row[i] > t) ++rank;
        }
        total += rank;
    }
    return total / B;
}

}  // namespace

GradientEstimate aggregate_gradient(const Model& m, ForwardHooks* hooks, const Tensor& x_adv,
                                    const std::vector<int>& targets, const AttackConfig& cfg,
                                    uint64_t iteration) {
    const TransformConfig& t = cfg.transform;
    const int H = x_adv.dim(2), W = x_adv.dim(3);
    const ResizeGeometry geom = draw_geometry(t, H, cfg.seed, iteration);
    const int n_rounds = t.admix_enabled ? t.admix_rounds : 1;
    const int n_copies = t.si_enabled ? t.si_copies : 1;

    // admix permutations, one per round
    std::vector<std::vector<int>> perms;
    if (t.admix_enabled) {
        for (int r = 0; r < n_rounds; ++r) {
            Rng rng(cfg.seed, Purpose::admix_perm, static_cast<uint64_t>(r), iteration);
            perms.push_back(rng.permutation(x_adv.dim(0)));
        }
    }

    Tensor x_in = x_adv.clone_leaf(true);
    std::vector<double> acc(x_adv.numel(), 0.0);
    const auto& ops = kernels::active();
    GradientEstimate est;
    int passes = 0;
    for (int r = 0; r < n_rounds; ++r) {
        for (int i = 0; i < n_copies; ++i) {
            // fresh tape per pass from the shared leaf
            Tensor inp = apply_geometry(x_in, geom, H, W);
            if (i > 0) inp = scale(inp, std::ldexp(1.0f, -i));
            if (t.admix_enabled)
                inp = batch_mix(inp, perms[static_cast<size_t>(r)],
                                static_cast<float>(t.admix_weight));
            Tensor logits = forward(m, inp, hooks);
            Tensor loss = attack_loss(cfg.loss, logits, targets);
            x_in.zero_grad();
            backward(loss);
            ops.axpy64(1.0, x_in.grad().data(), acc.data(), acc.size());
            est.mean_loss += loss.item64();
            if (passes == 0) est.mean_target_rank = target_rank_mean(logits, targets);
            ++passes;
        }
    }

    std::vector<float> g(acc.size());
    for (size_t i = 0; i < acc.size(); ++i)
        g[i] = static_cast<float>(acc[i] / static_cast<double>(passes));
    est.grad = Tensor::from_data(x_adv.shape(), std::move(g));
    est.mean_loss /= passes;
    return est;
}

Tensor vt_variance_update(const Model& m, ForwardHooks* hooks, const Tensor& x_adv,
                          const std::vector<int>& targets, const AttackConfig& cfg,
                          const Tensor& ghat, uint64_t iteration) {
    const double radius = cfg.transform.vt_beta * cfg.epsilon;
    const int N = cfg.transform.vt_samples;
    std::vector<double> acc(x_adv.numel(), 0.0);
    const auto& ops = kernels::active();
    Rng rng(cfg.seed, Purpose::vt_noise, 0, iteration);
    for (int k = 0; k < N; ++k) {
        std::vector<float> noisy(x_adv.numel());
        for (size_t i = 0; i < noisy.size(); ++i)
            noisy[i] = x_adv.data()[i] +
                       rng.uniform_float(-static_cast<float>(radius), static_cast<float>(radius));
        Tensor x_s = Tensor::from_data(x_adv.shape(), std::move(noisy), true);
        Tensor loss = attack_loss(cfg.loss, forward(m, x_s, hooks), targets);
        backward(loss);
        ops.axpy64(1.0, x_s.grad().data(), acc.data(), acc.size());
    }
    std::vector<float> v(acc.size());
    for (size_t i = 0; i < acc.size(); ++i)
        v[i] = static_cast<float>(acc[i] / N - static_cast<double>(ghat.data()[i]));
    return Tensor::from_data(x_adv.shape(), std::move(v));
}

AttackResult run_attack(const Model& m, const Tensor& clean, const std::vector<int>& targets,
                        const AttackConfig& cfg) {
    cfg.validate();
    if (clean.rank() != 4) throw std::invalid_argument("run_attack: batch must be [B,C,H,W]");
    const int B = clean.dim(0);
    if (static_cast<int>(targets.size()) != B)
        throw std::invalid_argument("run_attack: target count does not match batch");
    for (int t : targets) {
        if (t < 0 || t >= m.num_classes)
            throw std::invalid_argument("run_attack: target class out of range");
    }

    std::unique_ptr<CfmSession> session;
    int gradient_iters = cfg.iterations;
    if (cfg.cfm) {
        session = std::make_unique<CfmSession>(m, *cfg.cfm, cfg.seed);
        session->store_clean_features(m, clean);
        gradient_iters = cfg.iterations - 1;  // storage consumed one inference
    }

    const Tensor x_clean = clean.detach();
    Tensor x_adv = clean.detach();
    Tensor g_mom = Tensor::zeros(clean.shape());
    Tensor v = Tensor::zeros(clean.shape());
    Tensor kernel;
    if (cfg.transform.ti_enabled) kernel = ti_kernel(cfg.transform.ti_kernel_size);

    AttackResult result;
    for (int t = 1; t <= gradient_iters; ++t) {
        GradientEstimate est = aggregate_gradient(m, session.get(), x_adv, targets, cfg,
                                                  static_cast<uint64_t>(t));
        Tensor direction = est.grad;
        if (cfg.transform.vt_enabled) {
            direction = add(est.grad, v);
            v = vt_variance_update(m, session.get(), x_adv, targets, cfg, est.grad,
                                   static_cast<uint64_t>(t));
        }
        // momentum carries the pre-TI accumulator; smoothing applies once to
        // the step direction, not cumulatively to old momentum
        Tensor tilde = cfg.mi_enabled ? mi_update(g_mom, direction, cfg.mi_mu) : direction;
        g_mom = tilde;
        Tensor step_dir = cfg.transform.ti_enabled ? ti_smooth(tilde, kernel) : tilde;
        x_adv = project(fgsm_step(x_adv, step_dir, cfg.eta), x_clean, cfg.epsilon);
        result.trace.mean_loss.push_back(est.mean_loss);
        result.trace.mean_target_rank.push_back(est.mean_target_rank);
    }
    result.x_adv = x_adv;
    return result;
}

int evaluate_transfer(const Tensor& adversarial, const std::vector<int>& targets, const Model& m) {
    if (adversarial.dim(0) != static_cast<int>(targets.size()))
        throw std::invalid_argument("evaluate_transfer: target count mismatch");
    NoGradGuard ng;
    std::vector<int> pred = argmax_rows(forward(m, adversarial));
    int count = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (pred[i] == targets[i]) ++count;
    }
    return count;
}

}  // namespace cfmlab
