#include "cfmlab/cfm.hpp"

#include <stdexcept>

#include "cfmlab/kernels.hpp"
#include "cfmlab/rng.hpp"

namespace cfmlab {

void CfmConfig::validate() const {
    if (mixing_prob < 0.0 || mixing_prob > 1.0)
        throw std::invalid_argument("cfm: mixing_prob must be in [0,1]");
    if (alpha_max < 0.0 || alpha_max > 1.0)
        throw std::invalid_argument("cfm: alpha_max must be in [0,1]");
    if (area_fraction_threshold <= 0.0)
        throw std::invalid_argument("cfm: area threshold must be positive");
}

Tensor cfm_mix_pinned(const Tensor& live, const Tensor& source, const std::vector<int>& perm,
                      const std::vector<float>& alpha) {
    if (live.shape() != source.shape())
        throw std::invalid_argument("cfm_mix: live shape " + shape_str(live.shape()) +
                                    " does not match stored shape " + shape_str(source.shape()));
    if (live.rank() < 2) throw std::invalid_argument("cfm_mix: features must be [B,C,...]");
    const int B = live.dim(0), C = live.dim(1);
    if (static_cast<int>(perm.size()) != B)
        throw std::invalid_argument("cfm_mix: permutation size mismatch");
    if (alpha.size() != static_cast<size_t>(B) * C)
        throw std::invalid_argument("cfm_mix: need one alpha per image per channel");
    const size_t row = live.numel() / static_cast<size_t>(B);       // one image
    const size_t spatial = row / static_cast<size_t>(C);            // one channel

    const auto& ops = kernels::active();
    std::vector<float> out(live.numel());
    for (int b = 0; b < B; ++b) {
        const int sb = perm[static_cast<size_t>(b)];
        if (sb < 0 || sb >= B) throw std::invalid_argument("cfm_mix: invalid permutation entry");
        for (int c = 0; c < C; ++c) {
            const size_t off = static_cast<size_t>(b) * row + static_cast<size_t>(c) * spatial;
            const size_t soff = static_cast<size_t>(sb) * row + static_cast<size_t>(c) * spatial;
            ops.lerp(live.data() + off, source.data() + soff,
                     alpha[static_cast<size_t>(b) * C + c], out.data() + off, spatial);
        }
    }

    auto alphas = std::make_shared<std::vector<float>>(alpha);
    Tensor r = make_op(live.shape(), std::move(out), {live},
                       [alphas, B, C, row, spatial](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           const auto& ops = kernels::active();
                           float* gx = grad_buffer(ps[0]).data();
                           const float* g = o.grad.data();
                           for (int b = 0; b < B; ++b) {
                               for (int c = 0; c < C; ++c) {
                                   const size_t off =
                                       static_cast<size_t>(b) * row + static_cast<size_t>(c) * spatial;
                                   ops.axpy(1.0f - (*alphas)[static_cast<size_t>(b) * C + c],
                                            g + off, gx + off, spatial);
                               }
                           }
                       },
                       "cfm_mix");
    if (precise_mode()) {
        const auto& ls = shadow_src(live);
        const auto& ss = shadow_src(source);
        auto& sh = r.impl()->shadow;
        sh.resize(live.numel());
        for (int b = 0; b < B; ++b) {
            const int sb = perm[static_cast<size_t>(b)];
            for (int c = 0; c < C; ++c) {
                const size_t off = static_cast<size_t>(b) * row + static_cast<size_t>(c) * spatial;
                const size_t soff = static_cast<size_t>(sb) * row + static_cast<size_t>(c) * spatial;
                const double a = static_cast<double>((*alphas)[static_cast<size_t>(b) * C + c]);
                for (size_t i = 0; i < spatial; ++i)
                    sh[off + i] = (1.0 - a) * ls[off + i] + a * ss[soff + i];
            }
        }
    }
    return r;
}

std::vector<std::string> select_cfm_layers(const Model& m, double area_threshold) {
    std::vector<std::string> hooked;
    const double input_area = static_cast<double>(m.in_h) * m.in_w;
    for (const auto& ls : layer_output_shapes(m)) {
        if (ls.kind == LayerKind::conv) {
            const double area = static_cast<double>(ls.h) * ls.w;
            if (area <= input_area * area_threshold) hooked.push_back(ls.name);
        } else if (ls.kind == LayerKind::fc) {
            hooked.push_back(ls.name);
        }
    }
    return hooked;
}

CfmSession::CfmSession(const Model& model, CfmConfig cfg, uint64_t seed)
    : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    hooked_ = select_cfm_layers(model, cfg_.area_fraction_threshold);
    if (hooked_.empty())
        throw std::runtime_error("cfm: no eligible conv/fc layers; attack would degenerate");
    // stream ids keyed by position in the model spec so one layer's draws do
    // not depend on which other layers are hooked
    for (size_t i = 0; i < model.specs.size(); ++i) {
        for (const auto& name : hooked_) {
            if (model.specs[i].name == name) stream_id_[name] = static_cast<int>(i);
        }
    }
}

const Tensor& CfmSession::stored_features(const std::string& layer) const {
    auto it = stored_.find(layer);
    if (it == stored_.end()) throw std::runtime_error("cfm: no stored features for " + layer);
    return it->second;
}

void CfmSession::store_clean_features(const Model& model, const Tensor& clean_batch) {
    if (stored_ready_) throw std::runtime_error("cfm: clean features already stored");
    storing_ = true;
    batch_ = clean_batch.dim(0);
    {
        NoGradGuard ng;
        forward(model, clean_batch, this);
    }
    storing_ = false;
    stored_ready_ = true;
}

void CfmSession::resample() {
    if (!frozen_) ++pass_;
}

void CfmSession::begin_pass() { resample(); }

Tensor CfmSession::feature(const std::string& layer, Tensor pre_activation) {
    if (stream_id_.find(layer) == stream_id_.end()) return pre_activation;  // not hooked
    if (storing_) {
        stored_[layer] = pre_activation.detach();
        return pre_activation;
    }
    if (!stored_ready_) return pre_activation;  // plain forward before storage
    return mix(layer, pre_activation);
}

Tensor CfmSession::mix(const std::string& layer, const Tensor& live) {
    const int sid = stream_id_.at(layer);
    Rng activation(seed_, Purpose::cfm_activation, static_cast<uint64_t>(sid), pass_);
    if (!activation.bernoulli(cfg_.mixing_prob)) return live;

    const int B = live.dim(0), C = live.dim(1);
    if (B != batch_)
        throw std::invalid_argument("cfm: live batch size does not match stored features");

    std::vector<int> perm;
    if (cfg_.shuffle_enabled) {
        Rng shuffle(seed_, Purpose::cfm_permutation, static_cast<uint64_t>(sid), pass_);
        perm = shuffle.permutation(B);
    } else {
        perm.resize(static_cast<size_t>(B));
        for (int i = 0; i < B; ++i) perm[static_cast<size_t>(i)] = i;
    }

    Rng alpha_rng(seed_, Purpose::cfm_alpha, static_cast<uint64_t>(sid), pass_);
    std::vector<float> alpha(static_cast<size_t>(B) * C);
    const float amax = static_cast<float>(cfg_.alpha_max);
    if (cfg_.channelwise_alpha) {
        for (auto& a : alpha) a = alpha_rng.uniform_float(0.0f, amax);
    } else {
        for (int b = 0; b < B; ++b) {
            const float a = alpha_rng.uniform_float(0.0f, amax);
            for (int c = 0; c < C; ++c) alpha[static_cast<size_t>(b) * C + c] = a;
        }
    }

    const Tensor& source = cfg_.use_clean_features ? stored_features(layer) : live;
    // the mixed-in features are constants either way; detach the live copy
    // for the no-clean-features ablation
    return cfm_mix_pinned(live, cfg_.use_clean_features ? source : live.detach(), perm, alpha);
}

}  // namespace cfmlab
