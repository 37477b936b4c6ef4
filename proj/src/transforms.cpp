#include "cfmlab/transforms.hpp"

#include <cmath>
#include <stdexcept>

namespace cfmlab {

void TransformConfig::validate() const {
    if (di_prob < 0.0 || di_prob > 1.0)
        throw std::invalid_argument("transform: di_prob must be in [0,1]");
    if (di_scale_max < 1.0 || rdi_scale_max < 1.0)
        throw std::invalid_argument("transform: scale_max must be >= 1");
    if (si_copies < 1) throw std::invalid_argument("transform: si_copies must be >= 1");
    if (vt_samples < 1) throw std::invalid_argument("transform: vt_samples must be >= 1");
    if (vt_beta < 0.0) throw std::invalid_argument("transform: vt_beta must be >= 0");
    if (admix_rounds < 1) throw std::invalid_argument("transform: admix_rounds must be >= 1");
    if (ti_kernel_size < 1 || ti_kernel_size % 2 == 0)
        throw std::invalid_argument("transform: ti_kernel_size must be odd");
    if (di_enabled && rdi_enabled)
        throw std::invalid_argument("transform: DI and RDI cannot both be enabled");
}

namespace {

// draw r in [H, S], pad offsets, resize back to H
Tensor expand_pad_shrink(const Tensor& batch, double scale_max, Rng& rng) {
    const int H = batch.dim(2), W = batch.dim(3);
    if (H != W) throw std::invalid_argument("transform: inputs must be square");
    const int S = static_cast<int>(std::floor(H * scale_max));
    const int r = H + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - H + 1)));
    const int top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - r + 1)));
    const int left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - r + 1)));
    if (S == H && r == H) return batch;  // degenerate geometry, nothing to do
    Tensor resized = (r == H) ? batch : bilinear_resize(batch, r, r);
    Tensor padded = pad_image(resized, top, left, S, S);
    return bilinear_resize(padded, H, W);
}

}  // namespace

Tensor di_transform(const Tensor& batch, const TransformConfig& cfg, Rng& rng) {
    if (!rng.bernoulli(cfg.di_prob)) return batch;
    return expand_pad_shrink(batch, cfg.di_scale_max, rng);
}

Tensor rdi_transform(const Tensor& batch, const TransformConfig& cfg, Rng& rng) {
    return expand_pad_shrink(batch, cfg.rdi_scale_max, rng);
}

std::vector<Tensor> si_copies(const Tensor& batch, int m) {
    if (m < 1) throw std::invalid_argument("si_copies: m must be >= 1");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(m));
    out.push_back(batch);
    float factor = 1.0f;
    for (int i = 1; i < m; ++i) {
        factor *= 0.5f;
        out.push_back(scale(batch, factor));
    }
    return out;
}

Tensor admix_round(const Tensor& batch, double w, Rng& rng) {
    if (batch.dim(0) < 2) throw std::invalid_argument("admix_round: batch size must be >= 2");
    std::vector<int> perm = rng.permutation(batch.dim(0));
    return batch_mix(batch, perm, static_cast<float>(w));
}

Tensor ti_kernel(int size) {
    if (size < 1 || size % 2 == 0) throw std::invalid_argument("ti_kernel: size must be odd");
    const int half = (size - 1) / 2;
    const double sigma = static_cast<double>(size) / 3.0;
    std::vector<double> g(static_cast<size_t>(size));
    for (int j = -half; j <= half; ++j)
        g[static_cast<size_t>(j + half)] = std::exp(-(j * j) / (2.0 * sigma * sigma));
    std::vector<double> k2(static_cast<size_t>(size) * size);
    double total = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            k2[static_cast<size_t>(i) * size + j] = g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)];
            total += k2[static_cast<size_t>(i) * size + j];
        }
    std::vector<float> out(k2.size());
    for (size_t i = 0; i < k2.size(); ++i) out[i] = static_cast<float>(k2[i] / total);
    return Tensor::from_data({size, size}, std::move(out));
}

Tensor ti_smooth(const Tensor& grad, const Tensor& kernel) {
    if (grad.rank() != 4) throw std::invalid_argument("ti_smooth: grad must be [B,C,H,W]");
    if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0)
        throw std::invalid_argument("ti_smooth: kernel must be odd square");
    const int B = grad.dim(0), C = grad.dim(1), H = grad.dim(2), W = grad.dim(3);
    const int ks = kernel.dim(0);
    if (ks == 1) {
        // kernel [[1]] is the identity
        if (kernel.item() == 1.0f) return grad.detach();
    }
    const int half = (ks - 1) / 2;
    const float* g = grad.data();
    const float* k = kernel.data();
    std::vector<float> out(grad.numel());
    size_t oi = 0;
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const float* plane = g + (static_cast<size_t>(b) * C + c) * H * W;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x, ++oi) {
                    double acc = 0.0;
                    for (int i = 0; i < ks; ++i) {
                        const int yy = y + i - half;
                        if (yy < 0 || yy >= H) continue;
                        for (int j = 0; j < ks; ++j) {
                            const int xx = x + j - half;
                            if (xx < 0 || xx >= W) continue;
                            acc += static_cast<double>(k[static_cast<size_t>(i) * ks + j]) *
                                   static_cast<double>(plane[static_cast<size_t>(yy) * W + xx]);
                        }
                    }
                    out[oi] = static_cast<float>(acc);
                }
            }
        }
    }
    return Tensor::from_data(grad.shape(), std::move(out));
}

}  // namespace cfmlab
