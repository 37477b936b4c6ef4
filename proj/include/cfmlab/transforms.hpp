#pragma once

#include <vector>

#include "cfmlab/rng.hpp"
#include "cfmlab/tensor.hpp"

namespace cfmlab {

struct TransformConfig {
    bool di_enabled = false;
    double di_prob = 0.7;
    double di_scale_max = 330.0 / 299.0;

    bool rdi_enabled = false;
    double rdi_scale_max = 340.0 / 299.0;

    bool si_enabled = false;
    int si_copies = 5;

    bool vt_enabled = false;
    int vt_samples = 5;
    double vt_beta = 1.5;

    bool admix_enabled = false;
    double admix_weight = 0.2;
    int admix_rounds = 3;

    bool ti_enabled = false;
    int ti_kernel_size = 5;

    void validate() const;
};

// Random expand-pad-shrink applied with probability di_prob per call
// (resize to r in [H, floor(H*scale_max)], zero-pad at a random offset to
// the maximum size, resize back to H). Differentiable w.r.t. the batch.
Tensor di_transform(const Tensor& batch, const TransformConfig& cfg, Rng& rng);

// Same geometry as DI but always applied.
Tensor rdi_transform(const Tensor& batch, const TransformConfig& cfg, Rng& rng);

// Copies x / 2^i for i = 0..m-1.
std::vector<Tensor> si_copies(const Tensor& batch, int m);

// x_i + w * x_{perm(i)} for a fresh uniform permutation of the batch.
Tensor admix_round(const Tensor& batch, double w, Rng& rng);

// Normalized Gaussian kernel, sigma = size/3, odd size.
Tensor ti_kernel(int size);

// Depthwise zero-padded convolution of a gradient field with the kernel.
// Pure data transform; the result does not track gradients.
Tensor ti_smooth(const Tensor& grad, const Tensor& kernel);

}  // namespace cfmlab
