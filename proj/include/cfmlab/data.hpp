#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfmlab/tensor.hpp"

namespace cfmlab {

struct LabeledImageSet {
    Tensor images;  // [N,C,H,W], pixels in [0,1]
    std::vector<int> true_labels;
    std::vector<int> target_labels;  // empty until assign_targets
    int num_classes = 0;

    int size() const { return images.defined() ? images.dim(0) : 0; }
    // one image as a [1,C,H,W] tensor
    Tensor image(int i) const;
    // contiguous [count,C,H,W] slice starting at first
    Tensor slice(int first, int count) const;
};

// Standard CIFAR-10 binary batches (3073-byte records: label byte + 3072
// channel-planar pixel bytes). split is "train" (data_batch_1..5.bin) or
// "test" (test_batch.bin). Pixels scaled to [0,1] by /255.
LabeledImageSet load_cifar10_binary(const std::string& dir_path, const std::string& split);

// Class-conditional structured images (per-class wave patterns plus a class
// blob and pixel noise), deterministic in the seed, separable by a linear
// classifier. shape is {C,H,W}. Per-class patterns depend on the seed only;
// sample_offset selects a disjoint run of per-image draws so train and test
// splits share patterns without sharing noise.
LabeledImageSet make_synthetic(int num_classes, int per_class, const Shape& chw, uint64_t seed,
                               uint64_t sample_offset = 0, double noise_sigma = 0.18,
                               double signal_scale = 1.0);

// Uniform random incorrect target class per image.
void assign_targets(LabeledImageSet& set, uint64_t seed);

// per_class images per class drawn without replacement, order class-major.
LabeledImageSet stratified_sample(const LabeledImageSet& set, int per_class, uint64_t seed);

// CFMW container round trip for datasets.
void save_set(const LabeledImageSet& set, const std::string& path);
LabeledImageSet load_set(const std::string& path);

}  // namespace cfmlab
