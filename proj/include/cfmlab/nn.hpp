#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfmlab/tensor.hpp"

namespace cfmlab {

enum class LayerKind { conv, fc, relu, maxpool, flatten };

struct LayerSpec {
    LayerKind kind;
    std::string name;
    bool hookable = false;  // true exactly for conv and fc
    // conv
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    // fc
    int width = 0;
    // maxpool (kernel == stride)
    int pool = 0;
};

enum class ArchId { tinyA, tinyB, tinyC, tinyD };
ArchId parse_arch(const std::string& name);
std::string arch_name(ArchId id);

struct Model {
    ArchId arch = ArchId::tinyA;
    std::vector<LayerSpec> specs;
    std::map<std::string, Tensor> weights;  // name.weight / name.bias
    int in_c = 0, in_h = 0, in_w = 0;
    int num_classes = 0;

    const Tensor& weight(const std::string& name) const;
    void set_weight(const std::string& name, Tensor t);
    // parameter names in spec order (weight before bias per layer)
    std::vector<std::string> parameter_names() const;
};

// Output shape of every layer, in order. For conv/fc this is the
// pre-activation hook-point shape.
struct LayerShape {
    std::string name;
    LayerKind kind;
    bool hookable;
    int c, h, w;  // fc layers use c = width, h = w = 1
};
std::vector<LayerShape> layer_output_shapes(const Model& m);

// Pre-activation feature observer/replacer interface. forward() offers every
// hookable layer's output to the hook set before the next layer consumes it.
struct ForwardHooks {
    virtual ~ForwardHooks() = default;
    virtual void begin_pass() {}
    virtual Tensor feature(const std::string& layer_name, Tensor pre_activation) = 0;
};

// Four small CNN architectures differing in depth (3-5 conv layers), width
// and pooling, all with at least two pooling stages. He-uniform init, biases
// zero, bitwise deterministic in the seed. Input spatial size must be >= 16.
Model build_model(ArchId arch, int in_c, int in_h, int in_w, int num_classes, uint64_t seed);

Tensor forward(const Model& m, const Tensor& batch, ForwardHooks* hooks = nullptr);

struct TrainConfig {
    int epochs = 5;
    int batch_size = 32;
    float learning_rate = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    uint64_t seed = 1;
};

struct TrainResult {
    float test_accuracy = 0.0f;
    std::vector<float> epoch_mean_loss;
};

struct LabeledImageSet;  // data.hpp

// SGD with momentum on softmax cross-entropy. Deterministic in
// (seed, config, data); throws on divergence.
TrainResult train(Model& m, const LabeledImageSet& train_set, const LabeledImageSet& test_set,
                  const TrainConfig& cfg);

float evaluate_accuracy(const Model& m, const LabeledImageSet& set, int batch_size = 64);

// CFMW weight files; save -> load -> save is byte-identical.
void save_weights(const Model& m, const std::string& path);
Model load_weights(const std::string& path);

}  // namespace cfmlab
