#include "cfmlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cfmlab/data.hpp"
#include "cfmlab/io.hpp"
#include "cfmlab/rng.hpp"

namespace cfmlab {

ArchId parse_arch(const std::string& name) {
    if (name == "tinyA") return ArchId::tinyA;
    if (name == "tinyB") return ArchId::tinyB;
    if (name == "tinyC") return ArchId::tinyC;
    if (name == "tinyD") return ArchId::tinyD;
    throw std::invalid_argument("unknown architecture: " + name);
}

std::string arch_name(ArchId id) {
    switch (id) {
        case ArchId::tinyA: return "tinyA";
        case ArchId::tinyB: return "tinyB";
        case ArchId::tinyC: return "tinyC";
        case ArchId::tinyD: return "tinyD";
    }
    return "?";
}

const Tensor& Model::weight(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end()) throw std::runtime_error("missing weight tensor: " + name);
    return it->second;
}

void Model::set_weight(const std::string& name, Tensor t) {
    auto it = weights.find(name);
    if (it == weights.end()) throw std::runtime_error("missing weight tensor: " + name);
    if (it->second.shape() != t.shape())
        throw std::runtime_error("weight shape mismatch for " + name);
    it->second = std::move(t);
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> names;
    for (const auto& s : specs) {
        if (s.kind == LayerKind::conv || s.kind == LayerKind::fc) {
            names.push_back(s.name + ".weight");
            names.push_back(s.name + ".bias");
        }
    }
    return names;
}

namespace {

struct ArchBuilder {
    std::vector<LayerSpec> specs;
    int n_conv = 0, n_fc = 0, n_relu = 0, n_pool = 0;

    void conv(int out_channels, int kernel, int padding) {
        LayerSpec s;
        s.kind = LayerKind::conv;
        s.name = "conv" + std::to_string(++n_conv);
        s.hookable = true;
        s.out_channels = out_channels;
        s.kernel = kernel;
        s.padding = padding;
        specs.push_back(std::move(s));
    }
    void fc(int width) {
        LayerSpec s;
        s.kind = LayerKind::fc;
        s.name = "fc" + std::to_string(++n_fc);
        s.hookable = true;
        s.width = width;
        specs.push_back(std::move(s));
    }
    void relu() {
        specs.push_back({LayerKind::relu, "relu" + std::to_string(++n_relu)});
    }
    void pool() {
        LayerSpec s;
        s.kind = LayerKind::maxpool;
        s.name = "pool" + std::to_string(++n_pool);
        s.pool = 2;
        specs.push_back(std::move(s));
    }
    void flatten() { specs.push_back({LayerKind::flatten, "flatten"}); }
};

std::vector<LayerSpec> arch_specs(ArchId arch, int num_classes) {
    ArchBuilder b;
    switch (arch) {
        case ArchId::tinyA:
            b.conv(12, 3, 1);
            b.relu();
            b.pool();
            b.conv(20, 3, 1);
            b.relu();
            b.pool();
            b.conv(28, 3, 1);
            b.relu();
            b.conv(28, 3, 1);
            b.relu();
            b.flatten();
            b.fc(num_classes);
            break;
        case ArchId::tinyB:
            b.conv(8, 3, 1);
            b.relu();
            b.conv(16, 3, 1);
            b.relu();
            b.pool();
            b.conv(24, 3, 1);
            b.relu();
            b.pool();
            b.conv(28, 3, 1);
            b.relu();
            b.conv(32, 3, 1);
            b.relu();
            b.pool();
            b.flatten();
            b.fc(48);
            b.relu();
            b.fc(num_classes);
            break;
        case ArchId::tinyC:
            b.conv(12, 5, 2);
            b.relu();
            b.pool();
            b.conv(16, 3, 1);
            b.relu();
            b.conv(20, 3, 1);
            b.relu();
            b.pool();
            b.conv(24, 3, 1);
            b.relu();
            b.flatten();
            b.fc(num_classes);
            break;
        case ArchId::tinyD:
            b.conv(8, 3, 1);
            b.relu();
            b.pool();
            b.conv(12, 3, 1);
            b.relu();
            b.conv(16, 3, 1);
            b.relu();
            b.pool();
            b.conv(20, 3, 1);
            b.relu();
            b.conv(24, 3, 1);
            b.relu();
            b.conv(24, 3, 1);
            b.relu();
            b.pool();
            b.flatten();
            b.fc(32);
            b.relu();
            b.fc(num_classes);
            break;
    }
    return b.specs;
}

}  // namespace

std::vector<LayerShape> layer_output_shapes(const Model& m) {
    std::vector<LayerShape> out;
    int c = m.in_c, h = m.in_h, w = m.in_w;
    bool flat = false;
    for (const auto& s : m.specs) {
        switch (s.kind) {
            case LayerKind::conv:
                if (flat) throw std::runtime_error("conv after flatten in " + s.name);
                h = (h + 2 * s.padding - s.kernel) / s.stride + 1;
                w = (w + 2 * s.padding - s.kernel) / s.stride + 1;
                c = s.out_channels;
                break;
            case LayerKind::maxpool:
                h = (h - s.pool) / s.pool + 1;
                w = (w - s.pool) / s.pool + 1;
                break;
            case LayerKind::flatten:
                c = c * h * w;
                h = w = 1;
                flat = true;
                break;
            case LayerKind::fc:
                if (!flat) throw std::runtime_error("fc before flatten in " + s.name);
                c = s.width;
                break;
            case LayerKind::relu: break;
        }
        if (h < 1 || w < 1) throw std::runtime_error("layer " + s.name + " output collapsed");
        out.push_back({s.name, s.kind, s.hookable, c, h, w});
    }
    return out;
}

Model build_model(ArchId arch, int in_c, int in_h, int in_w, int num_classes, uint64_t seed) {
    if (in_h < 16 || in_w < 16)
        throw std::invalid_argument("build_model: input spatial size must be >= 16");
    if (in_c < 1 || num_classes < 2) throw std::invalid_argument("build_model: bad shape");

    Model m;
    m.arch = arch;
    m.specs = arch_specs(arch, num_classes);
    m.in_c = in_c;
    m.in_h = in_h;
    m.in_w = in_w;
    m.num_classes = num_classes;

    // walk shapes to size the parameter tensors
    int c = in_c, h = in_h, w = in_w;
    bool flat = false;
    int param_layer = 0;
    for (const auto& s : m.specs) {
        switch (s.kind) {
            case LayerKind::conv: {
                const int fan_in = c * s.kernel * s.kernel;
                const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
                Rng rng(seed, Purpose::weight_init, static_cast<uint64_t>(param_layer++));
                std::vector<float> wdata(static_cast<size_t>(s.out_channels) * fan_in);
                for (auto& v : wdata) v = rng.uniform_float(-limit, limit);
                m.weights.emplace(s.name + ".weight",
                                  Tensor::from_data({s.out_channels, c, s.kernel, s.kernel},
                                                    std::move(wdata)));
                m.weights.emplace(s.name + ".bias", Tensor::zeros({s.out_channels}));
                h = (h + 2 * s.padding - s.kernel) / s.stride + 1;
                w = (w + 2 * s.padding - s.kernel) / s.stride + 1;
                c = s.out_channels;
                break;
            }
            case LayerKind::fc: {
                const int fan_in = c;
                const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
                Rng rng(seed, Purpose::weight_init, static_cast<uint64_t>(param_layer++));
                std::vector<float> wdata(static_cast<size_t>(s.width) * fan_in);
                for (auto& v : wdata) v = rng.uniform_float(-limit, limit);
                m.weights.emplace(s.name + ".weight",
                                  Tensor::from_data({s.width, fan_in}, std::move(wdata)));
                m.weights.emplace(s.name + ".bias", Tensor::zeros({s.width}));
                c = s.width;
                break;
            }
            case LayerKind::maxpool:
                h = (h - s.pool) / s.pool + 1;
                w = (w - s.pool) / s.pool + 1;
                break;
            case LayerKind::flatten:
                c = c * h * w;
                h = w = 1;
                flat = true;
                break;
            case LayerKind::relu: break;
        }
        if (h < 1 || w < 1)
            throw std::invalid_argument("build_model: input too small for " + arch_name(arch));
    }
    (void)flat;
    return m;
}

Tensor forward(const Model& m, const Tensor& batch, ForwardHooks* hooks) {
    if (batch.rank() != 4 || batch.dim(1) != m.in_c || batch.dim(2) != m.in_h ||
        batch.dim(3) != m.in_w) {
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape()) +
                                    " does not match model input [" + std::to_string(m.in_c) +
                                    "," + std::to_string(m.in_h) + "," + std::to_string(m.in_w) +
                                    "]");
    }
    if (hooks != nullptr) hooks->begin_pass();
    Tensor x = batch;
    for (const auto& s : m.specs) {
        switch (s.kind) {
            case LayerKind::conv: {
                Tensor pre = conv2d(x, m.weight(s.name + ".weight"), m.weight(s.name + ".bias"),
                                    s.stride, s.padding);
                x = hooks ? hooks->feature(s.name, std::move(pre)) : std::move(pre);
                break;
            }
            case LayerKind::fc: {
                Tensor pre = fully_connected(x, m.weight(s.name + ".weight"),
                                             m.weight(s.name + ".bias"));
                x = hooks ? hooks->feature(s.name, std::move(pre)) : std::move(pre);
                break;
            }
            case LayerKind::relu: x = relu(x); break;
            case LayerKind::maxpool: x = maxpool2d(x, s.pool, s.pool); break;
            case LayerKind::flatten: x = flatten(x); break;
        }
    }
    return x;
}

TrainResult train(Model& m, const LabeledImageSet& train_set, const LabeledImageSet& test_set,
                  const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate < 0.0f)
        throw std::invalid_argument("train: bad config");
    if (train_set.num_classes != m.num_classes)
        throw std::invalid_argument("train: dataset class count does not match model");

    const auto names = m.parameter_names();
    for (const auto& name : names) m.set_weight(name, m.weight(name).clone_leaf(true));
    std::map<std::string, std::vector<float>> velocity;
    for (const auto& name : names) velocity[name].assign(m.weight(name).numel(), 0.0f);

    const int n = train_set.size();
    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, Purpose::train_shuffle, static_cast<uint64_t>(epoch));
        std::vector<int> order = shuffle_rng.permutation(n);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            std::vector<float> xdata;
            xdata.reserve(static_cast<size_t>(bsz) * train_set.images.numel() /
                          static_cast<size_t>(n));
            std::vector<int> ydata(static_cast<size_t>(bsz));
            const size_t img_elems = train_set.images.numel() / static_cast<size_t>(n);
            for (int i = 0; i < bsz; ++i) {
                const int idx = order[static_cast<size_t>(start + i)];
                const float* src = train_set.images.data() + static_cast<size_t>(idx) * img_elems;
                xdata.insert(xdata.end(), src, src + img_elems);
                ydata[static_cast<size_t>(i)] = train_set.true_labels[static_cast<size_t>(idx)];
            }
            Tensor x = Tensor::from_data(
                {bsz, m.in_c, m.in_h, m.in_w}, std::move(xdata));
            Tensor loss = softmax_cross_entropy(forward(m, x), ydata);
            if (!std::isfinite(loss.item()))
                throw std::runtime_error("train: loss diverged (non-finite)");
            epoch_loss += loss.item();
            ++batches;
            backward(loss);

            for (const auto& name : names) {
                const Tensor& w = m.weight(name);
                if (!w.has_grad()) continue;
                const std::vector<float>& g = w.grad();
                std::vector<float>& v = velocity[name];
                float* wd = w.impl()->data.data();
                for (size_t i = 0; i < g.size(); ++i) {
                    const float grad = g[i] + cfg.weight_decay * wd[i];
                    v[i] = cfg.momentum * v[i] + grad;
                    wd[i] -= cfg.learning_rate * v[i];
                }
                const_cast<Tensor&>(w).zero_grad();
            }
        }
        result.epoch_mean_loss.push_back(static_cast<float>(epoch_loss / batches));
    }

    for (const auto& name : names) m.set_weight(name, m.weight(name).clone_leaf(false));
    result.test_accuracy = evaluate_accuracy(m, test_set);
    return result;
}

float evaluate_accuracy(const Model& m, const LabeledImageSet& set, int batch_size) {
    NoGradGuard ng;
    const int n = set.size();
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int bsz = std::min(batch_size, n - start);
        Tensor logits = forward(m, set.slice(start, bsz));
        std::vector<int> pred = argmax_rows(logits);
        for (int i = 0; i < bsz; ++i) {
            if (pred[static_cast<size_t>(i)] == set.true_labels[static_cast<size_t>(start + i)])
                ++correct;
        }
    }
    return n > 0 ? static_cast<float>(correct) / static_cast<float>(n) : 0.0f;
}

void save_weights(const Model& m, const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    tensors.emplace_back("__meta__",
                         Tensor::from_data({5}, {static_cast<float>(static_cast<int>(m.arch)),
                                                 static_cast<float>(m.in_c),
                                                 static_cast<float>(m.in_h),
                                                 static_cast<float>(m.in_w),
                                                 static_cast<float>(m.num_classes)}));
    for (const auto& name : m.parameter_names()) tensors.emplace_back(name, m.weight(name));
    io::write_tensors(path, tensors);
}

Model load_weights(const std::string& path) {
    auto tensors = io::read_tensors(path);
    if (tensors.empty() || tensors[0].first != "__meta__" || tensors[0].second.numel() != 5)
        throw std::runtime_error("weight file missing model metadata");
    const auto& meta = tensors[0].second.values();
    const int arch_idx = static_cast<int>(meta[0]);
    if (arch_idx < 0 || arch_idx > 3) throw std::runtime_error("weight file has unknown arch id");
    Model m = build_model(static_cast<ArchId>(arch_idx), static_cast<int>(meta[1]),
                          static_cast<int>(meta[2]), static_cast<int>(meta[3]),
                          static_cast<int>(meta[4]), 0);
    const auto names = m.parameter_names();
    if (tensors.size() != names.size() + 1)
        throw std::runtime_error("weight file tensor count mismatch");
    for (size_t i = 0; i < names.size(); ++i) {
        if (tensors[i + 1].first != names[i])
            throw std::runtime_error("weight file tensor order mismatch at " + tensors[i + 1].first);
        m.set_weight(names[i], tensors[i + 1].second);
    }
    return m;
}

}  // namespace cfmlab
