#include "cfmlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cfmlab/io.hpp"
#include "cfmlab/rng.hpp"

namespace cfmlab {

Tensor LabeledImageSet::image(int i) const { return slice(i, 1); }

Tensor LabeledImageSet::slice(int first, int count) const {
    const int n = size();
    if (first < 0 || count < 1 || first + count > n)
        throw std::out_of_range("LabeledImageSet::slice out of range");
    const size_t elems = images.numel() / static_cast<size_t>(n);
    std::vector<float> out(images.data() + static_cast<size_t>(first) * elems,
                           images.data() + static_cast<size_t>(first + count) * elems);
    Shape s = images.shape();
    s[0] = count;
    return Tensor::from_data(std::move(s), std::move(out));
}

// ---- CIFAR-10 binary ----

namespace {

constexpr size_t kCifarRecord = 3073;  // 1 label byte + 3*32*32 pixels

void load_cifar_file(const std::string& path, std::vector<float>& pixels,
                     std::vector<int>& labels) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open CIFAR-10 batch: " + path);
    const auto file_size = static_cast<size_t>(in.tellg());
    if (file_size == 0 || file_size % kCifarRecord != 0)
        throw std::runtime_error("malformed batch: " + path + " has size " +
                                 std::to_string(file_size) + ", not a multiple of 3073");
    in.seekg(0);
    const size_t records = file_size / kCifarRecord;
    std::vector<unsigned char> rec(kCifarRecord);
    for (size_t r = 0; r < records; ++r) {
        in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kCifarRecord));
        if (static_cast<size_t>(in.gcount()) != kCifarRecord)
            throw std::runtime_error("truncated CIFAR-10 batch: " + path);
        if (rec[0] > 9) throw std::runtime_error("malformed batch: label byte out of range");
        labels.push_back(static_cast<int>(rec[0]));
        for (size_t i = 1; i < kCifarRecord; ++i)
            pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
}

}  // namespace

LabeledImageSet load_cifar10_binary(const std::string& dir_path, const std::string& split) {
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i)
            files.push_back(dir_path + "/data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test") {
        files.push_back(dir_path + "/test_batch.bin");
    } else {
        throw std::invalid_argument("load_cifar10_binary: split must be 'train' or 'test'");
    }
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& f : files) load_cifar_file(f, pixels, labels);

    LabeledImageSet set;
    set.num_classes = 10;
    const int n = static_cast<int>(labels.size());
    set.images = Tensor::from_data({n, 3, 32, 32}, std::move(pixels));
    set.true_labels = std::move(labels);
    return set;
}

// ---- synthetic dataset ----

namespace {

struct ClassPattern {
    struct Wave {
        double fx, fy, phase, amp;
        double cw[8];  // per-channel weight
    };
    std::vector<Wave> waves;
    double bx, by, radius, blob_amp;
    double blob_cw[8];
};

ClassPattern make_pattern(int cls, int channels, uint64_t seed, double signal) {
    Rng rng(seed, Purpose::data_pattern, static_cast<uint64_t>(cls));
    ClassPattern p;
    for (int k = 0; k < 3; ++k) {
        ClassPattern::Wave w;
        w.fx = rng.uniform() * 3.0 + 0.5;
        w.fy = rng.uniform() * 3.0 + 0.5;
        w.phase = rng.uniform() * 6.283185307179586;
        w.amp = signal * (0.05 + rng.uniform() * 0.08);
        for (int c = 0; c < channels && c < 8; ++c) w.cw[c] = rng.uniform() * 1.4 - 0.2;
        p.waves.push_back(w);
    }
    p.bx = 0.2 + rng.uniform() * 0.6;
    p.by = 0.2 + rng.uniform() * 0.6;
    p.radius = 0.10 + rng.uniform() * 0.12;
    p.blob_amp = (rng.bernoulli(0.5) ? 1.0 : -1.0) * signal * (0.18 + rng.uniform() * 0.12);
    for (int c = 0; c < channels && c < 8; ++c) p.blob_cw[c] = 0.4 + rng.uniform() * 0.6;
    return p;
}

}  // namespace

LabeledImageSet make_synthetic(int num_classes, int per_class, const Shape& chw, uint64_t seed,
                               uint64_t sample_offset, double noise_sigma, double signal_scale) {
    if (num_classes < 4) throw std::invalid_argument("make_synthetic: need at least 4 classes");
    if (chw.size() != 3) throw std::invalid_argument("make_synthetic: shape must be {C,H,W}");
    const int C = chw[0], H = chw[1], W = chw[2];
    if (C < 1 || C > 8) throw std::invalid_argument("make_synthetic: channels must be 1..8");

    // two sub-templates per class; each image draws one, so classes are
    // multimodal the way natural image classes are
    constexpr int kModes = 2;
    std::vector<ClassPattern> patterns;
    for (int c = 0; c < num_classes; ++c)
        for (int mo = 0; mo < kModes; ++mo)
            patterns.push_back(make_pattern(c * kModes + mo, C, seed, signal_scale));

    const int n = num_classes * per_class;
    std::vector<float> pixels(static_cast<size_t>(n) * C * H * W);
    std::vector<int> labels(static_cast<size_t>(n));

    size_t px = 0;
    for (int cls = 0; cls < num_classes; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            const int img = cls * per_class + i;
            labels[static_cast<size_t>(img)] = cls;
            const uint64_t draw_id =
                static_cast<uint64_t>(cls) * 1000000ULL + sample_offset + static_cast<uint64_t>(i);
            Rng rng(seed, Purpose::data_sample, draw_id);
            const int mode = static_cast<int>(rng.uniform_int(kModes));
            const ClassPattern& p = patterns[static_cast<size_t>(cls * kModes + mode)];
            const double brightness = rng.uniform() * 0.10 - 0.05;
            for (int ch = 0; ch < C; ++ch) {
                for (int y = 0; y < H; ++y) {
                    for (int x = 0; x < W; ++x, ++px) {
                        const double u = static_cast<double>(x) / W;
                        const double v = static_cast<double>(y) / H;
                        double val = 0.5 + brightness;
                        for (const auto& w : p.waves) {
                            val += w.amp * w.cw[ch] *
                                   std::sin(6.283185307179586 * (w.fx * u + w.fy * v) + w.phase);
                        }
                        const double dx = u - p.bx, dy = v - p.by;
                        val += p.blob_amp * p.blob_cw[ch] *
                               std::exp(-(dx * dx + dy * dy) / (2.0 * p.radius * p.radius));
                        val += noise_sigma * rng.normal();
                        pixels[px] = static_cast<float>(std::clamp(val, 0.0, 1.0));
                    }
                }
            }
        }
    }

    LabeledImageSet set;
    set.num_classes = num_classes;
    set.images = Tensor::from_data({n, C, H, W}, std::move(pixels));
    set.true_labels = std::move(labels);
    return set;
}

void assign_targets(LabeledImageSet& set, uint64_t seed) {
    if (set.num_classes < 2) throw std::invalid_argument("assign_targets: need >= 2 classes");
    Rng rng(seed, Purpose::target_assign);
    const int n = set.size();
    set.target_labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(set.num_classes - 1)));
        if (t >= set.true_labels[static_cast<size_t>(i)]) ++t;
        set.target_labels[static_cast<size_t>(i)] = t;
    }
}

LabeledImageSet stratified_sample(const LabeledImageSet& set, int per_class, uint64_t seed) {
    Rng rng(seed, Purpose::stratified_sample);
    std::vector<std::vector<int>> by_class(static_cast<size_t>(set.num_classes));
    for (int i = 0; i < set.size(); ++i)
        by_class[static_cast<size_t>(set.true_labels[static_cast<size_t>(i)])].push_back(i);

    std::vector<int> chosen;
    for (int c = 0; c < set.num_classes; ++c) {
        auto& pool = by_class[static_cast<size_t>(c)];
        if (static_cast<int>(pool.size()) < per_class)
            throw std::runtime_error("stratified_sample: class " + std::to_string(c) +
                                     " has only " + std::to_string(pool.size()) + " images");
        std::vector<int> perm = rng.permutation(static_cast<int>(pool.size()));
        for (int i = 0; i < per_class; ++i)
            chosen.push_back(pool[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    }

    LabeledImageSet out;
    out.num_classes = set.num_classes;
    const size_t elems = set.images.numel() / static_cast<size_t>(set.size());
    std::vector<float> pixels;
    pixels.reserve(chosen.size() * elems);
    for (int idx : chosen) {
        const float* src = set.images.data() + static_cast<size_t>(idx) * elems;
        pixels.insert(pixels.end(), src, src + elems);
        out.true_labels.push_back(set.true_labels[static_cast<size_t>(idx)]);
        if (!set.target_labels.empty())
            out.target_labels.push_back(set.target_labels[static_cast<size_t>(idx)]);
    }
    Shape s = set.images.shape();
    s[0] = static_cast<int>(chosen.size());
    out.images = Tensor::from_data(std::move(s), std::move(pixels));
    return out;
}

void save_set(const LabeledImageSet& set, const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    tensors.emplace_back("images", set.images);
    std::vector<float> tl(set.true_labels.begin(), set.true_labels.end());
    tensors.emplace_back("true_labels", Tensor::from_data({set.size()}, std::move(tl)));
    if (!set.target_labels.empty()) {
        std::vector<float> gl(set.target_labels.begin(), set.target_labels.end());
        tensors.emplace_back("target_labels", Tensor::from_data({set.size()}, std::move(gl)));
    }
    tensors.emplace_back("num_classes",
                         Tensor::from_data({1}, {static_cast<float>(set.num_classes)}));
    io::write_tensors(path, tensors);
}

LabeledImageSet load_set(const std::string& path) {
    LabeledImageSet set;
    for (auto& [name, t] : io::read_tensors(path)) {
        if (name == "images") {
            set.images = std::move(t);
        } else if (name == "true_labels") {
            set.true_labels.assign(t.data(), t.data() + t.numel());
        } else if (name == "target_labels") {
            set.target_labels.assign(t.data(), t.data() + t.numel());
        } else if (name == "num_classes") {
            set.num_classes = static_cast<int>(t.item());
        }
    }
    if (!set.images.defined() || set.true_labels.empty() || set.num_classes == 0)
        throw std::runtime_error("dataset file missing required tensors: " + path);
    if (set.true_labels.size() != static_cast<size_t>(set.size()))
        throw std::runtime_error("dataset file label count mismatch: " + path);
    for (size_t i = 0; i < set.true_labels.size(); ++i) {
        if (set.true_labels[i] < 0 || set.true_labels[i] >= set.num_classes)
            throw std::runtime_error("dataset file has out-of-range labels: " + path);
        if (!set.target_labels.empty() && set.target_labels[i] == set.true_labels[i])
            throw std::runtime_error("dataset file has target == true label: " + path);
    }
    return set;
}

}  // namespace cfmlab
