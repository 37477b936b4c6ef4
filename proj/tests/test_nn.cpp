#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cfmlab/data.hpp"
#include "cfmlab/nn.hpp"
#include "cfmlab/rng.hpp"

using namespace cfmlab;

namespace {

Tensor random_batch(int b, int c, int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(b) * c * h * w);
    for (auto& x : v) x = rng.uniform_float(0.0f, 1.0f);
    return Tensor::from_data({b, c, h, w}, std::move(v));
}

struct RecordingHooks : ForwardHooks {
    std::vector<std::string> seen;
    Tensor feature(const std::string& name, Tensor pre) override {
        seen.push_back(name);
        return pre;
    }
};

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_model determinism and structure") {
    Model a1 = build_model(ArchId::tinyA, 3, 32, 32, 10, 1);
    Model a2 = build_model(ArchId::tinyA, 3, 32, 32, 10, 1);
    for (const auto& name : a1.parameter_names())
        CHECK(a1.weight(name).values() == a2.weight(name).values());

    Model a3 = build_model(ArchId::tinyA, 3, 32, 32, 10, 2);
    CHECK(a1.weight("conv1.weight").values() != a3.weight("conv1.weight").values());

    Model b = build_model(ArchId::tinyB, 3, 32, 32, 10, 1);
    CHECK(a1.specs.size() != b.specs.size());

    CHECK_THROWS_AS(build_model(ArchId::tinyA, 3, 8, 8, 10, 1), std::invalid_argument);
}

TEST_CASE("zero image produces the final bias vector") {
    for (ArchId arch : {ArchId::tinyA, ArchId::tinyB, ArchId::tinyC, ArchId::tinyD}) {
        Model m = build_model(arch, 3, 32, 32, 10, 5);
        Tensor logits = forward(m, Tensor::zeros({1, 3, 32, 32}));
        const std::string final_fc = m.specs.back().name;  // every arch ends with a fc layer
        const Tensor& bias = m.weight(final_fc + ".bias");
        for (int i = 0; i < 10; ++i) CHECK(logits.at({0, i}) == bias.at({i}));
    }
}

TEST_CASE("zoo exercises the area rule in both directions") {
    for (ArchId arch : {ArchId::tinyA, ArchId::tinyB, ArchId::tinyC, ArchId::tinyD}) {
        Model m = build_model(arch, 3, 32, 32, 10, 5);
        const int limit = (32 * 32) / 16;
        int small = 0, large = 0, convs = 0;
        for (const auto& ls : layer_output_shapes(m)) {
            if (ls.kind != LayerKind::conv) continue;
            ++convs;
            (ls.h * ls.w <= limit ? small : large)++;
        }
        CHECK(small >= 1);
        CHECK(large >= 1);
        CHECK(convs >= 3);
    }
}

TEST_CASE("hooked forward matches plain forward") {
    Model m = build_model(ArchId::tinyB, 3, 32, 32, 10, 3);
    Tensor x = random_batch(2, 3, 32, 32, 42);
    Tensor plain = forward(m, x);

    RecordingHooks hooks;
    Tensor hooked = forward(m, x, &hooks);
    CHECK(plain.values() == hooked.values());
    // all conv and fc layers offered, in order
    CHECK(hooks.seen == std::vector<std::string>{"conv1", "conv2", "conv3", "conv4", "fc1", "fc2"});

    struct ZeroFinal : ForwardHooks {
        Tensor feature(const std::string& name, Tensor pre) override {
            if (name == "fc2") return Tensor::zeros(pre.shape());
            return pre;
        }
    } zero_final;
    Tensor zeroed = forward(m, x, &zero_final);
    for (float v : zeroed.values()) CHECK(v == 0.0f);
}

TEST_CASE("forward rejects shape mismatch") {
    Model m = build_model(ArchId::tinyA, 3, 32, 32, 10, 3);
    CHECK_THROWS_AS(forward(m, Tensor::zeros({1, 3, 16, 16})), std::invalid_argument);
    CHECK_THROWS_AS(forward(m, Tensor::zeros({1, 1, 32, 32})), std::invalid_argument);
}

TEST_CASE("training reaches accuracy on separable data and is deterministic") {
    LabeledImageSet train_set = make_synthetic(4, 150, {3, 32, 32}, 77);
    LabeledImageSet test_set = make_synthetic(4, 40, {3, 32, 32}, 77, 1000);

    Model m = build_model(ArchId::tinyA, 3, 32, 32, 4, 11);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 32;
    tc.learning_rate = 0.05f;
    tc.seed = 11;
    TrainResult res = train(m, train_set, test_set, tc);
    CHECK(res.test_accuracy >= 0.90f);

    Model m2 = build_model(ArchId::tinyA, 3, 32, 32, 4, 11);
    TrainResult res2 = train(m2, train_set, test_set, tc);
    CHECK(res2.test_accuracy == res.test_accuracy);
    for (const auto& name : m.parameter_names())
        CHECK(m.weight(name).values() == m2.weight(name).values());
}

TEST_CASE("zero learning rate leaves weights bitwise unchanged") {
    LabeledImageSet train_set = make_synthetic(4, 20, {3, 32, 32}, 78);
    Model m = build_model(ArchId::tinyA, 3, 32, 32, 4, 12);
    std::map<std::string, std::vector<float>> before;
    for (const auto& name : m.parameter_names()) before[name] = m.weight(name).values();

    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.learning_rate = 0.0f;
    tc.seed = 12;
    train(m, train_set, train_set, tc);
    for (const auto& name : m.parameter_names())
        CHECK(m.weight(name).values() == before[name]);
}

TEST_CASE("weight files round trip byte-identically") {
    Model m = build_model(ArchId::tinyC, 3, 32, 32, 10, 9);
    const std::string p1 = temp_path("cfmlab_w1.cfmw");
    const std::string p2 = temp_path("cfmlab_w2.cfmw");
    save_weights(m, p1);
    Model loaded = load_weights(p1);
    save_weights(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    Tensor x = random_batch(2, 3, 32, 32, 5);
    CHECK(forward(m, x).values() == forward(loaded, x).values());
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("weight file error cases are distinct") {
    Model m = build_model(ArchId::tinyA, 3, 32, 32, 10, 9);
    const std::string path = temp_path("cfmlab_w3.cfmw");
    save_weights(m, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    // corrupt magic
    {
        std::string bad = bytes;
        bad[0] = 'X';
        const std::string p = temp_path("cfmlab_bad_magic.cfmw");
        std::ofstream(p, std::ios::binary) << bad;
        CHECK_THROWS_WITH_AS(load_weights(p), doctest::Contains("bad magic"), std::runtime_error);
        std::filesystem::remove(p);
    }
    // version mismatch
    {
        std::string bad = bytes;
        bad[4] = 9;
        const std::string p = temp_path("cfmlab_bad_version.cfmw");
        std::ofstream(p, std::ios::binary) << bad;
        CHECK_THROWS_WITH_AS(load_weights(p), doctest::Contains("version mismatch"),
                             std::runtime_error);
        std::filesystem::remove(p);
    }
    // truncation mid-tensor
    {
        std::string bad = bytes.substr(0, bytes.size() / 2);
        const std::string p = temp_path("cfmlab_truncated.cfmw");
        std::ofstream(p, std::ios::binary) << bad;
        CHECK_THROWS_WITH_AS(load_weights(p), doctest::Contains("truncated"), std::runtime_error);
        std::filesystem::remove(p);
    }
    std::filesystem::remove(path);
}
