#include <doctest.h>

#include <cmath>

#include "cfmlab/rng.hpp"
#include "cfmlab/tensor.hpp"
#include "cfmlab/transforms.hpp"

using namespace cfmlab;

namespace {

Tensor random_batch(int b, int c, int h, int w, uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(b) * c * h * w);
    for (auto& x : v) x = rng.uniform_float(lo, hi);
    return Tensor::from_data({b, c, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("di transform identity paths") {
    Tensor x = random_batch(2, 3, 16, 16, 1);
    TransformConfig cfg;
    cfg.di_enabled = true;

    cfg.di_prob = 0.0;
    Rng rng(7);
    CHECK(di_transform(x, cfg, rng).values() == x.values());

    // scale_max = 1 forces r == H and S == H: pure identity path
    cfg.di_prob = 1.0;
    cfg.di_scale_max = 1.0;
    Rng rng2(8);
    CHECK(di_transform(x, cfg, rng2).values() == x.values());
}

TEST_CASE("rdi transform geometry and determinism") {
    Tensor x = random_batch(2, 3, 16, 16, 2);
    TransformConfig cfg;
    cfg.rdi_enabled = true;
    cfg.rdi_scale_max = 340.0 / 299.0;

    Rng r1(33);
    Tensor a = rdi_transform(x, cfg, r1);
    CHECK(a.shape() == x.shape());

    Rng r2(33);  // same stream state -> identical output
    Tensor b = rdi_transform(x, cfg, r2);
    CHECK(a.values() == b.values());

    // pixel range preserved: resize-pad-shrink is a convex combination
    for (float v : a.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    cfg.rdi_scale_max = 1.0;
    Rng r3(34);
    CHECK(rdi_transform(x, cfg, r3).values() == x.values());

    Tensor rect = random_batch(1, 1, 8, 12, 3);
    Rng r4(35);
    CHECK_THROWS_AS(rdi_transform(rect, cfg, r4), std::invalid_argument);
}

TEST_CASE("si copies scale by powers of two") {
    Tensor ones = Tensor::full({2, 1, 2, 2}, 1.0f);
    auto copies = si_copies(ones, 3);
    REQUIRE(copies.size() == 3);
    CHECK(copies[0].values() == std::vector<float>(8, 1.0f));
    CHECK(copies[1].values() == std::vector<float>(8, 0.5f));
    CHECK(copies[2].values() == std::vector<float>(8, 0.25f));

    auto single = si_copies(ones, 1);
    REQUIRE(single.size() == 1);
    CHECK(single[0].values() == ones.values());

    // sum of copies equals x * (2 - 2^{1-m})
    Tensor x = random_batch(1, 2, 4, 4, 4);
    const int m = 4;
    auto cs = si_copies(x, m);
    const double factor = 2.0 - std::ldexp(1.0, 1 - m);
    for (size_t i = 0; i < x.numel(); ++i) {
        double s = 0.0;
        for (const auto& c : cs) s += c.values()[i];
        CHECK(s == doctest::Approx(factor * x.values()[i]).epsilon(1e-5));
    }
}

TEST_CASE("admix rounds add scaled shuffled images") {
    Tensor x = random_batch(4, 1, 3, 3, 5);

    Rng rng(9);
    Tensor zero_w = admix_round(x, 0.0, rng);
    CHECK(zero_w.values() == x.values());

    // mean over the batch is (1+w) * mean(x): permutations preserve sums
    Rng rng2(10);
    const double w = 0.2;
    Tensor mixed = admix_round(x, w, rng2);
    double mx = 0.0, mm = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
        mx += x.values()[i];
        mm += mixed.values()[i];
    }
    CHECK(mm == doctest::Approx((1.0 + w) * mx).epsilon(1e-5));

    Tensor tiny = random_batch(1, 1, 2, 2, 6);
    Rng rng3(11);
    CHECK_THROWS_AS(admix_round(tiny, 0.2, rng3), std::invalid_argument);
}

TEST_CASE("ti kernel is a normalized symmetric gaussian") {
    Tensor k1 = ti_kernel(1);
    CHECK(k1.shape() == Shape{1, 1});
    CHECK(k1.item() == 1.0f);

    Tensor k5 = ti_kernel(5);
    double total = 0.0;
    for (float v : k5.values()) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            CHECK(k5.at({i, j}) == k5.at({4 - i, j}));
            CHECK(k5.at({i, j}) == k5.at({i, 4 - j}));
        }
    }
    CHECK_THROWS_AS(ti_kernel(4), std::invalid_argument);
}

TEST_CASE("ti smoothing matches a brute-force convolution") {
    Tensor g = random_batch(1, 1, 7, 7, 12, -1.0f, 1.0f);
    Tensor k = ti_kernel(5);
    Tensor smoothed = ti_smooth(g, k);

    // independent double-loop oracle
    const int H = 7, W = 7, ks = 5, half = 2;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = 0; i < ks; ++i) {
                for (int j = 0; j < ks; ++j) {
                    const int yy = y + i - half, xx = x + j - half;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    acc += static_cast<double>(k.at({i, j})) *
                           static_cast<double>(g.at({0, 0, yy, xx}));
                }
            }
            CHECK(smoothed.at({0, 0, y, x}) == static_cast<float>(acc));
        }
    }
}

TEST_CASE("ti smoothing identity and border behavior") {
    Tensor g = random_batch(2, 3, 6, 6, 13, -1.0f, 1.0f);
    CHECK(ti_smooth(g, ti_kernel(1)).values() == g.values());

    Tensor flat = Tensor::full({1, 1, 8, 8}, 1.0f);
    Tensor sm = ti_smooth(flat, ti_kernel(5));
    // interior pixels see the whole kernel (sum 1); borders lose mass to
    // zero padding
    CHECK(sm.at({0, 0, 4, 4}) == doctest::Approx(1.0f).epsilon(1e-6));
    CHECK(sm.at({0, 0, 0, 0}) < 1.0f);
}

TEST_CASE("transform config validation") {
    TransformConfig cfg;
    cfg.ti_kernel_size = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.ti_kernel_size = 5;
    cfg.di_enabled = true;
    cfg.rdi_enabled = true;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.rdi_enabled = false;
    cfg.di_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
