#include <doctest.h>

#include <cmath>
#include <vector>

#include "cfmlab/rng.hpp"
#include "cfmlab/tensor.hpp"

using namespace cfmlab;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Rng rng(seed);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform_float(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("conv2d basic arithmetic") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0f);

    // identity 1x1 kernel passes input through
    Tensor xr = random_tensor({2, 1, 4, 4}, 7);
    Tensor wi = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    Tensor yi = conv2d(xr, wi, Tensor::zeros({1}), 1, 0);
    CHECK(yi.values() == xr.values());
}

TEST_CASE("conv2d shape errors") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({3, 1, 3, 3});  // channel mismatch
    CHECK_THROWS_AS(conv2d(x, w, Tensor::zeros({3}), 1, 0), std::invalid_argument);
    Tensor w2 = Tensor::zeros({3, 2, 9, 9});  // kernel larger than padded input
    CHECK_THROWS_AS(conv2d(x, w2, Tensor::zeros({3}), 1, 1), std::invalid_argument);
    Tensor w3 = Tensor::zeros({3, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w3, Tensor::zeros({4}), 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, w3, Tensor::zeros({3}), 0, 0), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
    Tensor x = random_tensor({2, 2, 5, 5}, 21);
    Tensor w = random_tensor({3, 2, 3, 3}, 22);
    Tensor b = random_tensor({3}, 23);
    Tensor probe = random_tensor({2, 3, 3, 3}, 24);  // random weighting of outputs

    auto fx = [&](const Tensor& t) { return sum_all(mul(conv2d(t, w, b, 1, 0), probe)); };
    CHECK(grad_check(fx, x, 1e-3f) <= 1e-3);

    auto fw = [&](const Tensor& t) { return sum_all(mul(conv2d(x, t, b, 1, 0), probe)); };
    CHECK(grad_check(fw, w, 1e-3f) <= 1e-3);

    auto fb = [&](const Tensor& t) { return sum_all(mul(conv2d(x, w, t, 1, 0), probe)); };
    CHECK(grad_check(fb, b, 1e-3f) <= 1e-3);

    // strided + padded variant
    auto fs = [&](const Tensor& t) { return sum_all(mul(conv2d(t, w, b, 2, 1), conv2d(t, w, b, 2, 1))); };
    CHECK(grad_check(fs, x, 1e-3f) <= 1e-3);
}

TEST_CASE("fully_connected forward and gradients") {
    // identity weight keeps input
    Tensor x = random_tensor({3, 4}, 31);
    std::vector<float> eye(16, 0.0f);
    for (int i = 0; i < 4; ++i) eye[static_cast<size_t>(i) * 4 + i] = 1.0f;
    Tensor w = Tensor::from_data({4, 4}, std::move(eye));
    Tensor y = fully_connected(x, w, Tensor::zeros({4}));
    CHECK(y.values() == x.values());

    Tensor x2 = Tensor::from_data({1, 2}, {1.0f, 2.0f});
    Tensor w2 = Tensor::from_data({1, 2}, {3.0f, 4.0f});
    Tensor b2 = Tensor::from_data({1}, {5.0f});
    CHECK(fully_connected(x2, w2, b2).item() == 16.0f);

    Tensor xr = random_tensor({3, 5}, 32);
    Tensor wr = random_tensor({4, 5}, 33);
    Tensor br = random_tensor({4}, 34);
    Tensor probe = random_tensor({3, 4}, 35);
    auto fx = [&](const Tensor& t) { return sum_all(mul(fully_connected(t, wr, br), probe)); };
    CHECK(grad_check(fx, xr, 1e-3f) <= 1e-3);
    auto fw = [&](const Tensor& t) { return sum_all(mul(fully_connected(xr, t, br), probe)); };
    CHECK(grad_check(fw, wr, 1e-3f) <= 1e-3);

    CHECK_THROWS_AS(fully_connected(xr, random_tensor({4, 6}, 36), br), std::invalid_argument);
}

TEST_CASE("relu, maxpool, flatten, cross entropy") {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
    Tensor r = relu(x);
    CHECK(r.values() == std::vector<float>{0.0f, 0.0f, 2.0f});

    Tensor p = maxpool2d(Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
    CHECK(p.shape() == Shape{1, 1, 1, 1});
    CHECK(p.item() == 4.0f);

    Tensor f = flatten(Tensor::zeros({2, 3, 4, 4}));
    CHECK(f.shape() == Shape{2, 48});

    // uniform logits -> ln(N)
    const int n_classes = 7;
    Tensor logits = Tensor::full({2, n_classes}, 0.3f);
    Tensor loss = softmax_cross_entropy(logits, {0, 3});
    CHECK(loss.item() == doctest::Approx(std::log(static_cast<double>(n_classes))).epsilon(1e-6));

    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 7}), std::out_of_range);
}

TEST_CASE("relu subgradient at zero is zero") {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f}, true);
    Tensor y = sum_all(relu(x));
    backward(y);
    CHECK(x.grad() == std::vector<float>{0.0f, 0.0f, 1.0f});
}

TEST_CASE("maxpool ties break to first index") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {5.0f, 5.0f, 5.0f, 5.0f}, true);
    backward(sum_all(maxpool2d(x, 2, 2)));
    CHECK(x.grad() == std::vector<float>{1.0f, 0.0f, 0.0f, 0.0f});
}

TEST_CASE("backward basics") {
    // root = sum(x) -> grad all ones
    Tensor x = random_tensor({2, 3}, 41).clone_leaf(true);
    backward(sum_all(x));
    CHECK(x.grad() == std::vector<float>(6, 1.0f));

    // root = sum(x*x)/2 -> grad = x
    Tensor x2 = random_tensor({5}, 42).clone_leaf(true);
    backward(scale(sum_all(mul(x2, x2)), 0.5f));
    for (size_t i = 0; i < 5; ++i)
        CHECK(x2.grad()[i] == doctest::Approx(x2.values()[i]).epsilon(1e-6));

    // fan-out sums consumer contributions: y = sum(x) + sum(x*x)/2
    Tensor x3 = random_tensor({4}, 43).clone_leaf(true);
    Tensor y = add(sum_all(x3), scale(sum_all(mul(x3, x3)), 0.5f));
    backward(y);
    for (size_t i = 0; i < 4; ++i)
        CHECK(x3.grad()[i] == doctest::Approx(1.0 + x3.values()[i]).epsilon(1e-6));

    CHECK_THROWS_AS(backward(Tensor::zeros({3}, true)), std::invalid_argument);
}

TEST_CASE("grad_check oracle on known functions") {
    Tensor x = random_tensor({3, 4}, 51);
    CHECK(grad_check([](const Tensor& t) { return sum_all(t); }, x, 1e-3f) <= 1e-6);

    Tensor logits = random_tensor({4, 6}, 52, -2.0f, 2.0f);
    auto f = [](const Tensor& t) { return softmax_cross_entropy(t, {1, 0, 5, 3}); };
    CHECK(grad_check(f, logits, 1e-3f) <= 1e-4);
}

TEST_CASE("geometric ops") {
    // same-size resize is the identity
    Tensor x = random_tensor({1, 2, 6, 6}, 61, 0.0f, 1.0f);
    CHECK(bilinear_resize(x, 6, 6).values() == x.values());

    // resize backward vs finite differences
    Tensor xs = random_tensor({1, 1, 5, 5}, 62, 0.0f, 1.0f);
    Tensor probe = random_tensor({1, 1, 8, 8}, 63);
    auto fr = [&](const Tensor& t) { return sum_all(mul(bilinear_resize(t, 8, 8), probe)); };
    CHECK(grad_check(fr, xs, 1e-3f) <= 1e-3);

    // pad places the block and routes gradients back
    Tensor p = pad_image(Tensor::full({1, 1, 2, 2}, 3.0f), 1, 2, 4, 5);
    CHECK(p.shape() == Shape{1, 1, 4, 5});
    CHECK(p.at({0, 0, 0, 0}) == 0.0f);
    CHECK(p.at({0, 0, 1, 2}) == 3.0f);
    CHECK(p.at({0, 0, 2, 3}) == 3.0f);
    Tensor xp = random_tensor({1, 1, 3, 3}, 64).clone_leaf(true);
    backward(sum_all(pad_image(xp, 2, 2, 8, 8)));
    CHECK(xp.grad() == std::vector<float>(9, 1.0f));

    // batch_mix: x_i + w * x_perm(i)
    Tensor bm = Tensor::from_data({2, 2}, {1.0f, 2.0f, 10.0f, 20.0f});
    Tensor mixed = batch_mix(bm, {1, 0}, 0.5f);
    CHECK(mixed.values() == std::vector<float>{6.0f, 12.0f, 10.5f, 21.0f});
    Tensor bx = random_tensor({3, 4}, 65).clone_leaf(true);
    Tensor bprobe = random_tensor({3, 4}, 66);
    auto fb = [&](const Tensor& t) { return sum_all(mul(batch_mix(t, {2, 0, 1}, 0.3f), bprobe)); };
    CHECK(grad_check(fb, bx, 1e-3f) <= 1e-3);
}

TEST_CASE("non-finite values are rejected") {
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::numeric_limits<float>::infinity()}),
                    std::runtime_error);
    Tensor big = Tensor::full({2}, 3e38f);
    CHECK_THROWS_AS(add(big, big), std::runtime_error);
}

TEST_CASE("forward determinism") {
    Tensor x = random_tensor({2, 3, 8, 8}, 71);
    Tensor w = random_tensor({4, 3, 3, 3}, 72);
    Tensor b = random_tensor({4}, 73);
    Tensor y1 = conv2d(x, w, b, 1, 1);
    Tensor y2 = conv2d(x, w, b, 1, 1);
    CHECK(y1.values() == y2.values());
}

TEST_CASE("no-grad guard skips tape recording") {
    Tensor x = random_tensor({3}, 81).clone_leaf(true);
    {
        NoGradGuard ng;
        Tensor y = sum_all(x);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y2 = sum_all(x);
    CHECK(y2.requires_grad());
}
