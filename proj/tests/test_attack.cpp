#include <doctest.h>

#include <cmath>

#include "cfmlab/attack.hpp"
#include "cfmlab/rng.hpp"

using namespace cfmlab;

namespace {

Tensor random_batch(int b, int c, int h, int w, uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(b) * c * h * w);
    for (auto& x : v) x = rng.uniform_float(lo, hi);
    return Tensor::from_data({b, c, h, w}, std::move(v));
}

// flatten -> fc classifier; logits are a pure linear map of the pixels
Model linear_model(int c, int h, int w, int classes, uint64_t seed) {
    Model m;
    m.arch = ArchId::tinyA;
    m.in_c = c;
    m.in_h = h;
    m.in_w = w;
    m.num_classes = classes;
    m.specs.push_back({LayerKind::flatten, "flatten"});
    LayerSpec fc;
    fc.kind = LayerKind::fc;
    fc.name = "fc1";
    fc.hookable = true;
    fc.width = classes;
    m.specs.push_back(fc);
    Rng rng(seed);
    const int d = c * h * w;
    std::vector<float> wdata(static_cast<size_t>(classes) * d);
    for (auto& v : wdata) v = rng.uniform_float(-0.5f, 0.5f);
    std::vector<float> bdata(static_cast<size_t>(classes));
    for (auto& v : bdata) v = rng.uniform_float(-0.1f, 0.1f);
    m.weights.emplace("fc1.weight", Tensor::from_data({classes, d}, std::move(wdata)));
    m.weights.emplace("fc1.bias", Tensor::from_data({classes}, std::move(bdata)));
    return m;
}

AttackConfig bare_config(int iterations) {
    AttackConfig cfg;
    cfg.iterations = iterations;
    cfg.mi_enabled = false;
    cfg.transform.ti_enabled = false;
    return cfg;
}

}  // namespace

TEST_CASE("logit loss definition") {
    Tensor logits = Tensor::from_data({1, 3}, {1.0f, 2.0f, 3.0f});
    CHECK(logit_loss(logits, {2}).item() == -3.0f);

    // adding a constant to all logits shifts the loss by -c
    Tensor shifted = Tensor::from_data({1, 3}, {1.5f, 2.5f, 3.5f});
    CHECK(logit_loss(shifted, {2}).item() == doctest::Approx(-3.5f));

    // gradient is -1/B at the target logit, 0 elsewhere
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    backward(logit_loss(x, {2, 0}));
    CHECK(x.grad() == std::vector<float>{0, 0, -0.5f, -0.5f, 0, 0});

    CHECK_THROWS_AS(logit_loss(logits, {3}), std::out_of_range);
}

TEST_CASE("fgsm step uses only the gradient sign") {
    Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.5f, 0.5f});
    Tensor zero_g = Tensor::zeros({1, 1, 1, 2});
    CHECK(fgsm_step(x, zero_g, 2.0 / 255.0).values() == x.values());

    Tensor g = Tensor::from_data({1, 1, 1, 2}, {1.0f, -3.0f});
    Tensor stepped = fgsm_step(x, g, 2.0 / 255.0);
    CHECK(stepped.at({0, 0, 0, 0}) == 0.5f - 2.0f / 255.0f);
    CHECK(stepped.at({0, 0, 0, 1}) == 0.5f + 2.0f / 255.0f);

    Tensor g_scaled = Tensor::from_data({1, 1, 1, 2}, {100.0f, -300.0f});
    CHECK(fgsm_step(x, g_scaled, 2.0 / 255.0).values() == stepped.values());
}

TEST_CASE("projection clamps to the epsilon box and pixel range") {
    const double eps = 16.0 / 255.0;
    Tensor clean = Tensor::from_data({1, 1, 1, 3}, {0.5f, 0.01f, 0.5f});
    Tensor x = Tensor::from_data({1, 1, 1, 3}, {0.9f, -0.2f, 0.52f});
    Tensor p = project(x, clean, eps);
    CHECK(p.at({0, 0, 0, 0}) == 0.5f + 16.0f / 255.0f);
    CHECK(p.at({0, 0, 0, 1}) == 0.0f);  // max(0.01 - eps, 0)
    CHECK(p.at({0, 0, 0, 2}) == 0.52f);  // already inside both boxes
}

TEST_CASE("momentum update normalizes per image") {
    Tensor g0 = Tensor::zeros({2, 1, 1, 2});
    Tensor ghat = Tensor::from_data({2, 1, 1, 2}, {1.0f, -3.0f, 2.0f, 2.0f});

    // mu = 0 is memoryless: ghat / ||ghat||_1 per image
    Tensor m0 = mi_update(g0, ghat, 0.0);
    CHECK(m0.at({0, 0, 0, 0}) == doctest::Approx(0.25f));
    CHECK(m0.at({0, 0, 0, 1}) == doctest::Approx(-0.75f));
    CHECK(m0.at({1, 0, 0, 0}) == doctest::Approx(0.5f));

    // constant ghat with mu = 1 accumulates t * ghat/||ghat||
    Tensor acc = Tensor::zeros({2, 1, 1, 2});
    for (int t = 0; t < 4; ++t) acc = mi_update(acc, ghat, 1.0);
    CHECK(acc.at({0, 0, 0, 0}) == doctest::Approx(4.0f * 0.25f));

    // sign is invariant to positive rescaling
    Tensor scaled = mi_update(g0, scale(ghat, 37.0f), 0.0);
    for (size_t i = 0; i < scaled.numel(); ++i)
        CHECK(std::signbit(scaled.values()[i]) == std::signbit(m0.values()[i]));

    // all-zero gradient skips normalization
    Tensor mz = mi_update(g0, Tensor::zeros({2, 1, 1, 2}), 0.5);
    CHECK(mz.values() == std::vector<float>(4, 0.0f));
}

TEST_CASE("aggregate gradient equals plain backward when transforms are off") {
    Model m = linear_model(1, 16, 16, 4, 3);
    Tensor x = random_batch(2, 1, 16, 16, 5);
    std::vector<int> targets{1, 3};

    AttackConfig cfg = bare_config(10);
    GradientEstimate est = aggregate_gradient(m, nullptr, x, targets, cfg, 1);

    Tensor leaf = x.clone_leaf(true);
    backward(logit_loss(forward(m, leaf), targets));
    CHECK(est.grad.values() == leaf.grad());
}

TEST_CASE("si gradient on a linear model averages to the target row") {
    // logit loss on a linear model: gradient of -(Wx+b)_t is -W_t at any
    // input, so the SI mean over {x, x/2} equals -W_t as well
    Model m = linear_model(1, 16, 16, 4, 7);
    Tensor x = random_batch(1, 1, 16, 16, 8);
    const int target = 2;

    AttackConfig cfg = bare_config(10);
    cfg.transform.si_enabled = true;
    cfg.transform.si_copies = 2;
    GradientEstimate est = aggregate_gradient(m, nullptr, x, {target}, cfg, 1);

    const Tensor& w = m.weight("fc1.weight");
    const int d = 16 * 16;
    for (int i = 0; i < d; ++i) {
        // si copy x/2 halves the chain derivative of the input, so the mean
        // over the two passes is -W_t * (1 + 0.5)/2
        const float expected = -w.values()[static_cast<size_t>(target) * d + i] * 0.75f;
        CHECK(est.grad.values()[static_cast<size_t>(i)] == doctest::Approx(expected).epsilon(1e-4));
    }
}

TEST_CASE("admix with zero weight reduces to the single-pass gradient") {
    Model m = linear_model(1, 16, 16, 4, 9);
    Tensor x = random_batch(4, 1, 16, 16, 10);
    std::vector<int> targets{0, 1, 2, 3};

    AttackConfig base = bare_config(10);
    GradientEstimate plain = aggregate_gradient(m, nullptr, x, targets, base, 1);

    AttackConfig mixed = base;
    mixed.transform.admix_enabled = true;
    mixed.transform.admix_weight = 0.0;
    mixed.transform.admix_rounds = 3;
    GradientEstimate est = aggregate_gradient(m, nullptr, x, targets, mixed, 1);
    CHECK(est.grad.values() == plain.grad.values());
}

TEST_CASE("vt variance is zero for beta 0 and for linear models") {
    Model m = linear_model(1, 16, 16, 4, 11);
    Tensor x = random_batch(2, 1, 16, 16, 12);
    std::vector<int> targets{1, 2};

    AttackConfig cfg = bare_config(10);
    cfg.transform.vt_enabled = true;
    GradientEstimate est = aggregate_gradient(m, nullptr, x, targets, cfg, 1);

    // beta = 0: all samples at x itself
    cfg.transform.vt_beta = 0.0;
    Tensor v0 = vt_variance_update(m, nullptr, x, targets, cfg, est.grad, 1);
    for (float v : v0.values()) CHECK(v == 0.0f);

    // linear model: the gradient is constant in x, so any beta gives 0
    cfg.transform.vt_beta = 1.5;
    Tensor v1 = vt_variance_update(m, nullptr, x, targets, cfg, est.grad, 1);
    for (float v : v1.values()) CHECK(std::abs(v) <= 1e-6f);
}

TEST_CASE("one-step attack on a linear model matches the analytic solution") {
    Model m = linear_model(1, 16, 16, 4, 13);
    Tensor x = random_batch(1, 1, 16, 16, 14, 0.2f, 0.8f);
    const int target = 1;

    AttackConfig cfg = bare_config(1);
    cfg.epsilon = 16.0 / 255.0;
    cfg.eta = 2.0 / 255.0;
    AttackResult res = run_attack(m, x, {target}, cfg);

    // gradient of the logit loss is -W_t, so the step is +eta*sign(W_t)
    const Tensor& w = m.weight("fc1.weight");
    const int d = 16 * 16;
    for (int i = 0; i < d; ++i) {
        const float wi = w.values()[static_cast<size_t>(target) * d + i];
        const float s = wi > 0.0f ? 1.0f : (wi < 0.0f ? -1.0f : 0.0f);
        float expect = x.values()[static_cast<size_t>(i)] + 2.0f / 255.0f * s;
        expect = std::min(std::max(expect, 0.0f), 1.0f);
        CHECK(res.x_adv.values()[static_cast<size_t>(i)] == expect);
    }
}

TEST_CASE("attack invariants: epsilon box, pixel range, determinism") {
    Model m = linear_model(1, 16, 16, 5, 15);
    Tensor x = random_batch(3, 1, 16, 16, 16);
    std::vector<int> targets{0, 2, 4};

    AttackConfig cfg = bare_config(8);
    cfg.mi_enabled = true;
    cfg.transform.ti_enabled = true;
    cfg.transform.rdi_enabled = true;
    cfg.seed = 99;
    AttackResult r1 = run_attack(m, x, targets, cfg);
    AttackResult r2 = run_attack(m, x, targets, cfg);
    CHECK(r1.x_adv.values() == r2.x_adv.values());
    CHECK(r1.trace.gradient_iterations() == 8);

    const float eps = 16.0f / 255.0f;
    for (size_t i = 0; i < x.numel(); ++i) {
        const float d = r1.x_adv.values()[i] - x.values()[i];
        CHECK(std::abs(d) <= eps + 1e-7f);
        CHECK(r1.x_adv.values()[i] >= 0.0f);
        CHECK(r1.x_adv.values()[i] <= 1.0f);
    }
}

TEST_CASE("budget accounting with and without cfm") {
    Model m = linear_model(1, 16, 16, 4, 17);
    Tensor x = random_batch(2, 1, 16, 16, 18);
    std::vector<int> targets{1, 2};

    // T = 1 with CFM: the storage pass consumes the whole budget
    AttackConfig cfg = bare_config(1);
    cfg.cfm = CfmConfig{};
    AttackResult res = run_attack(m, x, targets, cfg);
    CHECK(res.trace.gradient_iterations() == 0);
    CHECK(res.x_adv.values() == x.values());

    cfg.iterations = 5;
    CHECK(run_attack(m, x, targets, cfg).trace.gradient_iterations() == 4);

    AttackConfig no_cfm = bare_config(5);
    CHECK(run_attack(m, x, targets, no_cfm).trace.gradient_iterations() == 5);
}

TEST_CASE("epsilon zero returns the clean batch") {
    Model m = linear_model(1, 16, 16, 4, 19);
    Tensor x = random_batch(2, 1, 16, 16, 20);
    AttackConfig cfg = bare_config(3);
    cfg.epsilon = 0.0;
    cfg.eta = 2.0 / 255.0;
    AttackResult res = run_attack(m, x, {1, 2}, cfg);
    CHECK(res.x_adv.values() == x.values());
}

TEST_CASE("transform disable identities reduce to the simpler attack") {
    Model m = linear_model(1, 16, 16, 4, 21);
    Tensor x = random_batch(2, 1, 16, 16, 22);
    std::vector<int> targets{3, 0};

    AttackConfig base = bare_config(4);
    base.mi_enabled = true;
    base.transform.ti_enabled = true;
    base.seed = 5;
    const std::vector<float> baseline = run_attack(m, x, targets, base).x_adv.values();

    // DI with p = 0
    AttackConfig di = base;
    di.transform.di_enabled = true;
    di.transform.di_prob = 0.0;
    CHECK(run_attack(m, x, targets, di).x_adv.values() == baseline);

    // SI with m = 1
    AttackConfig si = base;
    si.transform.si_enabled = true;
    si.transform.si_copies = 1;
    CHECK(run_attack(m, x, targets, si).x_adv.values() == baseline);

    // Admix with w = 0 (single round)
    AttackConfig ad = base;
    ad.transform.admix_enabled = true;
    ad.transform.admix_weight = 0.0;
    ad.transform.admix_rounds = 1;
    CHECK(run_attack(m, x, targets, ad).x_adv.values() == baseline);

    // VT with beta = 0
    AttackConfig vt = base;
    vt.transform.vt_enabled = true;
    vt.transform.vt_beta = 0.0;
    CHECK(run_attack(m, x, targets, vt).x_adv.values() == baseline);

    // TI with kernel size 1
    AttackConfig no_ti = base;
    no_ti.transform.ti_enabled = false;
    AttackConfig ti1 = base;
    ti1.transform.ti_kernel_size = 1;
    CHECK(run_attack(m, x, targets, ti1).x_adv.values() ==
          run_attack(m, x, targets, no_ti).x_adv.values());

    // MI with mu = 0 against no-MI (unit normalization changes only scale)
    AttackConfig no_mi = base;
    no_mi.mi_enabled = false;
    AttackConfig mi0 = base;
    mi0.mi_mu = 0.0;
    CHECK(run_attack(m, x, targets, mi0).x_adv.values() ==
          run_attack(m, x, targets, no_mi).x_adv.values());

    // CFM with p = 0 against no CFM (both consume T-1... budget differs, so
    // compare against a baseline with one fewer iteration)
    AttackConfig cfm0 = base;
    cfm0.cfm = CfmConfig{};
    cfm0.cfm->mixing_prob = 0.0;
    AttackConfig shorter = base;
    shorter.iterations = 3;
    CHECK(run_attack(m, x, targets, cfm0).x_adv.values() ==
          run_attack(m, x, targets, shorter).x_adv.values());
}

TEST_CASE("config validation") {
    AttackConfig cfg;
    cfg.eta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.eta = 0.5;
    cfg.epsilon = 0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("evaluate_transfer counts target hits") {
    Model m = linear_model(1, 16, 16, 4, 23);
    Tensor x = random_batch(3, 1, 16, 16, 24);
    NoGradGuard ng;
    std::vector<int> pred = argmax_rows(forward(m, x));
    // targets equal to predictions -> all successes; complement -> none
    CHECK(evaluate_transfer(x, pred, m) == 3);
    std::vector<int> miss = pred;
    for (auto& p : miss) p = (p + 1) % 4;
    CHECK(evaluate_transfer(x, miss, m) == 0);
}
