#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "hbmc/params.hpp"
#include "test_util.hpp"

using namespace hbmc;

TEST_CASE("add_layer lays out weights then bias, contiguously") {
    NetworkParams p;
    int a = p.add_layer(3, 2, Activation::relu);
    int b = p.add_layer(1, 3, Activation::linear);
    CHECK(a == 0);
    CHECK(b == 1);
    CHECK(p.total_count() == 3 * 2 + 3 + 1 * 3 + 1);
    CHECK(p.w_off[0] == 0);
    CHECK(p.b_off[0] == 6);
    CHECK(p.w_off[1] == 9);
    CHECK(p.b_off[1] == 12);
    CHECK(p.w(1).size() == 3);
    CHECK(p.b(1).size() == 1);
    p.validate();
}

TEST_CASE("validate rejects malformed networks") {
    NetworkParams p;
    p.add_layer(2, 2, Activation::linear);
    p.values.pop_back();
    CHECK_THROWS_AS(p.validate(), StructuralError);

    NetworkParams q;
    q.add_layer(2, 2, Activation::linear);
    q.values[0] = std::nan("");
    CHECK_THROWS_AS(q.validate(), NumericalError);
}

TEST_CASE("He-uniform init: weights inside the fan-in bound, small positive bias") {
    NetworkParams p;
    p.add_layer(64, 24, Activation::relu);
    p.add_layer(2, 64, Activation::linear);
    Rng rng(99);
    init_he_uniform(p, rng);

    double bound0 = std::sqrt(6.0 / 24.0);
    double bound1 = std::sqrt(6.0 / 64.0);
    bool any_nonzero = false;
    for (double w : p.w(0)) {
        CHECK(std::abs(w) <= bound0);
        any_nonzero = any_nonzero || w != 0.0;
    }
    for (double w : p.w(1)) CHECK(std::abs(w) <= bound1);
    CHECK(any_nonzero);
    for (double b : p.b(0)) CHECK(b == 0.01);
    for (double b : p.b(1)) CHECK(b == 0.01);

    // Same seed, same draw sequence.
    NetworkParams q;
    q.add_layer(64, 24, Activation::relu);
    q.add_layer(2, 64, Activation::linear);
    Rng rng2(99);
    init_he_uniform(q, rng2);
    for (size_t i = 0; i < p.values.size(); ++i) CHECK(p.values[i] == q.values[i]);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint exactly") {
    CHECK(cosine_lr(5e-4, 0, 10000) == 5e-4);
    CHECK(cosine_lr(5e-4, 5000, 10000) == doctest::Approx(2.5e-4).epsilon(1e-15));
    CHECK(cosine_lr(5e-4, 10000, 10000) == 0.0);
    // Flat zero once past the horizon, never negative.
    CHECK(cosine_lr(5e-4, 20000, 10000) == 0.0);
    for (long t = 0; t <= 10000; t += 50) CHECK(cosine_lr(5e-4, t, 10000) >= 0.0);
    // Monotone decreasing over the horizon.
    double prev = cosine_lr(1e-3, 0, 1000);
    for (long t = 1; t <= 1000; ++t) {
        double cur = cosine_lr(1e-3, t, 1000);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("Adam leaves parameters alone under zero gradient") {
    NetworkParams p;
    p.add_layer(4, 4, Activation::linear);
    Rng rng(5);
    init_he_uniform(p, rng);
    std::vector<double> before = p.values;
    OptState s = OptState::zeros_for(p);
    std::vector<double> zero(p.total_count(), 0.0);
    for (int i = 0; i < 10; ++i) adam_step(p, s, zero, 1e-3);
    for (size_t i = 0; i < before.size(); ++i) CHECK(p.values[i] == before[i]);
}

TEST_CASE("Adam's first step moves by about -lr in the gradient's sign") {
    // With zero state the bias-corrected first step is lr * g / (|g| + eps').
    NetworkParams p;
    p.add_layer(1, 3, Activation::linear);
    p.values = {2.0, -1.0, 0.5, 0.0};
    OptState s = OptState::zeros_for(p);
    std::vector<double> g = {0.3, -4.0, 1e-6, 0.0};
    adam_step(p, s, g, 0.01);
    CHECK(p.values[0] == doctest::Approx(2.0 - 0.01).epsilon(1e-6));
    CHECK(p.values[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-6));
    CHECK(p.values[2] < 0.5);        // moved against the gradient
    CHECK(p.values[3] == 0.0);       // zero gradient, no motion
    CHECK(s.step == 1);
}

TEST_CASE("Adam drives a quadratic bowl to its minimum") {
    // loss = ||w - w*||^2, analytic gradient 2 (w - w*). With lr = 0.05 the
    // worst coordinate lands within 2.8e-5 after 200 steps; the 1e-3 threshold
    // leaves a wide margin without being loose enough to pass by accident.
    NetworkParams p;
    p.add_layer(1, 8, Activation::linear);
    Rng rng(17);
    std::vector<double> target(p.total_count());
    for (size_t i = 0; i < target.size(); ++i) {
        target[i] = rng.normal(0.0, 1.0);
        p.values[i] = rng.normal(0.0, 1.0);
    }
    OptState s = OptState::zeros_for(p);
    std::vector<double> g(p.total_count());
    for (int t = 0; t < 200; ++t) {
        for (size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (p.values[i] - target[i]);
        adam_step(p, s, g, 0.05);
    }
    double worst = 0.0;
    for (size_t i = 0; i < g.size(); ++i)
        worst = std::max(worst, std::abs(p.values[i] - target[i]));
    CHECK(worst < 1e-3);
}

TEST_CASE("RMSprop matches a hand-computed first step") {
    // v1 = 0.1 g^2; w -= lr g / (sqrt(v1) + eps).
    NetworkParams p;
    p.add_layer(1, 2, Activation::linear);
    p.values = {1.0, -2.0, 0.25};
    OptState s = OptState::zeros_for(p);
    std::vector<double> g = {0.5, -1.5, 2.0};
    double lr = 2.5e-4;
    rmsprop_step(p, s, g, lr);
    for (size_t i = 0; i < g.size(); ++i) {
        double v1 = 0.1 * g[i] * g[i];
        double expect = (i == 0 ? 1.0 : i == 1 ? -2.0 : 0.25) -
                        lr * g[i] / (std::sqrt(v1) + 1e-8);
        CHECK(p.values[i] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(s.v[i] == doctest::Approx(v1).epsilon(1e-12));
    }
}

TEST_CASE("RMSprop also minimizes the quadratic bowl") {
    NetworkParams p;
    p.add_layer(1, 4, Activation::linear);
    std::vector<double> target = {0.3, -0.7, 1.1, 0.0, -0.4};
    p.values = {1.0, 1.0, -1.0, 0.5, 0.5};
    OptState s = OptState::zeros_for(p);
    std::vector<double> g(p.total_count());
    for (int t = 0; t < 3000; ++t) {
        for (size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (p.values[i] - target[i]);
        rmsprop_step(p, s, g, 1e-3);
    }
    for (size_t i = 0; i < g.size(); ++i)
        CHECK(std::abs(p.values[i] - target[i]) < 1e-2);
}

TEST_CASE("checkpoint round trip is bit-exact, with and without optimizer state") {
    testutil::TempDir tmp("ckpt");
    NetworkParams p;
    p.add_layer(8, 3, Activation::relu);
    p.add_layer(2, 8, Activation::linear);
    Rng rng(123);
    init_he_uniform(p, rng);
    // Make the values less tidy than fresh init.
    OptState s = OptState::zeros_for(p);
    std::vector<double> g(p.total_count());
    for (double& x : g) x = rng.normal(0.0, 1.0);
    adam_step(p, s, g, 1e-3);
    adam_step(p, s, g, 1e-3);

    nlohmann::json extra = {{"note", "round-trip"}, {"models", {"a", "b"}}};
    std::string prefix = tmp.file("net");

    SUBCASE("params only") {
        save_checkpoint(prefix, p, extra);
        Checkpoint ck = load_checkpoint(prefix);
        REQUIRE(ck.params.values.size() == p.values.size());
        CHECK(std::memcmp(ck.params.values.data(), p.values.data(),
                          p.values.size() * sizeof(double)) == 0);
        REQUIRE(ck.params.layers.size() == 2);
        CHECK(ck.params.layers[0].out == 8);
        CHECK(ck.params.layers[0].act == Activation::relu);
        CHECK(ck.params.layers[1].act == Activation::linear);
        CHECK(ck.manifest.at("extra").at("note") == "round-trip");
        CHECK_FALSE(ck.opt.has_value());
    }

    SUBCASE("with optimizer state") {
        save_checkpoint(prefix, p, extra, &s);
        Checkpoint ck = load_checkpoint(prefix);
        REQUIRE(ck.opt.has_value());
        CHECK(ck.opt->step == s.step);
        REQUIRE(ck.opt->m.size() == s.m.size());
        CHECK(std::memcmp(ck.opt->m.data(), s.m.data(), s.m.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(ck.opt->v.data(), s.v.data(), s.v.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(ck.params.values.data(), p.values.data(),
                          p.values.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("loading a missing checkpoint fails cleanly") {
    testutil::TempDir tmp("ckpt-missing");
    CHECK_THROWS_AS(load_checkpoint(tmp.file("nothing-here")), ConfigError);
}

TEST_CASE("activation names round trip") {
    CHECK(activation_from_name(activation_name(Activation::relu)) == Activation::relu);
    CHECK(activation_from_name(activation_name(Activation::linear)) == Activation::linear);
    CHECK_THROWS_AS(activation_from_name("sigmoid"), ConfigError);
}
