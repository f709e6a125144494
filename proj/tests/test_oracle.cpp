#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "hbmc/common.hpp"
#include "hbmc/oracle.hpp"
#include "hbmc/rng.hpp"
#include "hbmc/simulators.hpp"
#include "test_util.hpp"

using namespace hbmc;

namespace {

HierarchicalDataset make_data(const std::vector<std::vector<double>>& groups) {
    HierarchicalDataset d;
    for (const auto& g : groups) {
        Mat m(static_cast<int>(g.size()), 1);
        for (size_t i = 0; i < g.size(); ++i) m(static_cast<int>(i), 0) = g[i];
        d.groups.push_back(std::move(m));
    }
    return d;
}

double normal_logpdf(double x, double mu, double var) {
    return -0.5 * (std::log(2.0 * kPi * var) + (x - mu) * (x - mu) / var);
}

// Dense-covariance evaluation of log N(x | mu 1, sigma2 I + tau2 1 1^T) via a
// textbook Cholesky, deliberately ignoring the rank-one structure.
double dense_group_logpdf(const std::vector<double>& x, double mu, double tau2, double sigma2) {
    int n = static_cast<int>(x.size());
    std::vector<double> cov(n * n, tau2);
    for (int i = 0; i < n; ++i) cov[i * n + i] += sigma2;
    std::vector<double> l(n * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double acc = cov[i * n + j];
            for (int k = 0; k < j; ++k) acc -= l[i * n + k] * l[j * n + k];
            l[i * n + j] = (i == j) ? std::sqrt(acc) : acc / l[j * n + j];
        }
    double logdet = 0.0, quad = 0.0;
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        double acc = x[i] - mu;
        for (int k = 0; k < i; ++k) acc -= l[i * n + k] * y[k];
        y[i] = acc / l[i * n + i];
        logdet += 2.0 * std::log(l[i * n + i]);
        quad += y[i] * y[i];
    }
    return -0.5 * (n * std::log(2.0 * kPi) + logdet + quad);
}

}  // namespace

TEST_CASE("quadrature configuration validates its knobs") {
    QuadratureConfig qc;
    CHECK_NOTHROW(qc.validate());

    QuadratureConfig bad = qc;
    bad.nodes = 15;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = qc;
    bad.prior_mass = 0.999;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = qc;
    bad.prior_mass = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = qc;
    bad.tau2_hi = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = qc;
    bad.stability_tol = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    // Default truncation: the half-normal quantile holding 99.999% of mass.
    CHECK(qc.bound_tau2() == doctest::Approx(4.417173413467605).epsilon(1e-12));
    CHECK(qc.bound_sigma2() == qc.bound_tau2());
    QuadratureConfig explicit_qc = qc;
    explicit_qc.tau2_hi = 3.0;
    CHECK(explicit_qc.bound_tau2() == 3.0);
    CHECK(explicit_qc.bound_sigma2() == qc.bound_sigma2());
}

TEST_CASE("group density reduces to independent normals without group spread") {
    std::vector<double> x = {0.4, -1.2, 2.3, 0.0, 0.7};
    double mu = 0.3, sigma2 = 1.7;
    double expect = 0.0;
    for (double v : x) expect += normal_logpdf(v, mu, sigma2);
    CHECK(group_log_density_normal(x, mu, 0.0, sigma2) ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("a single observation sees the summed variances") {
    std::vector<double> x = {1.9};
    CHECK(group_log_density_normal(x, -0.5, 0.8, 1.3) ==
          doctest::Approx(normal_logpdf(1.9, -0.5, 0.8 + 1.3)).epsilon(1e-12));
}

TEST_CASE("the rank-one shortcut agrees with a dense covariance evaluation") {
    Rng rng(50);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 1 + static_cast<int>(rng.u01() * 6);
        std::vector<double> x(n);
        for (double& v : x) v = rng.normal(0.0, 2.0);
        double mu = rng.normal(0.0, 1.0);
        double tau2 = rng.u01() * 2.0;
        double sigma2 = 0.1 + rng.u01() * 2.0;
        CHECK(group_log_density_normal(x, mu, tau2, sigma2) ==
              doctest::Approx(dense_group_logpdf(x, mu, tau2, sigma2)).epsilon(1e-10));
    }
}

TEST_CASE("density guards reject invalid variances") {
    std::vector<double> x = {0.0};
    CHECK_THROWS_AS(group_log_density_normal(x, 0.0, 0.0, 0.0), DomainError);
    CHECK_THROWS_AS(group_log_density_normal(x, 0.0, -0.1, 1.0), DomainError);
    std::vector<double> empty;
    CHECK_THROWS_AS(group_log_density_normal(empty, 0.0, 0.0, 1.0), DomainError);
}

TEST_CASE("marginal likelihood matches brute force monte carlo") {
    ModelSpec spec = ModelSpec::make(Family::normal_m2);
    Rng data_rng(51);
    std::vector<int> ns = {4, 2, 5};
    HierarchicalDataset d = simulate(spec, 3, ns, data_rng);

    QuadratureConfig qc;
    for (Family f : {Family::normal_m1, Family::normal_m2}) {
        double quad = log_marginal_normal(d, f, qc).value;

        Rng mc(52);
        const int draws = 200000;
        std::vector<double> ll(draws);
        for (int i = 0; i < draws; ++i) {
            double tau2 = std::abs(mc.normal(0.0, 1.0));
            double sigma2 = std::abs(mc.normal(0.0, 1.0));
            double mu = f == Family::normal_m2 ? mc.normal(0.0, 1.0) : 0.0;
            double acc = 0.0;
            for (const Mat& g : d.groups) {
                std::vector<double> x(g.flat().begin(), g.flat().end());
                acc += group_log_density_normal(x, mu, tau2, sigma2);
            }
            ll[i] = acc;
        }
        double mx = *std::max_element(ll.begin(), ll.end());
        double mean_w = 0.0;
        for (double v : ll) mean_w += std::exp(v - mx);
        mean_w /= draws;
        double var_w = 0.0;
        for (double v : ll) {
            double dw = std::exp(v - mx) - mean_w;
            var_w += dw * dw;
        }
        var_w /= draws - 1;
        double mc_logml = mx + std::log(mean_w);
        double se = std::sqrt(var_w / draws) / mean_w;
        CHECK(std::abs(mc_logml - quad) < 3.0 * se);
    }
}

TEST_CASE("single point at zero reproduces its reference values") {
    HierarchicalDataset d = make_data({{0.0}});
    QuadratureConfig qc;
    LogMarginal l1 = log_marginal_normal(d, Family::normal_m1, qc);
    LogMarginal l2 = log_marginal_normal(d, Family::normal_m2, qc);
    CHECK(l1.model_index == 0);
    CHECK(l2.model_index == 1);
    // Independently integrated to high precision; the pooled-location model
    // pays for spreading mass over mu even though the point sits at zero.
    CHECK(std::abs(l1.value - -1.0059170789846357) < 1e-4);
    CHECK(std::abs(l2.value - -1.3556277991883818) < 1e-4);
    CHECK(l1.value > l2.value);
}

TEST_CASE("node doubling leaves the estimate in place") {
    Rng rng(53);
    std::vector<int> ns = {6, 3, 8, 5};
    HierarchicalDataset d = simulate(ModelSpec::make(Family::normal_m1), 4, ns, rng);

    QuadratureConfig coarse;
    coarse.nodes = 64;
    coarse.check_stability = false;
    QuadratureConfig fine = coarse;
    fine.nodes = 128;
    double a = log_marginal_normal(d, Family::normal_m2, coarse).value;
    double b = log_marginal_normal(d, Family::normal_m2, fine).value;
    CHECK(std::abs(a - b) < 1e-3);

    QuadratureConfig guarded;
    CHECK_NOTHROW(log_marginal_normal(d, Family::normal_m2, guarded));
}

TEST_CASE("marginal likelihood guards its inputs") {
    HierarchicalDataset d = make_data({{0.1, 0.4}});
    QuadratureConfig qc;
    CHECK_THROWS_AS(log_marginal_normal(d, Family::sdt, qc), DomainError);

    HierarchicalDataset wide;
    wide.groups.push_back(Mat(2, 2));
    CHECK_THROWS_AS(log_marginal_normal(wide, Family::normal_m1, qc), StructuralError);

    QuadratureConfig bad;
    bad.nodes = 4;
    CHECK_THROWS_AS(log_marginal_normal(d, Family::normal_m1, bad), ConfigError);
}

TEST_CASE("posterior probabilities from log marginals") {
    std::vector<double> uniform = {0.25, 0.25, 0.25, 0.25};
    std::vector<double> same = {-3.0, -3.0, -3.0, -3.0};
    PmpVector p = pmps_from_logml(same, uniform);
    REQUIRE(p.size() == 4);
    for (int j = 0; j < 4; ++j) CHECK(p[j] == doctest::Approx(0.25).epsilon(1e-15));

    std::vector<double> half = {0.5, 0.5};
    std::vector<double> pair = {0.0, std::log(3.0)};
    PmpVector q = pmps_from_logml(pair, half);
    CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-12));

    // A common additive offset cancels in the normalization.
    std::vector<double> shifted = {100.0, 100.0 + std::log(3.0)};
    PmpVector qs = pmps_from_logml(shifted, half);
    CHECK(qs[0] == doctest::Approx(q[0]).epsilon(1e-12));
    CHECK(qs[1] == doctest::Approx(q[1]).epsilon(1e-12));

    // Unequal priors tilt the posterior even with equal evidence.
    std::vector<double> tilted_prior = {1.0, 3.0};
    std::vector<double> flat = {-2.0, -2.0};
    PmpVector t = pmps_from_logml(flat, tilted_prior);
    CHECK(t[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t[1] == doctest::Approx(0.75).epsilon(1e-12));

    // Extreme gaps saturate cleanly instead of producing NaNs.
    std::vector<double> gap = {0.0, -1e6};
    PmpVector g = pmps_from_logml(gap, half);
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g[1] >= 0.0);

    std::vector<double> short_prior = {1.0};
    CHECK_THROWS_AS(pmps_from_logml(pair, short_prior), StructuralError);
    std::vector<double> none;
    CHECK_THROWS_AS(pmps_from_logml(none, none), StructuralError);
    std::vector<double> zero_prior = {0.0, 1.0};
    CHECK_THROWS_AS(pmps_from_logml(pair, zero_prior), DomainError);
}

TEST_CASE("bayes factors and posterior odds are consistent") {
    CHECK(bayes_factor(-7.3, -7.3) == 1.0);
    CHECK(bayes_factor(std::log(3.0), 0.0) == doctest::Approx(3.0).epsilon(1e-12));

    Rng rng(54);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> logml = {rng.normal(0.0, 5.0), rng.normal(0.0, 5.0)};
        std::vector<double> prior = {0.1 + rng.u01(), 0.1 + rng.u01()};
        PmpVector p = pmps_from_logml(logml, prior);
        double via_odds = posterior_odds(p[0], p[1]) * (prior[1] / prior[0]);
        CHECK(via_odds == doctest::Approx(bayes_factor(logml[0], logml[1])).epsilon(1e-12));
    }

    CHECK_THROWS_AS(posterior_odds(0.5, 0.0), DomainError);
}

TEST_CASE("bayes factor tables from network outputs") {
    std::vector<double> uniform3 = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    PmpVector flat;
    flat.p = uniform3;
    BfTable t = network_to_bf(flat, uniform3);
    CHECK(!t.saturated);
    for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) CHECK(t.bf(j, k) == 1.0);

    PmpVector skew;
    skew.p = {0.75, 0.25};
    std::vector<double> half = {0.5, 0.5};
    BfTable s = network_to_bf(skew, half);
    CHECK(s.bf(0, 0) == 1.0);
    CHECK(s.bf(1, 1) == 1.0);
    CHECK(s.bf(0, 1) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(s.bf(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(!s.saturated);

    PmpVector hard;
    hard.p = {1.0, 0.0};
    BfTable h = network_to_bf(hard, half);
    CHECK(h.saturated);
    CHECK(h.bf(0, 1) == 1e12);
    CHECK(h.bf(1, 0) == 1e-12);

    std::vector<double> wrong = {1.0};
    CHECK_THROWS_AS(network_to_bf(skew, wrong), StructuralError);
}

TEST_CASE("oracle posteriors favor the generating model") {
    QuadratureConfig qc;
    std::vector<double> half = {0.5, 0.5};
    std::vector<int> ns(10, 20);

    // Shifted data: only the free-location model can follow the mean.
    Rng r1(55);
    HierarchicalDataset shifted = simulate_normal_given({2.0, 0.2, 0.5}, 10, ns, r1);
    PmpVector p_shift = oracle_pmps(shifted, qc, half);
    CHECK(p_shift.size() == 2);
    CHECK(p_shift[0] + p_shift[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p_shift[1] > 0.95);

    // Centered data: the fixed-location model wins by parsimony.
    Rng r2(56);
    HierarchicalDataset centered = simulate_normal_given({0.0, 0.3, 1.0}, 10, ns, r2);
    PmpVector p_center = oracle_pmps(centered, qc, half);
    CHECK(p_center[0] > 0.5);
}

TEST_CASE("evidence for the free location grows with the shift") {
    QuadratureConfig qc;
    Rng rng(57);
    std::vector<int> ns(5, 10);
    HierarchicalDataset base = simulate_normal_given({0.0, 0.2, 1.0}, 5, ns, rng);

    double prev = -1e300;
    for (double shift : {0.0, 1.0, 2.0}) {
        HierarchicalDataset d = base;
        for (Mat& g : d.groups)
            for (double& v : g.flat()) v += shift;
        double gap = log_marginal_normal(d, Family::normal_m2, qc).value -
                     log_marginal_normal(d, Family::normal_m1, qc).value;
        CHECK(gap > prev);
        prev = gap;
    }
}
