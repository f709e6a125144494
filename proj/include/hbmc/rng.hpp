#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "hbmc/common.hpp"

namespace hbmc {

// Mixes a master seed with a path of indices (step, dataset, ...) into an
// independent substream seed. Order-sensitive, splitmix64-style scrambling.
uint64_t derive_seed(uint64_t master, std::span<const uint64_t> path);
uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path);

// All stochastic draws in the project go through this wrapper so that draw
// counts and distributions are under our control (the std::* distributions are
// implementation-defined). Normal draws use the inverse cdf: exactly one
// uniform per variate, no cached state.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    static Rng substream(uint64_t master, std::initializer_list<uint64_t> path) {
        return Rng(derive_seed(master, path));
    }

    uint64_t raw() { return eng_(); }

    // Uniform on the open interval (0,1); never returns an endpoint.
    double u01() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // Inclusive bounds, rejection on masked bits (no modulo bias).
    int64_t uniform_int(int64_t lo, int64_t hi);

    double normal(double mean, double sd) { return mean + sd * probit(u01()); }

    double exponential() { return -std::log(u01()); }

    // Marsaglia-Tsang; boosted via Gamma(shape+1) * U^(1/shape) for shape < 1.
    double gamma_shape_scale(double shape, double scale);

    // Gamma reparameterized by mean and sd: shape = (mean/sd)^2, scale = sd^2/mean.
    double gamma_mean_sd(double mean, double sd) {
        double shape = (mean / sd) * (mean / sd);
        return gamma_shape_scale(shape, sd * sd / mean);
    }

    double beta(double a, double b);

    bool bernoulli(double p) { return u01() < p; }

    // Normal conditioned on [lo, hi], via inverse cdf on the truncated mass.
    // Exact (single uniform), throws DomainError if the interval mass underflows.
    double truncated_normal(double mean, double sd, double lo, double hi);

    // Normal conditioned on being positive.
    double positive_normal(double mean, double sd) {
        return truncated_normal(mean, sd, 0.0, std::numeric_limits<double>::infinity());
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace hbmc
