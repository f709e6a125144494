#include "hbmc/rng.hpp"

#include <limits>

namespace hbmc {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master, std::span<const uint64_t> path) {
    uint64_t h = splitmix64(master);
    for (uint64_t p : path) {
        h ^= splitmix64(p) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        h = splitmix64(h);
    }
    return h;
}

uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path) {
    return derive_seed(master, std::span<const uint64_t>(path.begin(), path.size()));
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw DomainError("uniform_int: hi < lo");
    uint64_t span = static_cast<uint64_t>(hi - lo);
    if (span == std::numeric_limits<uint64_t>::max()) return static_cast<int64_t>(raw());
    uint64_t n = span + 1;
    uint64_t mask = ~0ull;
    if (n < (1ull << 63)) {
        mask = 1;
        while (mask < n) mask <<= 1;
        mask -= 1;
    }
    for (;;) {
        uint64_t v = raw() & mask;
        if (v < n) return lo + static_cast<int64_t>(v);
    }
}

double Rng::gamma_shape_scale(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) throw DomainError("gamma: shape and scale must be > 0");
    if (shape < 1.0) {
        double u = u01();
        return gamma_shape_scale(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal(0.0, 1.0);
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = u01();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
}

double Rng::beta(double a, double b) {
    double x = gamma_shape_scale(a, 1.0);
    double y = gamma_shape_scale(b, 1.0);
    return x / (x + y);
}

double Rng::truncated_normal(double mean, double sd, double lo, double hi) {
    if (!(sd > 0.0)) throw DomainError("truncated_normal: sd must be > 0");
    if (!(lo < hi)) throw DomainError("truncated_normal: lo must be < hi");
    double a = std::isinf(lo) ? 0.0 : norm_cdf((lo - mean) / sd);
    double bb = std::isinf(hi) ? 1.0 : norm_cdf((hi - mean) / sd);
    double mass = bb - a;
    if (!(mass > 0.0))
        throw DomainError("truncated_normal: interval carries no probability mass");
    double p = a + mass * u01();
    // Clamp away from the endpoints so probit stays finite.
    p = std::min(std::max(p, 0x1.0p-60), 1.0 - 0x1.0p-53);
    double x = mean + sd * probit(p);
    return std::min(std::max(x, lo), hi);
}

}  // namespace hbmc
