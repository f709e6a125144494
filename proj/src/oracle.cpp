#include "hbmc/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace hbmc {

void QuadratureConfig::validate() const {
    if (nodes < 16) throw ConfigError("quadrature: nodes must be >= 16");
    if (!(prior_mass >= 0.9999 && prior_mass < 1.0))
        throw ConfigError("quadrature: prior_mass must cover at least 99.99%");
    if (tau2_hi < 0.0 || sigma2_hi < 0.0) throw ConfigError("quadrature: negative bound");
    if (!(stability_tol > 0.0)) throw ConfigError("quadrature: stability_tol must be > 0");
}

namespace {

// Upper quantile of the standard half-normal: P(|Z| <= h) = mass.
double half_normal_quantile(double mass) { return probit(0.5 * (1.0 + mass)); }

// log density of the standard half-normal (scale 1) on t >= 0.
double log_half_normal(double t) {
    return 0.5 * std::log(2.0 / kPi) - 0.5 * t * t;
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
// Legendre recurrence.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 0; k < n; ++k) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k + 1.0) * z * p1 - k * p2) / (k + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
}

struct GroupStats {
    int n = 0;
    double xbar = 0.0;
    double ss = 0.0;  // sum of squared deviations from the group mean
};

std::vector<GroupStats> collect_stats(const HierarchicalDataset& d) {
    std::vector<GroupStats> gs;
    for (const Mat& g : d.groups) {
        GroupStats s;
        s.n = g.rows();
        for (int r = 0; r < g.rows(); ++r) s.xbar += g(r, 0);
        s.xbar /= s.n;
        for (int r = 0; r < g.rows(); ++r) {
            double dlt = g(r, 0) - s.xbar;
            s.ss += dlt * dlt;
        }
        gs.push_back(s);
    }
    return gs;
}

// Joint log density of all groups at fixed (tau2, sigma2), with mu handled
// analytically: mu = 0 for M1; for M2 the Gaussian mu integral gives
// -log(P)/2 - (R - S^2/P)/2 with P = 1 + sum p_m, S = sum p_m xbar_m,
// R = sum p_m xbar_m^2, p_m = n_m / (sigma2 + n_m tau2).
double joint_log_density(std::span<const GroupStats> gs, bool mu_free, double tau2,
                         double sigma2) {
    double base = 0.0, bigp = 1.0, bigs = 0.0, bigr = 0.0;
    for (const GroupStats& g : gs) {
        double denom = sigma2 + g.n * tau2;
        base += -0.5 * (g.n * std::log(2.0 * kPi) + (g.n - 1) * std::log(sigma2) +
                        std::log(denom) + g.ss / sigma2);
        double p = g.n / denom;
        bigp += p;
        bigs += p * g.xbar;
        bigr += p * g.xbar * g.xbar;
    }
    if (mu_free) return base - 0.5 * std::log(bigp) - 0.5 * (bigr - bigs * bigs / bigp);
    return base - 0.5 * bigr;
}

double quadrature_logml(std::span<const GroupStats> gs, bool mu_free, int nodes, double tau2_hi,
                        double sigma2_hi) {
    std::vector<double> gx, gw;
    gauss_legendre(nodes, gx, gw);
    std::vector<double> tnode(nodes), tlogw(nodes), snode(nodes), slogw(nodes);
    for (int i = 0; i < nodes; ++i) {
        tnode[i] = 0.5 * tau2_hi * (gx[i] + 1.0);
        tlogw[i] = std::log(gw[i] * 0.5 * tau2_hi) + log_half_normal(tnode[i]);
        snode[i] = 0.5 * sigma2_hi * (gx[i] + 1.0);
        slogw[i] = std::log(gw[i] * 0.5 * sigma2_hi) + log_half_normal(snode[i]);
    }
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(nodes) * nodes);
    for (int i = 0; i < nodes; ++i)
        for (int j = 0; j < nodes; ++j)
            terms.push_back(tlogw[i] + slogw[j] +
                            joint_log_density(gs, mu_free, tnode[i], snode[j]));
    return logsumexp(terms);
}

}  // namespace

double QuadratureConfig::bound_tau2() const {
    return tau2_hi > 0.0 ? tau2_hi : half_normal_quantile(prior_mass);
}

double QuadratureConfig::bound_sigma2() const {
    return sigma2_hi > 0.0 ? sigma2_hi : half_normal_quantile(prior_mass);
}

double group_log_density_normal_suff(int n, double xbar, double ss, double mu, double tau2,
                                     double sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("group density: sigma2 must be > 0");
    if (tau2 < 0.0) throw DomainError("group density: tau2 must be >= 0");
    double denom = sigma2 + n * tau2;
    double logdet = (n - 1) * std::log(sigma2) + std::log(denom);
    double quad = ss / sigma2 + n * (xbar - mu) * (xbar - mu) / denom;
    return -0.5 * (n * std::log(2.0 * kPi) + logdet + quad);
}

double group_log_density_normal(std::span<const double> x, double mu, double tau2, double sigma2) {
    if (x.empty()) throw DomainError("group density: empty group");
    int n = static_cast<int>(x.size());
    double xbar = 0.0;
    for (double v : x) xbar += v;
    xbar /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - xbar) * (v - xbar);
    return group_log_density_normal_suff(n, xbar, ss, mu, tau2, sigma2);
}

LogMarginal log_marginal_normal(const HierarchicalDataset& data, Family model,
                                const QuadratureConfig& qc) {
    qc.validate();
    data.validate();
    if (data.feature_dim() != 1)
        throw StructuralError("log_marginal_normal: dataset must be one-dimensional");
    bool mu_free;
    int index;
    if (model == Family::normal_m1) {
        mu_free = false;
        index = 0;
    } else if (model == Family::normal_m2) {
        mu_free = true;
        index = 1;
    } else {
        throw DomainError("log_marginal_normal: only the hierarchical normal models are covered");
    }

    std::vector<GroupStats> gs = collect_stats(data);
    double v = quadrature_logml(gs, mu_free, qc.nodes, qc.bound_tau2(), qc.bound_sigma2());
    if (qc.check_stability) {
        double v2 = quadrature_logml(gs, mu_free, 2 * qc.nodes, qc.bound_tau2(), qc.bound_sigma2());
        if (std::abs(v2 - v) > qc.stability_tol)
            throw AccuracyError("log_marginal_normal: node doubling moved the result by " +
                                format_double(std::abs(v2 - v)) + " nats");
    }
    if (!std::isfinite(v)) throw NumericalError("log_marginal_normal: non-finite result");
    return {v, index};
}

PmpVector pmps_from_logml(std::span<const double> logml, std::span<const double> prior) {
    if (logml.size() != prior.size() || logml.empty())
        throw StructuralError("pmps_from_logml: size mismatch");
    std::vector<double> t(logml.size());
    for (size_t j = 0; j < logml.size(); ++j) {
        if (!(prior[j] > 0.0)) throw DomainError("pmps_from_logml: prior must be positive");
        t[j] = logml[j] + std::log(prior[j]);
    }
    double lse = logsumexp(t);
    PmpVector out;
    out.p.resize(t.size());
    for (size_t j = 0; j < t.size(); ++j) out.p[j] = std::exp(t[j] - lse);
    out.validate();
    return out;
}

double bayes_factor(double logml_j, double logml_k) { return std::exp(logml_j - logml_k); }

double posterior_odds(double pmp_j, double pmp_k) {
    if (pmp_k == 0.0) throw DomainError("posterior_odds: zero denominator");
    return pmp_j / pmp_k;
}

BfTable network_to_bf(const PmpVector& pmp, std::span<const double> prior) {
    pmp.validate();
    if (static_cast<size_t>(pmp.size()) != prior.size())
        throw StructuralError("network_to_bf: size mismatch");
    const double lo = 1e-12, hi = 1e12;
    BfTable out;
    out.bf.resize(pmp.size(), pmp.size());
    for (int j = 0; j < pmp.size(); ++j)
        for (int k = 0; k < pmp.size(); ++k) {
            double v = (pmp[j] / pmp[k]) * (prior[k] / prior[j]);
            if (!std::isfinite(v) || v > hi) {
                v = hi;
                out.saturated = true;
            } else if (v < lo) {
                v = lo;
                out.saturated = true;
            }
            out.bf(j, k) = v;
        }
    return out;
}

PmpVector oracle_pmps(const HierarchicalDataset& data, const QuadratureConfig& qc,
                      std::span<const double> prior) {
    double l1 = log_marginal_normal(data, Family::normal_m1, qc).value;
    double l2 = log_marginal_normal(data, Family::normal_m2, qc).value;
    std::array<double, 2> logml{l1, l2};
    return pmps_from_logml(logml, prior);
}

}  // namespace hbmc
