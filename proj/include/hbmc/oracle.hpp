#pragma once

#include <span>

#include "hbmc/dataset.hpp"
#include "hbmc/simulators.hpp"

namespace hbmc {

struct LogMarginal {
    double value = 0.0;
    int model_index = -1;
};

struct QuadratureConfig {
    int nodes = 128;            // per variance axis
    double prior_mass = 0.99999;  // half-normal mass covered by the truncation
    double tau2_hi = 0.0;       // explicit bounds; 0 means derive from prior_mass
    double sigma2_hi = 0.0;
    bool check_stability = true;
    double stability_tol = 1e-3;  // nats, against node doubling

    void validate() const;
    double bound_tau2() const;
    double bound_sigma2() const;
};

// log N(x | mu*1, sigma2*I + tau2*1 1^T): the group-level marginal of the
// hierarchical normal model with the person effect integrated out.
double group_log_density_normal(std::span<const double> x, double mu, double tau2, double sigma2);
// Same from sufficient statistics (n, group mean, within-group sum of squares).
double group_log_density_normal_suff(int n, double xbar, double ss, double mu, double tau2,
                                     double sigma2);

// Marginal likelihood of the hierarchical normal models. The location mu is
// integrated in closed form (the integrand is Gaussian in mu), leaving a 2-D
// Gauss-Legendre rule over (tau2, sigma2) under their truncated-normal priors.
// Throws AccuracyError if node doubling moves the result by more than
// stability_tol nats.
LogMarginal log_marginal_normal(const HierarchicalDataset& data, Family model,
                                const QuadratureConfig& qc);

// softmax(logml + log prior), log-sum-exp stabilized.
PmpVector pmps_from_logml(std::span<const double> logml, std::span<const double> prior);

double bayes_factor(double logml_j, double logml_k);
double posterior_odds(double pmp_j, double pmp_k);

// BF_jk recovered from PMPs and the model prior; entries clamped to
// [1e-12, 1e12] with a saturation flag.
struct BfTable {
    Mat bf;
    bool saturated = false;
};
BfTable network_to_bf(const PmpVector& pmp, std::span<const double> prior);

// Oracle PMPs for the two-model hierarchical normal comparison.
PmpVector oracle_pmps(const HierarchicalDataset& data, const QuadratureConfig& qc,
                      std::span<const double> prior);

}  // namespace hbmc
