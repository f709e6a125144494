#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "hbmc/dataset.hpp"
#include "hbmc/rng.hpp"

namespace hbmc {

enum class Family {
    normal_m1,
    normal_m2,
    sdt,
    mpt,
    eam_basic_dm,
    eam_basic_levy,
    eam_full_dm,
    eam_full_levy,
    noise
};

const char* family_name(Family f);
Family family_from_name(const std::string& s);
int family_feature_dim(Family f);
bool family_is_eam(Family f);
bool eam_is_full(Family f);   // has inter-trial variability parameters
bool eam_is_levy(Family f);   // free tail exponent (otherwise alpha = 2)

// Scalar prior distribution used in ModelSpec tables.
struct Dist {
    enum class Kind {
        point,
        normal,
        positive_normal,
        truncated_normal,
        gamma_shape_scale,
        gamma_mean_sd,
        uniform,
        beta
    };
    Kind kind = Kind::point;
    double p1 = 0.0, p2 = 0.0;  // meaning depends on kind
    double lo = 0.0, hi = 0.0;  // truncated_normal only

    double sample(Rng& rng) const;

    static Dist point(double v) { return {Kind::point, v, 0, 0, 0}; }
    static Dist normal(double m, double sd) { return {Kind::normal, m, sd, 0, 0}; }
    static Dist positive_normal(double m, double sd) { return {Kind::positive_normal, m, sd, 0, 0}; }
    static Dist truncated_normal(double m, double sd, double lo, double hi) {
        return {Kind::truncated_normal, m, sd, lo, hi};
    }
    static Dist gamma_shape_scale(double k, double th) { return {Kind::gamma_shape_scale, k, th, 0, 0}; }
    static Dist gamma_mean_sd(double m, double sd) { return {Kind::gamma_mean_sd, m, sd, 0, 0}; }
    static Dist uniform(double a, double b) { return {Kind::uniform, a, b, 0, 0}; }
    static Dist beta(double a, double b) { return {Kind::beta, a, b, 0, 0}; }
};

// A member of the comparison set: family tag, data layout, and the hyperprior
// table the simulator draws from.
struct ModelSpec {
    Family family = Family::noise;
    int feature_dim = 2;
    std::map<std::string, Dist> priors;

    static ModelSpec make(Family f);
};

std::vector<ModelSpec> model_set_from_names(std::span<const std::string> names);

// Counters for the rare rejection/resample paths; aggregated across a run.
struct SimDiagnostics {
    long timeout_resamples = 0;  // EAM trials that hit t_max
    long hyper_resamples = 0;    // invalid hyperdraws (e.g. nonpositive Gamma mean)
    long cov_resamples = 0;      // non-positive-definite covariance draws
};

// Chambers-Mallows-Stuck sampler, symmetric case (beta = 0, location 0).
// alpha = 2 takes an explicit branch (2 sin(U) sqrt(W), same variates) so that
// Gaussian-noise and tail-exponent models coincide bitwise when alpha == 2.
double sample_alpha_stable(double alpha, double scale, Rng& rng);

// Inverse of a Bartlett-decomposition Wishart draw. scale must be symmetric
// positive definite, df > dim - 1.
Mat sample_inverse_wishart(int df, const Mat& scale, Rng& rng);

// ---- hierarchical normal family ----

struct NormalHyper {
    double mu = 0.0, tau2 = 0.0, sigma2 = 0.0;
};

NormalHyper draw_normal_hyper(const ModelSpec& spec, Rng& rng);
HierarchicalDataset simulate_normal_given(const NormalHyper& h, int M, std::span<const int> Ns,
                                          Rng& rng);
HierarchicalDataset simulate_normal(const ModelSpec& spec, int M, std::span<const int> Ns,
                                    Rng& rng);

// ---- binary-response families (sdt / mpt / noise) ----

struct SdtHyper {
    double mu_h = 0.0, sig_h = 1.0, mu_f = 0.0, sig_f = 1.0;
};

struct MptHyper {
    double mu_d = 0.0, mu_g = 0.0;
    Mat sigma;  // 2x2 covariance of the probit-scale person effects
};

SdtHyper draw_sdt_hyper(const ModelSpec& spec, Rng& rng);
MptHyper draw_mpt_hyper(const ModelSpec& spec, Rng& rng, SimDiagnostics* diag = nullptr);

// 2HT response rates from detection and guessing probabilities.
void mpt_rates(double d, double g, double& hit, double& fa);

// Rows are (stimulus-type, response); the first ceil(N/2) trials of each group
// show stimulus 1, the rest stimulus 0.
HierarchicalDataset simulate_binary_given(std::span<const double> hit, std::span<const double> fa,
                                          std::span<const int> Ns, Rng& rng);

HierarchicalDataset simulate_sdt(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng);
HierarchicalDataset simulate_mpt(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                                 SimDiagnostics* diag = nullptr);
HierarchicalDataset simulate_noise(int M, std::span<const int> Ns, Rng& rng);

// ---- evidence accumulation models ----

struct EamParams {
    double a = 1.0;       // threshold separation
    double zr = 0.5;      // relative starting point
    double v0 = -1.0;     // drift toward the lower boundary (stimulus 0)
    double v1 = 1.0;      // drift toward the upper boundary (stimulus 1)
    double t0 = 0.3;      // non-decision time, seconds
    double alpha = 2.0;   // noise tail exponent
    double sv = 0.0, sz = 0.0, st = 0.0;  // inter-trial variabilities

    void validate() const;  // DomainError on violated ranges
};

struct EamHyper {
    double mu_a = 0, sig_a = 0, mu_zr = 0, sig_zr = 0;
    double mu_v0 = 0, sig_v0 = 0, mu_v1 = 0, sig_v1 = 0;
    double mu_t0 = 0, sig_t0 = 0, mu_alpha = 0, sig_alpha = 0;
};

struct EamSimConfig {
    double dt = 1e-3;
    double t_max = 10.0;
    long max_trial_resamples = 1000;
};

EamHyper draw_eam_hyper(const ModelSpec& spec, Rng& rng, SimDiagnostics* diag = nullptr);
EamParams draw_eam_person(const ModelSpec& spec, const EamHyper& h, Rng& rng);

struct EamTrial {
    double rt = 0.0;
    int response = 0;
};

// Euler-Maruyama first-passage simulation with stable noise of scale 1/sqrt(2)
// per step, increment v dt + dt^(1/alpha) xi. Trials that fail to absorb by
// t_max are resampled.
EamTrial simulate_eam_trial(const EamParams& p, int stimulus, const EamSimConfig& cfg, Rng& rng,
                            SimDiagnostics* diag = nullptr);

HierarchicalDataset simulate_eam(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                                 const EamSimConfig& cfg = {}, SimDiagnostics* diag = nullptr);

// Dispatch on spec.family. Ns must have M entries (per-group row counts).
HierarchicalDataset simulate(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                             SimDiagnostics* diag = nullptr, const EamSimConfig& eam_cfg = {});

}  // namespace hbmc
