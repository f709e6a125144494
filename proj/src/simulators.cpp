#include "hbmc/simulators.hpp"

#include <algorithm>
#include <cmath>

namespace hbmc {

const char* family_name(Family f) {
    switch (f) {
        case Family::normal_m1: return "normal-M1";
        case Family::normal_m2: return "normal-M2";
        case Family::sdt: return "sdt";
        case Family::mpt: return "mpt";
        case Family::eam_basic_dm: return "eam-basic-dm";
        case Family::eam_basic_levy: return "eam-basic-levy";
        case Family::eam_full_dm: return "eam-full-dm";
        case Family::eam_full_levy: return "eam-full-levy";
        case Family::noise: return "noise";
    }
    throw StructuralError("family_name: bad enum");
}

Family family_from_name(const std::string& s) {
    for (Family f : {Family::normal_m1, Family::normal_m2, Family::sdt, Family::mpt,
                     Family::eam_basic_dm, Family::eam_basic_levy, Family::eam_full_dm,
                     Family::eam_full_levy, Family::noise})
        if (s == family_name(f)) return f;
    throw ConfigError("unknown model family: " + s);
}

int family_feature_dim(Family f) {
    switch (f) {
        case Family::normal_m1:
        case Family::normal_m2: return 1;
        case Family::sdt:
        case Family::mpt:
        case Family::noise: return 2;
        default: return 3;
    }
}

bool family_is_eam(Family f) {
    return f == Family::eam_basic_dm || f == Family::eam_basic_levy ||
           f == Family::eam_full_dm || f == Family::eam_full_levy;
}

bool eam_is_full(Family f) {
    return f == Family::eam_full_dm || f == Family::eam_full_levy;
}

bool eam_is_levy(Family f) {
    return f == Family::eam_basic_levy || f == Family::eam_full_levy;
}

double Dist::sample(Rng& rng) const {
    switch (kind) {
        case Kind::point: return p1;
        case Kind::normal: return rng.normal(p1, p2);
        case Kind::positive_normal: return rng.positive_normal(p1, p2);
        case Kind::truncated_normal: return rng.truncated_normal(p1, p2, lo, hi);
        case Kind::gamma_shape_scale: return rng.gamma_shape_scale(p1, p2);
        case Kind::gamma_mean_sd: return rng.gamma_mean_sd(p1, p2);
        case Kind::uniform: return rng.uniform(p1, p2);
        case Kind::beta: return rng.beta(p1, p2);
    }
    throw StructuralError("Dist::sample: bad kind");
}

ModelSpec ModelSpec::make(Family f) {
    ModelSpec s;
    s.family = f;
    s.feature_dim = family_feature_dim(f);
    switch (f) {
        case Family::normal_m1:
        case Family::normal_m2:
            s.priors["tau2"] = Dist::positive_normal(0, 1);
            s.priors["sigma2"] = Dist::positive_normal(0, 1);
            s.priors["mu"] =
                f == Family::normal_m1 ? Dist::point(0.0) : Dist::normal(0, 1);
            break;
        case Family::sdt:
            s.priors["mu_h"] = Dist::normal(1, 0.5);
            s.priors["sig_h"] = Dist::gamma_shape_scale(1, 1);
            s.priors["mu_f"] = Dist::normal(-1, 0.5);
            s.priors["sig_f"] = Dist::gamma_shape_scale(1, 1);
            break;
        case Family::mpt:
            s.priors["mu_d"] = Dist::normal(0, 0.25);
            s.priors["mu_g"] = Dist::normal(0, 0.25);
            s.priors["lambda_d"] = Dist::uniform(0, 2);
            s.priors["lambda_g"] = Dist::uniform(0, 2);
            break;
        case Family::eam_basic_dm:
        case Family::eam_basic_levy:
        case Family::eam_full_dm:
        case Family::eam_full_levy:
            s.priors["mu_a"] = Dist::normal(5, 1);
            s.priors["sig_a"] = Dist::positive_normal(0.4, 0.15);
            s.priors["mu_zr"] = Dist::normal(0, 0.25);
            s.priors["sig_zr"] = Dist::positive_normal(0, 0.05);
            s.priors["mu_v0"] = Dist::normal(5, 1);
            s.priors["sig_v0"] = Dist::positive_normal(0.5, 0.25);
            s.priors["mu_v1"] = Dist::normal(5, 1);
            s.priors["sig_v1"] = Dist::positive_normal(0.5, 0.25);
            s.priors["mu_t0"] = Dist::normal(5, 1);
            s.priors["sig_t0"] = Dist::positive_normal(0.1, 0.05);
            if (eam_is_levy(f)) {
                s.priors["mu_alpha"] = Dist::normal(1.65, 0.15);
                s.priors["sig_alpha"] = Dist::positive_normal(0.3, 0.1);
            }
            if (eam_is_full(f)) {
                s.priors["sz"] = Dist::beta(1, 3);
                s.priors["sv"] = Dist::positive_normal(0, 2);
                s.priors["st"] = Dist::positive_normal(0, 0.3);
            }
            break;
        case Family::noise:
            break;
    }
    return s;
}

std::vector<ModelSpec> model_set_from_names(std::span<const std::string> names) {
    std::vector<ModelSpec> set;
    for (const std::string& n : names) set.push_back(ModelSpec::make(family_from_name(n)));
    if (set.size() < 2) throw ConfigError("model set needs at least two members");
    int d = set.front().feature_dim;
    for (const ModelSpec& s : set)
        if (s.feature_dim != d)
            throw ConfigError("model set mixes incompatible feature dimensions");
    return set;
}

double sample_alpha_stable(double alpha, double scale, Rng& rng) {
    if (!(alpha > 0.0 && alpha <= 2.0))
        throw DomainError("sample_alpha_stable: alpha must be in (0, 2]");
    double u = rng.uniform(-kPi / 2.0, kPi / 2.0);
    double w = rng.exponential();
    if (alpha == 2.0) return scale * 2.0 * std::sin(u) * std::sqrt(w);
    if (alpha == 1.0) return scale * std::tan(u);
    double s = std::sin(alpha * u) / std::pow(std::cos(u), 1.0 / alpha);
    double t = std::pow(std::cos((1.0 - alpha) * u) / w, (1.0 - alpha) / alpha);
    return scale * s * t;
}

namespace {

// Lower Cholesky of a small SPD matrix; throws on failure.
Mat cholesky(const Mat& s) {
    int p = s.rows();
    if (s.cols() != p) throw StructuralError("cholesky: matrix not square");
    Mat l(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = s(i, j);
            for (int k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (acc <= 0.0) throw NumericalError("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    return l;
}

// Inverse via the Cholesky factor (solve L L^T X = I).
Mat spd_inverse(const Mat& s) {
    int p = s.rows();
    Mat l = cholesky(s);
    Mat inv(p, p);
    for (int col = 0; col < p; ++col) {
        std::vector<double> y(p);
        for (int i = 0; i < p; ++i) {
            double acc = (i == col) ? 1.0 : 0.0;
            for (int k = 0; k < i; ++k) acc -= l(i, k) * y[k];
            y[i] = acc / l(i, i);
        }
        for (int i = p - 1; i >= 0; --i) {
            double acc = y[i];
            for (int k = i + 1; k < p; ++k) acc -= l(k, i) * inv(k, col);
            inv(i, col) = acc / l(i, i);
        }
    }
    return inv;
}

}  // namespace

Mat sample_inverse_wishart(int df, const Mat& scale, Rng& rng) {
    int p = scale.rows();
    if (df <= p - 1) throw DomainError("sample_inverse_wishart: df must exceed dim - 1");
    // X ~ Wishart(df, scale^-1) via Bartlett, then invert.
    Mat v = spd_inverse(scale);
    Mat l = cholesky(v);
    Mat a(p, p);
    for (int i = 0; i < p; ++i) {
        a(i, i) = std::sqrt(rng.gamma_shape_scale(0.5 * (df - i), 2.0));
        for (int j = 0; j < i; ++j) a(i, j) = rng.normal(0.0, 1.0);
    }
    // T = L A  (lower triangular), X = T T^T
    Mat t(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (int k = j; k <= i; ++k) acc += l(i, k) * a(k, j);
            t(i, j) = acc;
        }
    Mat x(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int k = 0; k <= std::min(i, j); ++k) acc += t(i, k) * t(j, k);
            x(i, j) = acc;
        }
    Mat inv = spd_inverse(x);
    // Symmetrize away round-off so downstream Cholesky sees an exact symmetric matrix.
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < i; ++j) {
            double m = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = inv(j, i) = m;
        }
    return inv;
}

NormalHyper draw_normal_hyper(const ModelSpec& spec, Rng& rng) {
    NormalHyper h;
    h.tau2 = spec.priors.at("tau2").sample(rng);
    h.sigma2 = spec.priors.at("sigma2").sample(rng);
    h.mu = spec.priors.at("mu").sample(rng);
    return h;
}

HierarchicalDataset simulate_normal_given(const NormalHyper& h, int M, std::span<const int> Ns,
                                          Rng& rng) {
    if (h.tau2 < 0.0 || h.sigma2 < 0.0) throw DomainError("simulate_normal: negative variance");
    HierarchicalDataset d;
    double tau = std::sqrt(h.tau2), sigma = std::sqrt(h.sigma2);
    for (int m = 0; m < M; ++m) {
        double theta = rng.normal(h.mu, tau);
        Mat g(Ns[m], 1);
        for (int n = 0; n < Ns[m]; ++n) g(n, 0) = rng.normal(theta, sigma);
        d.groups.push_back(std::move(g));
    }
    return d;
}

HierarchicalDataset simulate_normal(const ModelSpec& spec, int M, std::span<const int> Ns,
                                    Rng& rng) {
    NormalHyper h = draw_normal_hyper(spec, rng);
    HierarchicalDataset d = simulate_normal_given(h, M, Ns, rng);
    d.meta.family = family_name(spec.family);
    return d;
}

SdtHyper draw_sdt_hyper(const ModelSpec& spec, Rng& rng) {
    SdtHyper h;
    h.mu_h = spec.priors.at("mu_h").sample(rng);
    h.sig_h = spec.priors.at("sig_h").sample(rng);
    h.mu_f = spec.priors.at("mu_f").sample(rng);
    h.sig_f = spec.priors.at("sig_f").sample(rng);
    return h;
}

MptHyper draw_mpt_hyper(const ModelSpec& spec, Rng& rng, SimDiagnostics* diag) {
    MptHyper h;
    h.mu_d = spec.priors.at("mu_d").sample(rng);
    h.mu_g = spec.priors.at("mu_g").sample(rng);
    double ld = spec.priors.at("lambda_d").sample(rng);
    double lg = spec.priors.at("lambda_g").sample(rng);
    Mat eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1.0;
    for (;;) {
        Mat q = sample_inverse_wishart(3, eye, rng);
        Mat sigma(2, 2);
        sigma(0, 0) = ld * ld * q(0, 0);
        sigma(0, 1) = sigma(1, 0) = ld * lg * q(0, 1);
        sigma(1, 1) = lg * lg * q(1, 1);
        double det = sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(1, 0);
        if (sigma(0, 0) > 0.0 && det > 0.0 && all_finite(sigma.flat())) {
            h.sigma = std::move(sigma);
            return h;
        }
        if (diag) diag->cov_resamples += 1;
    }
}

void mpt_rates(double d, double g, double& hit, double& fa) {
    hit = d + (1.0 - d) * g;
    fa = (1.0 - d) * g;
}

HierarchicalDataset simulate_binary_given(std::span<const double> hit, std::span<const double> fa,
                                          std::span<const int> Ns, Rng& rng) {
    HierarchicalDataset d;
    for (size_t m = 0; m < Ns.size(); ++m) {
        int n = Ns[m];
        int n1 = (n + 1) / 2;  // stimulus-type 1 trials
        Mat g(n, 2);
        for (int t = 0; t < n; ++t) {
            int s = t < n1 ? 1 : 0;
            double p = s ? hit[m] : fa[m];
            g(t, 0) = s;
            g(t, 1) = rng.bernoulli(p) ? 1.0 : 0.0;
        }
        d.groups.push_back(std::move(g));
    }
    return d;
}

HierarchicalDataset simulate_sdt(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng) {
    SdtHyper h = draw_sdt_hyper(spec, rng);
    std::vector<double> hit(M), fa(M);
    for (int m = 0; m < M; ++m) {
        hit[m] = norm_cdf(rng.normal(h.mu_h, h.sig_h));
        fa[m] = norm_cdf(rng.normal(h.mu_f, h.sig_f));
    }
    HierarchicalDataset d = simulate_binary_given(hit, fa, Ns.subspan(0, M), rng);
    d.meta.family = family_name(spec.family);
    return d;
}

HierarchicalDataset simulate_mpt(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                                 SimDiagnostics* diag) {
    MptHyper h = draw_mpt_hyper(spec, rng, diag);
    // Cholesky of the 2x2 person-effect covariance.
    double l00 = std::sqrt(h.sigma(0, 0));
    double l10 = h.sigma(1, 0) / l00;
    double l11 = std::sqrt(std::max(h.sigma(1, 1) - l10 * l10, 0.0));
    std::vector<double> hit(M), fa(M);
    for (int m = 0; m < M; ++m) {
        double z1 = rng.normal(0, 1), z2 = rng.normal(0, 1);
        double dp = norm_cdf(h.mu_d + l00 * z1);
        double gp = norm_cdf(h.mu_g + l10 * z1 + l11 * z2);
        mpt_rates(dp, gp, hit[m], fa[m]);
    }
    HierarchicalDataset d = simulate_binary_given(hit, fa, Ns.subspan(0, M), rng);
    d.meta.family = family_name(spec.family);
    return d;
}

HierarchicalDataset simulate_noise(int M, std::span<const int> Ns, Rng& rng) {
    HierarchicalDataset d;
    for (int m = 0; m < M; ++m) {
        Mat g(Ns[m], 2);
        for (int t = 0; t < Ns[m]; ++t) {
            g(t, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
            g(t, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        d.groups.push_back(std::move(g));
    }
    d.meta.family = family_name(Family::noise);
    return d;
}

void EamParams::validate() const {
    if (!(a > 0.0)) throw DomainError("eam: a must be > 0");
    if (!(zr > 0.0 && zr < 1.0)) throw DomainError("eam: zr must be in (0,1)");
    if (!(t0 > 0.0)) throw DomainError("eam: t0 must be > 0");
    if (!(alpha >= 1.0 && alpha <= 2.0)) throw DomainError("eam: alpha must be in [1,2]");
    if (!(v0 < 0.0)) throw DomainError("eam: v0 must be < 0");
    if (!(v1 > 0.0)) throw DomainError("eam: v1 must be > 0");
    if (sv < 0.0 || sz < 0.0 || st < 0.0) throw DomainError("eam: variabilities must be >= 0");
}

EamHyper draw_eam_hyper(const ModelSpec& spec, Rng& rng, SimDiagnostics* diag) {
    for (;;) {
        EamHyper h;
        h.mu_a = spec.priors.at("mu_a").sample(rng);
        h.sig_a = spec.priors.at("sig_a").sample(rng);
        h.mu_zr = spec.priors.at("mu_zr").sample(rng);
        h.sig_zr = spec.priors.at("sig_zr").sample(rng);
        h.mu_v0 = spec.priors.at("mu_v0").sample(rng);
        h.sig_v0 = spec.priors.at("sig_v0").sample(rng);
        h.mu_v1 = spec.priors.at("mu_v1").sample(rng);
        h.sig_v1 = spec.priors.at("sig_v1").sample(rng);
        h.mu_t0 = spec.priors.at("mu_t0").sample(rng);
        h.sig_t0 = spec.priors.at("sig_t0").sample(rng);
        if (eam_is_levy(spec.family)) {
            h.mu_alpha = spec.priors.at("mu_alpha").sample(rng);
            h.sig_alpha = spec.priors.at("sig_alpha").sample(rng);
        }
        // Gamma group priors need strictly positive means; the Normal(5,1)
        // hypers make violations astronomically rare but not impossible.
        const double tiny = 1e-9;
        bool ok = h.mu_a > tiny && h.mu_v0 > tiny && h.mu_v1 > tiny && h.mu_t0 > tiny &&
                  h.sig_a > tiny && h.sig_zr > tiny && h.sig_v0 > tiny && h.sig_v1 > tiny &&
                  h.sig_t0 > tiny && (!eam_is_levy(spec.family) || h.sig_alpha > tiny);
        if (ok) return h;
        if (diag) diag->hyper_resamples += 1;
    }
}

EamParams draw_eam_person(const ModelSpec& spec, const EamHyper& h, Rng& rng) {
    EamParams p;
    p.a = rng.gamma_mean_sd(h.mu_a, h.sig_a);
    double zr_probit = rng.normal(h.mu_zr, h.sig_zr);
    p.zr = 1.0 / (1.0 + std::exp(-zr_probit));
    p.v0 = -rng.gamma_mean_sd(h.mu_v0, h.sig_v0);
    p.v1 = rng.gamma_mean_sd(h.mu_v1, h.sig_v1);
    p.t0 = rng.gamma_mean_sd(h.mu_t0, h.sig_t0);
    p.alpha = eam_is_levy(spec.family)
                  ? rng.truncated_normal(h.mu_alpha, h.sig_alpha, 1.0, 2.0)
                  : 2.0;
    if (eam_is_full(spec.family)) {
        p.sz = spec.priors.at("sz").sample(rng);
        p.sv = spec.priors.at("sv").sample(rng);
        p.st = spec.priors.at("st").sample(rng);
    }
    return p;
}

EamTrial simulate_eam_trial(const EamParams& p, int stimulus, const EamSimConfig& cfg, Rng& rng,
                            SimDiagnostics* diag) {
    p.validate();
    if (!(cfg.dt > 0.0)) throw DomainError("eam: dt must be > 0");
    if (!(cfg.t_max > p.t0)) throw DomainError("eam: t_max must exceed t0");
    const double noise_scale = 1.0 / std::sqrt(2.0);
    const double step_scale = std::pow(cfg.dt, 1.0 / p.alpha);
    for (long attempt = 0; attempt < cfg.max_trial_resamples; ++attempt) {
        // Variability draws are skipped when the parameter is exactly zero so
        // that nested models consume identical RNG streams.
        double v = (stimulus ? p.v1 : p.v0) + (p.sv > 0.0 ? rng.normal(0.0, p.sv) : 0.0);
        double z = p.zr + (p.sz > 0.0 ? rng.uniform(-p.sz / 2.0, p.sz / 2.0) : 0.0);
        z = std::min(std::max(z, 0.01), 0.99);
        double t0 = p.t0 + (p.st > 0.0 ? rng.uniform(-p.st / 2.0, p.st / 2.0) : 0.0);
        t0 = std::max(t0, 1e-6);
        double x = z * p.a;
        double t = 0.0;
        while (t < cfg.t_max) {
            x += v * cfg.dt + step_scale * sample_alpha_stable(p.alpha, noise_scale, rng);
            t += cfg.dt;
            if (x <= 0.0) return {t + t0, 0};
            if (x >= p.a) return {t + t0, 1};
        }
        if (diag) diag->timeout_resamples += 1;
    }
    throw NumericalError("eam: trial failed to absorb after repeated resampling");
}

HierarchicalDataset simulate_eam(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                                 const EamSimConfig& cfg, SimDiagnostics* diag) {
    EamHyper h = draw_eam_hyper(spec, rng, diag);
    HierarchicalDataset d;
    for (int m = 0; m < M; ++m) {
        EamParams p = draw_eam_person(spec, h, rng);
        int n = Ns[m];
        int n1 = (n + 1) / 2;
        Mat g(n, 3);
        for (int t = 0; t < n; ++t) {
            int s = t < n1 ? 1 : 0;
            EamTrial trial = simulate_eam_trial(p, s, cfg, rng, diag);
            g(t, 0) = trial.rt;
            g(t, 1) = trial.response;
            g(t, 2) = s;
        }
        d.groups.push_back(std::move(g));
    }
    d.meta.family = family_name(spec.family);
    return d;
}

HierarchicalDataset simulate(const ModelSpec& spec, int M, std::span<const int> Ns, Rng& rng,
                             SimDiagnostics* diag, const EamSimConfig& eam_cfg) {
    if (M < 1) throw DomainError("simulate: M must be >= 1");
    if (static_cast<int>(Ns.size()) < M) throw StructuralError("simulate: Ns shorter than M");
    for (int m = 0; m < M; ++m)
        if (Ns[m] < 1) throw DomainError("simulate: group sizes must be >= 1");

    HierarchicalDataset d;
    switch (spec.family) {
        case Family::normal_m1:
        case Family::normal_m2: d = simulate_normal(spec, M, Ns, rng); break;
        case Family::sdt: d = simulate_sdt(spec, M, Ns, rng); break;
        case Family::mpt: d = simulate_mpt(spec, M, Ns, rng, diag); break;
        case Family::noise: d = simulate_noise(M, Ns, rng); break;
        default: d = simulate_eam(spec, M, Ns, rng, eam_cfg, diag); break;
    }
    d.validate();
    return d;
}

}  // namespace hbmc
