#include "hbmc/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hbmc/parallel.hpp"

namespace hbmc {

namespace {

constexpr uint64_t kTagSim = 0xC11A0001ull;
constexpr uint64_t kTagEval = 0xC11A0002ull;
constexpr uint64_t kTagPerturb = 0xC11A0003ull;
constexpr uint64_t kTagInit = 0xC11A0004ull;

nlohmann::json qc_to_json(const QuadratureConfig& q) {
    return {{"nodes", q.nodes},
            {"prior_mass", q.prior_mass},
            {"tau2_hi", q.tau2_hi},
            {"sigma2_hi", q.sigma2_hi},
            {"check_stability", q.check_stability},
            {"stability_tol", q.stability_tol}};
}

QuadratureConfig qc_from_json(const nlohmann::json& j) {
    QuadratureConfig q;
    q.nodes = j.value("nodes", q.nodes);
    q.prior_mass = j.value("prior_mass", q.prior_mass);
    q.tau2_hi = j.value("tau2_hi", q.tau2_hi);
    q.sigma2_hi = j.value("sigma2_hi", q.sigma2_hi);
    q.check_stability = j.value("check_stability", q.check_stability);
    q.stability_tol = j.value("stability_tol", q.stability_tol);
    q.validate();
    return q;
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw ConfigError("output directory must be set");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << j.dump(2) << "\n";
}

void echo_config(const std::string& out_dir, const std::string& command,
                 const nlohmann::json& resolved) {
    write_json(out_dir + "/resolved_config.json",
               {{"schema_version", 1},
                {"kind", "resolved_config"},
                {"command", command},
                {"config", resolved}});
}

std::vector<std::string> model_names(const LoadedNet& ln) {
    if (static_cast<int>(ln.models.size()) == ln.net.num_models) return ln.models;
    std::vector<std::string> names;
    for (int j = 0; j < ln.net.num_models; ++j) names.push_back("model-" + std::to_string(j));
    return names;
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw StructuralError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    double h = static_cast<double>(v.size() - 1) * p;
    size_t lo = static_cast<size_t>(h);
    size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

// Mask `count` uniformly chosen rows of group m (partial Fisher-Yates).
void mask_group_rows(HierarchicalDataset& d, size_t m, int count, Rng& rng) {
    int n = d.groups[m].rows();
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < count; ++i) {
        int j = static_cast<int>(rng.uniform_int(i, n - 1));
        std::swap(idx[i], idx[j]);
        d.mask[m][idx[i]] = 0;
        for (int c = 0; c < d.groups[m].cols(); ++c) d.groups[m](idx[i], c) = 0.0;
    }
}

void ensure_mask(HierarchicalDataset& d) {
    if (d.has_mask()) return;
    d.mask.resize(d.groups.size());
    for (size_t m = 0; m < d.groups.size(); ++m) d.mask[m].assign(d.groups[m].rows(), 1);
}

}  // namespace

void RunConfig::validate() const {
    if (models.size() < 2) throw ConfigError("run config: need at least two models");
    model_set_from_names(models);
    training.validate();
    quadrature.validate();
    if (out_dir.empty()) throw ConfigError("run config: output directory must be set");
}

nlohmann::json RunConfig::to_json() const {
    return {{"schema_version", 1},
            {"experiment", experiment},
            {"models", models},
            {"summary", summary.to_json()},
            {"training", training.to_json()},
            {"quadrature", qc_to_json(quadrature)},
            {"out_dir", out_dir}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.experiment = j.value("experiment", c.experiment);
        if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
        if (j.contains("summary")) c.summary = SummaryConfig::from_json(j.at("summary"));
        if (j.contains("training")) c.training = TrainingConfig::from_json(j.at("training"));
        if (j.contains("quadrature")) c.quadrature = qc_from_json(j.at("quadrature"));
        c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    return from_json(j);
}

LoadedNet load_network(const std::string& checkpoint_prefix) {
    Checkpoint ck = load_checkpoint(checkpoint_prefix);
    nlohmann::json extra = ck.manifest.value("extra", nlohmann::json::object());
    if (!extra.contains("summary"))
        throw StructuralError("checkpoint lacks a network description: " + checkpoint_prefix);
    LoadedNet out;
    out.manifest = std::move(ck.manifest);
    NetworkParams plan;
    out.net = SummaryNet::from_json(extra.at("summary"), plan);
    if (plan.layers.size() != ck.params.layers.size())
        throw StructuralError("checkpoint layer plan mismatch: " + checkpoint_prefix);
    for (size_t k = 0; k < plan.layers.size(); ++k) {
        const LayerShape& a = plan.layers[k];
        const LayerShape& b = ck.params.layers[k];
        if (a.out != b.out || a.in != b.in || a.act != b.act)
            throw StructuralError("checkpoint layer plan mismatch: " + checkpoint_prefix);
    }
    out.params = std::move(ck.params);
    if (extra.contains("models"))
        out.models = extra.at("models").get<std::vector<std::string>>();
    return out;
}

int cmd_simulate(const SimulateArgs& a) {
    if (a.count < 0) throw ConfigError("simulate: count must be >= 0");
    a.groups.validate();
    a.obs.validate();
    ModelSpec spec = ModelSpec::make(family_from_name(a.family));
    ensure_dir(a.out_dir);
    echo_config(a.out_dir, "simulate",
                {{"family", a.family},
                 {"count", a.count},
                 {"groups", {a.groups.lo, a.groups.hi}},
                 {"obs", {a.obs.lo, a.obs.hi}},
                 {"seed", a.seed},
                 {"out_dir", a.out_dir}});

    std::vector<HierarchicalDataset> sets(a.count);
    parallel_for(a.count, a.jobs, [&](long i) {
        Rng rng = Rng::substream(a.seed, {kTagSim, static_cast<uint64_t>(i)});
        int M = a.groups.sample(rng);
        std::vector<int> Ns(M);
        for (int m = 0; m < M; ++m) Ns[m] = a.obs.sample(rng);
        HierarchicalDataset d = simulate(spec, M, Ns, rng);
        d.meta.seed = derive_seed(a.seed, {kTagSim, static_cast<uint64_t>(i)});
        sets[i] = std::move(d);
    });

    nlohmann::json files = nlohmann::json::array();
    char name[64];
    for (int i = 0; i < a.count; ++i) {
        std::snprintf(name, sizeof(name), "dataset_%06d.json", i);
        save_dataset(a.out_dir + "/" + name, sets[i]);
        files.push_back({{"file", name}});
    }
    write_json(a.out_dir + "/index.json", {{"schema_version", 1},
                                           {"kind", "dataset_batch"},
                                           {"family", a.family},
                                           {"count", a.count},
                                           {"files", std::move(files)}});
    std::printf("simulate: wrote %d %s dataset(s) to %s\n", a.count, a.family.c_str(),
                a.out_dir.c_str());
    return 0;
}

int cmd_train(const RunConfig& run, const TrainOptions& opt) {
    run.validate();
    std::vector<ModelSpec> model_set = model_set_from_names(run.models);
    int D = model_set.front().feature_dim;
    int J = static_cast<int>(model_set.size());

    TrainingConfig tc = run.training;
    tc.jobs = resolve_jobs(run.jobs);
    if (tc.checkpoint_prefix.empty()) tc.checkpoint_prefix = run.out_dir + "/checkpoint";
    ensure_dir(run.out_dir);
    {
        nlohmann::json resolved = run.to_json();
        resolved["training"] = tc.to_json();
        resolved["pretrained"] = opt.pretrained;
        resolved["store_dir"] = opt.store_dir;
        resolved["store_per_model"] = opt.store_per_model;
        echo_config(run.out_dir, "train", resolved);
    }

    NetworkParams params;
    SummaryNet net;
    if (!opt.pretrained.empty()) {
        LoadedNet pre = load_network(opt.pretrained);
        if (pre.net.feature_dim != D || pre.net.num_models != J)
            throw ConfigError("pretrained checkpoint does not match the model set");
        net = pre.net;
        params = std::move(pre.params);
    } else {
        net = SummaryNet::build(D, J, run.summary, params);
        Rng init_rng = Rng::substream(tc.seed, {kTagInit});
        net.init_params(params, init_rng);
    }

    OfflineStore store;
    const OfflineStore* store_ptr = nullptr;
    if (tc.regime == Regime::offline) {
        if (!opt.store_dir.empty()) {
            store = load_offline_store(opt.store_dir);
        } else if (opt.store_per_model > 0) {
            store = build_offline_store(model_set, opt.store_per_model, tc, tc.seed, tc.jobs);
            if (opt.save_store) save_offline_store(run.out_dir + "/store", store);
        } else {
            throw ConfigError("offline regime needs --store or --store-per-model");
        }
        if (store.num_models != J)
            throw ConfigError("offline store was built for a different model count");
        store_ptr = &store;
    }

    TrainResult res = train(model_set, net, params, tc, store_ptr);
    write_trace_csv(run.out_dir + "/trace.csv", res.trace);
    nlohmann::json result{{"schema_version", 1},
                          {"kind", "train_result"},
                          {"steps_done", res.steps_done},
                          {"checkpoint", tc.checkpoint_prefix}};
    if (std::isfinite(res.final_val_loss)) result["final_val_loss"] = res.final_val_loss;
    write_json(run.out_dir + "/result.json", result);
    if (std::isfinite(res.final_val_loss))
        std::printf("train: %ld step(s), final val loss %.4f, checkpoint %s\n", res.steps_done,
                    res.final_val_loss, tc.checkpoint_prefix.c_str());
    else
        std::printf("train: %ld step(s), checkpoint %s\n", res.steps_done,
                    tc.checkpoint_prefix.c_str());
    return 0;
}

int cmd_validate(const ValidateArgs& a) {
    if (a.sets < 1 || a.repetitions < 1)
        throw ConfigError("validate: sets and repetitions must be >= 1");
    if (a.bins < 1) throw ConfigError("validate: bins must be >= 1");
    LoadedNet ln = load_network(a.checkpoint);
    std::vector<std::string> names = a.models.empty() ? ln.models : a.models;
    if (names.empty())
        throw ConfigError("validate: checkpoint names no model set; pass --models");
    std::vector<ModelSpec> model_set = model_set_from_names(names);
    int J = static_cast<int>(model_set.size());
    if (J != ln.net.num_models || model_set.front().feature_dim != ln.net.feature_dim)
        throw ConfigError("validate: model set does not match the checkpoint's network");

    std::vector<int> ms = a.grid_m.empty() ? std::vector<int>{a.groups} : a.grid_m;
    std::vector<int> ns = a.grid_n.empty() ? std::vector<int>{a.obs} : a.grid_n;
    for (int v : ms)
        if (v < 1) throw ConfigError("validate: group counts must be >= 1");
    for (int v : ns)
        if (v < 1) throw ConfigError("validate: observation counts must be >= 1");

    ensure_dir(a.out_dir);
    echo_config(a.out_dir, "validate",
                {{"checkpoint", a.checkpoint},
                 {"models", names},
                 {"sets", a.sets},
                 {"repetitions", a.repetitions},
                 {"grid_m", ms},
                 {"grid_n", ns},
                 {"bins", a.bins},
                 {"seed", a.seed},
                 {"out_dir", a.out_dir}});
    int jobs = resolve_jobs(a.jobs);
    std::vector<double> prior(J, 1.0 / J);

    for (int M : ms) {
        for (int N : ns) {
            std::vector<MetricsReport> reps;
            PredictionCorpus pooled;
            pooled.preds.resize(a.sets * a.repetitions, J);
            pooled.labels.resize(static_cast<size_t>(a.sets) * a.repetitions);
            for (int r = 0; r < a.repetitions; ++r) {
                std::vector<HierarchicalDataset> ds(a.sets);
                std::vector<int> labels(a.sets);
                parallel_for(a.sets, jobs, [&](long i) {
                    Rng rng = Rng::substream(
                        a.seed, {kTagEval, static_cast<uint64_t>(M), static_cast<uint64_t>(N),
                                 static_cast<uint64_t>(r), static_cast<uint64_t>(i)});
                    int j = static_cast<int>(rng.uniform_int(0, J - 1));
                    std::vector<int> Ns(M, N);
                    ds[i] = simulate(model_set[j], M, Ns, rng);
                    labels[i] = j;
                });
                PredictionCorpus c = predict_corpus(ln.net, ln.params, ds, labels, jobs);
                for (int i = 0; i < a.sets; ++i) {
                    int row = r * a.sets + i;
                    std::copy(c.preds.row(i), c.preds.row(i) + J, pooled.preds.row(row));
                    pooled.labels[row] = c.labels[i];
                }
                reps.push_back(build_metrics_report(c, a.bins, prior));
            }

            auto aggregate = [&](auto field) {
                nlohmann::json med = nlohmann::json::array(), lo = nlohmann::json::array(),
                               hi = nlohmann::json::array();
                for (int j = 0; j < J; ++j) {
                    std::vector<double> v;
                    for (const MetricsReport& rep : reps) v.push_back((rep.*field)[j]);
                    med.push_back(percentile(v, 0.5));
                    lo.push_back(percentile(v, 0.025));
                    hi.push_back(percentile(v, 0.975));
                }
                return nlohmann::json{{"median", med}, {"p2.5", lo}, {"p97.5", hi}};
            };
            nlohmann::json agg{{"ece", aggregate(&MetricsReport::ece)},
                               {"accuracy", aggregate(&MetricsReport::accuracy)},
                               {"mae", aggregate(&MetricsReport::mae)},
                               {"rmse", aggregate(&MetricsReport::rmse)},
                               {"log_score", aggregate(&MetricsReport::log_score)},
                               {"sbc", aggregate(&MetricsReport::sbc)}};
            nlohmann::json per_rep = nlohmann::json::array();
            for (const MetricsReport& rep : reps) per_rep.push_back(metrics_report_to_json(rep));

            char suffix[64];
            std::snprintf(suffix, sizeof(suffix), "M%d_N%d", M, N);
            MetricsReport pooled_rep = build_metrics_report(pooled, a.bins, prior);
            write_json(a.out_dir + "/report_" + suffix + ".json",
                       {{"schema_version", 1},
                        {"kind", "validation_report"},
                        {"models", names},
                        {"groups", M},
                        {"obs", N},
                        {"sets", a.sets},
                        {"repetitions", a.repetitions},
                        {"bins", a.bins},
                        {"aggregate", std::move(agg)},
                        {"pooled", metrics_report_to_json(pooled_rep)},
                        {"per_repetition", std::move(per_rep)}});
            write_calibration_csv(a.out_dir + "/calibration_" + suffix + ".csv", pooled_rep);
            write_confusion_csv(a.out_dir + "/confusion_" + suffix + ".csv", pooled_rep);

            std::vector<double> acc, ece_max;
            for (const MetricsReport& rep : reps) {
                acc.push_back(std::accumulate(rep.accuracy.begin(), rep.accuracy.end(), 0.0) / J);
                ece_max.push_back(*std::max_element(rep.ece.begin(), rep.ece.end()));
            }
            std::printf("validate: M=%d N=%d S=%d x%d: median accuracy %.3f, median max ECE %.3f\n",
                        M, N, a.sets, a.repetitions, percentile(acc, 0.5),
                        percentile(ece_max, 0.5));
        }
    }
    return 0;
}

int cmd_compare(const CompareArgs& a) {
    if (a.dataset_files.empty()) throw ConfigError("compare: no dataset files given");
    LoadedNet ln = load_network(a.checkpoint);
    int J = ln.net.num_models;
    if (a.reference < 0 || a.reference >= J)
        throw ConfigError("compare: reference model index out of range");
    std::vector<std::string> names = model_names(ln);
    std::vector<double> prior(J, 1.0 / J);

    ensure_dir(a.out_dir);
    echo_config(a.out_dir, "compare",
                {{"checkpoint", a.checkpoint},
                 {"datasets", a.dataset_files},
                 {"reference", a.reference},
                 {"out_dir", a.out_dir}});

    FastWeights fw;
    fw.build(ln.params);
    nlohmann::json rows = nlohmann::json::array();
    std::printf("compare: reference model %s\n", names[a.reference].c_str());
    for (const std::string& file : a.dataset_files) {
        HierarchicalDataset d = load_dataset(file);
        PmpVector pmp = ln.net.classify_fast(ln.params, fw, d);
        BfTable t = network_to_bf(pmp, prior);
        nlohmann::json bf_vs_ref = nlohmann::json::array(),
                       bf_ref_vs = nlohmann::json::array();
        for (int j = 0; j < J; ++j) {
            bf_vs_ref.push_back(t.bf(j, a.reference));
            bf_ref_vs.push_back(t.bf(a.reference, j));
        }
        int best = argmax_row(pmp.p);
        rows.push_back({{"file", file},
                        {"pmp", pmp.p},
                        {"argmax", best},
                        {"bf_vs_ref", std::move(bf_vs_ref)},
                        {"bf_ref_vs", std::move(bf_ref_vs)},
                        {"saturated", t.saturated}});
        std::printf("  %s: best %s (pmp %.4f, BF vs %s %.4g)%s\n", file.c_str(),
                    names[best].c_str(), pmp[best], names[a.reference].c_str(),
                    t.bf(best, a.reference), t.saturated ? " [saturated]" : "");
    }
    write_json(a.out_dir + "/compare.json", {{"schema_version", 1},
                                             {"kind", "comparison"},
                                             {"checkpoint", a.checkpoint},
                                             {"reference", a.reference},
                                             {"models", names},
                                             {"rows", std::move(rows)}});
    return 0;
}

int cmd_oracle(const OracleArgs& a) {
    if (a.dataset_files.empty()) throw ConfigError("oracle: no dataset files given");
    a.quadrature.validate();
    ensure_dir(a.out_dir);
    echo_config(a.out_dir, "oracle",
                {{"datasets", a.dataset_files},
                 {"checkpoint", a.checkpoint},
                 {"quadrature", qc_to_json(a.quadrature)},
                 {"out_dir", a.out_dir}});

    std::optional<LoadedNet> ln;
    FastWeights fw;
    if (!a.checkpoint.empty()) {
        ln = load_network(a.checkpoint);
        if (ln->net.num_models != 2 || ln->net.feature_dim != 1)
            throw ConfigError("oracle: checkpoint is not a two-model scalar-response network");
        fw.build(ln->params);
    }

    std::vector<double> prior{0.5, 0.5};
    nlohmann::json rows = nlohmann::json::array();
    std::string scatter = "# schema_version=1\nfile,oracle_log_bf,network_log_bf,oracle_pmp,network_pmp\n";
    for (const std::string& file : a.dataset_files) {
        HierarchicalDataset d = load_dataset(file);
        LogMarginal lm1 = log_marginal_normal(d, Family::normal_m1, a.quadrature);
        LogMarginal lm2 = log_marginal_normal(d, Family::normal_m2, a.quadrature);
        std::array<double, 2> logml{lm1.value, lm2.value};
        PmpVector opmp = pmps_from_logml(logml, prior);
        double olbf = lm1.value - lm2.value;
        nlohmann::json row{{"file", file},
                           {"logml", logml},
                           {"oracle_pmp", opmp.p},
                           {"oracle_log_bf12", olbf}};
        if (ln) {
            PmpVector npmp = ln->net.classify_fast(ln->params, fw, d);
            double nlbf = std::log(std::max(npmp[0], kProbFloor)) -
                          std::log(std::max(npmp[1], kProbFloor));
            row["network_pmp"] = npmp.p;
            row["network_log_bf12"] = nlbf;
            scatter += file + "," + format_double(olbf) + "," + format_double(nlbf) + "," +
                       format_double(opmp[0]) + "," + format_double(npmp[0]) + "\n";
            std::printf("  %s: oracle log BF12 %.4f (pmp %.4f), network %.4f (pmp %.4f)\n",
                        file.c_str(), olbf, opmp[0], nlbf, npmp[0]);
        } else {
            std::printf("  %s: oracle log BF12 %.4f (pmp %.4f)\n", file.c_str(), olbf, opmp[0]);
        }
        rows.push_back(std::move(row));
    }
    write_json(a.out_dir + "/oracle.json", {{"schema_version", 1},
                                            {"kind", "oracle_table"},
                                            {"quadrature", qc_to_json(a.quadrature)},
                                            {"checkpoint", a.checkpoint},
                                            {"rows", std::move(rows)}});
    if (ln) {
        std::ofstream f(a.out_dir + "/scatter.csv");
        if (!f) throw ConfigError("cannot write scatter CSV");
        f << scatter;
    }
    std::printf("oracle: evaluated %zu dataset(s)\n", a.dataset_files.size());
    return 0;
}

HierarchicalDataset mask_fraction(const HierarchicalDataset& data, double fraction, Rng& rng) {
    if (!(fraction >= 0.0 && fraction < 1.0))
        throw ConfigError("mask fraction must lie in [0, 1)");
    if (fraction == 0.0) return data;
    data.validate();
    HierarchicalDataset out = data;
    ensure_mask(out);
    for (size_t m = 0; m < out.groups.size(); ++m) {
        int n = out.groups[m].rows();
        int count = std::min(static_cast<int>(std::lround(fraction * n)), n - 1);
        if (count > 0) mask_group_rows(out, m, count, rng);
    }
    out.validate();
    return out;
}

int cmd_perturb(const PerturbArgs& a) {
    if (a.reps < 1) throw ConfigError("perturb: reps must be >= 1");
    if (a.mode != "bootstrap-groups" && a.mode != "leave-one-group-out" &&
        a.mode != "mask-sweep")
        throw ConfigError("perturb: unknown mode " + a.mode);
    LoadedNet ln = load_network(a.checkpoint);
    HierarchicalDataset base = load_dataset(a.dataset_file);
    base.validate();
    int J = ln.net.num_models;
    int M = base.num_groups();
    std::vector<std::string> names = model_names(ln);

    ensure_dir(a.out_dir);
    echo_config(a.out_dir, "perturb",
                {{"checkpoint", a.checkpoint},
                 {"dataset", a.dataset_file},
                 {"mode", a.mode},
                 {"reps", a.reps},
                 {"seed", a.seed},
                 {"out_dir", a.out_dir}});
    int jobs = resolve_jobs(a.jobs);

    FastWeights fw;
    fw.build(ln.params);
    PmpVector base_pmp = ln.net.classify_fast(ln.params, fw, base);
    int base_arg = argmax_row(base_pmp.p);

    auto summarize = [&](const std::vector<PmpVector>& draws) {
        std::vector<double> mean(J, 0.0), sd(J, 0.0);
        int stable = 0;
        for (const PmpVector& p : draws) {
            for (int j = 0; j < J; ++j) mean[j] += p[j];
            if (argmax_row(p.p) == base_arg) ++stable;
        }
        for (int j = 0; j < J; ++j) mean[j] /= draws.size();
        if (draws.size() > 1) {
            for (const PmpVector& p : draws)
                for (int j = 0; j < J; ++j) sd[j] += (p[j] - mean[j]) * (p[j] - mean[j]);
            for (int j = 0; j < J; ++j)
                sd[j] = std::sqrt(sd[j] / (draws.size() - 1));
        }
        return nlohmann::json{{"mean", mean},
                              {"sd", sd},
                              {"argmax_stable", stable},
                              {"n", draws.size()}};
    };

    nlohmann::json rows = nlohmann::json::array();
    if (a.mode == "bootstrap-groups") {
        std::vector<PmpVector> draws(a.reps);
        parallel_for(a.reps, jobs, [&](long rep) {
            Rng rng = Rng::substream(a.seed, {kTagPerturb, static_cast<uint64_t>(rep)});
            HierarchicalDataset d;
            d.meta = base.meta;
            for (int m = 0; m < M; ++m) {
                int pick = static_cast<int>(rng.uniform_int(0, M - 1));
                d.groups.push_back(base.groups[pick]);
                if (base.has_mask()) d.mask.push_back(base.mask[pick]);
            }
            draws[rep] = ln.net.classify_fast(ln.params, fw, d);
        });
        rows.push_back(summarize(draws));
        std::printf("perturb: bootstrap over %d group resamples: argmax stable %d/%d\n", a.reps,
                    rows.back()["argmax_stable"].get<int>(), a.reps);
    } else if (a.mode == "leave-one-group-out") {
        if (M < 2) throw ConfigError("leave-one-group-out needs at least two groups");
        std::vector<PmpVector> draws(M);
        parallel_for(M, jobs, [&](long leave) {
            HierarchicalDataset d;
            d.meta = base.meta;
            for (int m = 0; m < M; ++m) {
                if (m == leave) continue;
                d.groups.push_back(base.groups[m]);
                if (base.has_mask()) d.mask.push_back(base.mask[m]);
            }
            draws[leave] = ln.net.classify_fast(ln.params, fw, d);
        });
        nlohmann::json agg = summarize(draws);
        for (int m = 0; m < M; ++m)
            rows.push_back({{"left_out", m},
                            {"pmp", draws[m].p},
                            {"argmax_same", argmax_row(draws[m].p) == base_arg}});
        rows.push_back(std::move(agg));
        std::printf("perturb: leave-one-group-out over %d groups: argmax stable %d/%d\n", M,
                    rows.back()["argmax_stable"].get<int>(), M);
    } else {  // mask-sweep
        for (int pct = 0; pct <= 40; pct += 5) {
            double fraction = pct / 100.0;
            std::vector<PmpVector> draws(a.reps);
            parallel_for(a.reps, jobs, [&](long rep) {
                Rng rng = Rng::substream(
                    a.seed, {kTagPerturb, static_cast<uint64_t>(pct), static_cast<uint64_t>(rep)});
                HierarchicalDataset d = mask_fraction(base, fraction, rng);
                draws[rep] = ln.net.classify_fast(ln.params, fw, d);
            });
            nlohmann::json row = summarize(draws);
            row["fraction"] = fraction;
            std::printf("  mask %2d%%: argmax stable %d/%d\n", pct,
                        row["argmax_stable"].get<int>(), a.reps);
            rows.push_back(std::move(row));
        }
        std::printf("perturb: mask sweep done (0-40%% in 5%% steps, %d rep(s) each)\n", a.reps);
    }

    write_json(a.out_dir + "/robustness.json", {{"schema_version", 1},
                                                {"kind", "robustness"},
                                                {"mode", a.mode},
                                                {"dataset", a.dataset_file},
                                                {"checkpoint", a.checkpoint},
                                                {"models", names},
                                                {"base_pmp", base_pmp.p},
                                                {"base_argmax", base_arg},
                                                {"rows", std::move(rows)}});
    return 0;
}

}  // namespace hbmc
