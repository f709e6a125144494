#include "hbmc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hbmc/parallel.hpp"

namespace hbmc {

namespace {

// Substream salts; arbitrary but fixed so streams never collide across uses.
constexpr uint64_t kTagBatch = 0xB47C0001ull;
constexpr uint64_t kTagVal = 0x7A110002ull;
constexpr uint64_t kTagStore = 0x570E0003ull;
constexpr uint64_t kTagShuffle = 0x5FF10004ull;

}  // namespace

const char* optimizer_name(OptimizerTag t) {
    return t == OptimizerTag::adam ? "adam" : "rmsprop";
}

OptimizerTag optimizer_from_name(const std::string& s) {
    if (s == "adam") return OptimizerTag::adam;
    if (s == "rmsprop") return OptimizerTag::rmsprop;
    throw ConfigError("unknown optimizer: " + s);
}

const char* regime_name(Regime r) { return r == Regime::online ? "online" : "offline"; }

Regime regime_from_name(const std::string& s) {
    if (s == "online") return Regime::online;
    if (s == "offline") return Regime::offline;
    throw ConfigError("unknown training regime: " + s);
}

void TrainingConfig::validate() const {
    if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (steps < 0 || epochs < 0) throw ConfigError("training: negative step/epoch count");
    if (!(initial_lr > 0.0)) throw ConfigError("training: initial_lr must be > 0");
    m_sizes.validate();
    n_sizes.validate();
    if (mask && !(mask->mean >= 0.0 && mask->sd >= 0.0))
        throw ConfigError("training: mask augmentation needs nonnegative mean and sd");
}

nlohmann::json TrainingConfig::to_json() const {
    nlohmann::json j{{"batch_size", batch_size},
                     {"steps", steps},
                     {"epochs", epochs},
                     {"optimizer", optimizer_name(optimizer)},
                     {"initial_lr", initial_lr},
                     {"schedule_total", schedule_total},
                     {"regime", regime_name(regime)},
                     {"groups", {m_sizes.lo, m_sizes.hi}},
                     {"obs", {n_sizes.lo, n_sizes.hi}},
                     {"seed", seed},
                     {"checkpoint_every", checkpoint_every},
                     {"val_sets", val_sets},
                     {"val_every", val_every}};
    if (mask) j["mask"] = {{"mean", mask->mean}, {"sd", mask->sd}};
    return j;
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_name(j.at("optimizer"));
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.schedule_total = j.value("schedule_total", c.schedule_total);
    if (j.contains("regime")) c.regime = regime_from_name(j.at("regime"));
    if (j.contains("groups")) {
        c.m_sizes.lo = j.at("groups").at(0).get<int>();
        c.m_sizes.hi = j.at("groups").at(1).get<int>();
    }
    if (j.contains("obs")) {
        c.n_sizes.lo = j.at("obs").at(0).get<int>();
        c.n_sizes.hi = j.at("obs").at(1).get<int>();
    }
    if (j.contains("mask") && !j.at("mask").is_null())
        c.mask = MaskAugment{j.at("mask").value("mean", 0.0), j.at("mask").value("sd", 0.0)};
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.val_sets = j.value("val_sets", c.val_sets);
    c.val_every = j.value("val_every", c.val_every);
    c.validate();
    return c;
}

Mat LabeledBatch::one_hot() const {
    Mat oh(static_cast<int>(labels.size()), num_models);
    for (size_t b = 0; b < labels.size(); ++b) oh(static_cast<int>(b), labels[b]) = 1.0;
    return oh;
}

double log_loss(const PmpVector& pmp, std::span<const double> one_hot) {
    if (static_cast<size_t>(pmp.size()) != one_hot.size())
        throw StructuralError("log_loss: size mismatch");
    double total = 0.0;
    for (int j = 0; j < pmp.size(); ++j)
        if (one_hot[j] != 0.0) total -= one_hot[j] * std::log(std::max(pmp[j], kProbFloor));
    return total;
}

double log_loss(const PmpVector& pmp, int label) {
    if (label < 0 || label >= pmp.size()) throw StructuralError("log_loss: label out of range");
    return -std::log(std::max(pmp[label], kProbFloor));
}

namespace {

template <typename Fn>
auto with_model_context(int model_index, Fn&& fn) {
    auto ctx = [&](const char* what) {
        return std::string(what) + " (while simulating model index " +
               std::to_string(model_index) + ")";
    };
    try {
        return fn();
    } catch (const DomainError& e) {
        throw DomainError(ctx(e.what()));
    } catch (const NumericalError& e) {
        throw NumericalError(ctx(e.what()));
    } catch (const StructuralError& e) {
        throw StructuralError(ctx(e.what()));
    }
}

}  // namespace

LabeledBatch sample_training_batch(std::span<const ModelSpec> model_set,
                                   const TrainingConfig& cfg, long step, int jobs) {
    if (model_set.size() < 2) throw ConfigError("training needs at least two models");
    cfg.validate();
    int B = cfg.batch_size;
    int J = static_cast<int>(model_set.size());
    LabeledBatch batch;
    batch.num_models = J;
    batch.datasets.resize(B);
    batch.labels.resize(B);
    parallel_for(B, jobs, [&](long b) {
        Rng rng = Rng::substream(cfg.seed, {kTagBatch, static_cast<uint64_t>(step),
                                            static_cast<uint64_t>(b)});
        int j = static_cast<int>(rng.uniform_int(0, J - 1));
        int M = cfg.m_sizes.sample(rng);
        std::vector<int> Ns(M);
        for (int m = 0; m < M; ++m) Ns[m] = cfg.n_sizes.sample(rng);
        HierarchicalDataset d = with_model_context(
            j, [&] { return simulate(model_set[j], M, Ns, rng); });
        if (cfg.mask) d = apply_missingness(d, cfg.mask->mean, cfg.mask->sd, rng);
        d.meta.model_index = j;
        batch.datasets[b] = std::move(d);
        batch.labels[b] = j;
    });
    return batch;
}

HierarchicalDataset apply_missingness(const HierarchicalDataset& data, double mean, double sd,
                                      Rng& rng) {
    data.validate();
    HierarchicalDataset out = data;
    if (!out.has_mask()) {
        out.mask.resize(out.groups.size());
        for (size_t m = 0; m < out.groups.size(); ++m)
            out.mask[m].assign(out.groups[m].rows(), 1);
    }
    for (size_t m = 0; m < out.groups.size(); ++m) {
        int n = out.groups[m].rows();
        int cap = n - 1;  // keep at least one observed row per group
        if (cap < 1) continue;
        int count;
        if (sd > 0.0) {
            double x;
            try {
                x = rng.truncated_normal(mean, sd, 0.5, cap + 0.5);
            } catch (const DomainError&) {
                // Interval mass underflowed (mean far outside [1, cap]).
                x = mean;
            }
            count = static_cast<int>(std::lround(x));
        } else {
            count = static_cast<int>(std::lround(mean));
        }
        count = std::min(std::max(count, 1), cap);
        // Partial Fisher-Yates over row indices.
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < count; ++i) {
            int j = static_cast<int>(rng.uniform_int(i, n - 1));
            std::swap(idx[i], idx[j]);
            int row = idx[i];
            out.mask[m][row] = 0;
            for (int c = 0; c < out.groups[m].cols(); ++c) out.groups[m](row, c) = 0.0;
        }
    }
    out.validate();
    return out;
}

namespace {

void eval_dataset(const SummaryNet& net, const NetworkParams& p, const FastWeights& fw,
                  const HierarchicalDataset& d, int label, std::span<double> grad_buf,
                  double& loss_out) {
    Tape t(p, fw);
    int loss = net.tape_loss(t, d, label);
    loss_out = t.val(loss)(0, 0);
    t.backward(loss, grad_buf);
}

double reduce_batch(const std::vector<std::vector<double>>& bufs,
                    const std::vector<double>& losses, std::span<double> grad) {
    double invB = 1.0 / static_cast<double>(bufs.size());
    for (const std::vector<double>& buf : bufs)
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += buf[i] * invB;
    double loss = 0.0;
    for (double l : losses) loss += l * invB;
    return loss;
}

}  // namespace

double batch_gradient_serial(const SummaryNet& net, const NetworkParams& p, const FastWeights& fw,
                             const LabeledBatch& batch, std::span<double> grad) {
    if (grad.size() != p.total_count()) throw StructuralError("batch_gradient: grad size mismatch");
    size_t B = batch.datasets.size();
    if (B == 0) throw StructuralError("batch_gradient: empty batch");
    std::vector<std::vector<double>> bufs(B, std::vector<double>(p.total_count(), 0.0));
    std::vector<double> losses(B, 0.0);
    for (size_t b = 0; b < B; ++b)
        eval_dataset(net, p, fw, batch.datasets[b], batch.labels[b], bufs[b], losses[b]);
    return reduce_batch(bufs, losses, grad);
}

double batch_gradient(const SummaryNet& net, const NetworkParams& p, const FastWeights& fw,
                      const LabeledBatch& batch, std::span<double> grad, int jobs) {
    if (grad.size() != p.total_count()) throw StructuralError("batch_gradient: grad size mismatch");
    size_t B = batch.datasets.size();
    if (B == 0) throw StructuralError("batch_gradient: empty batch");
    std::vector<std::vector<double>> bufs(B, std::vector<double>(p.total_count(), 0.0));
    std::vector<double> losses(B, 0.0);
    parallel_for(static_cast<long>(B), jobs, [&](long b) {
        eval_dataset(net, p, fw, batch.datasets[b], batch.labels[b], bufs[b], losses[b]);
    });
    return reduce_batch(bufs, losses, grad);
}

void write_trace_csv(const std::string& path, std::span<const TraceRow> trace) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write loss trace: " + path);
    f << "# schema_version=1\n";
    f << "step,lr,train_loss,val_loss\n";
    for (const TraceRow& r : trace) {
        f << r.step << "," << format_double(r.lr) << "," << format_double(r.train_loss) << ",";
        if (std::isfinite(r.val_loss)) f << format_double(r.val_loss);
        f << "\n";
    }
}

OfflineStore build_offline_store(std::span<const ModelSpec> model_set, int per_model,
                                 const TrainingConfig& cfg, uint64_t seed, int jobs) {
    if (per_model < 1) throw ConfigError("offline store: per_model must be >= 1");
    int J = static_cast<int>(model_set.size());
    OfflineStore store;
    store.num_models = J;
    store.datasets.resize(static_cast<size_t>(J) * per_model);
    store.labels.resize(store.datasets.size());
    parallel_for(static_cast<long>(store.datasets.size()), jobs, [&](long i) {
        int j = static_cast<int>(i / per_model);
        Rng rng = Rng::substream(seed, {kTagStore, static_cast<uint64_t>(i)});
        int M = cfg.m_sizes.sample(rng);
        std::vector<int> Ns(M);
        for (int m = 0; m < M; ++m) Ns[m] = cfg.n_sizes.sample(rng);
        HierarchicalDataset d =
            with_model_context(j, [&] { return simulate(model_set[j], M, Ns, rng); });
        d.meta.model_index = j;
        d.meta.seed = derive_seed(seed, {kTagStore, static_cast<uint64_t>(i)});
        store.datasets[i] = std::move(d);
        store.labels[i] = j;
    });
    return store;
}

void save_offline_store(const std::string& dir, const OfflineStore& store) {
    std::filesystem::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    char name[64];
    for (size_t i = 0; i < store.datasets.size(); ++i) {
        std::snprintf(name, sizeof(name), "dataset_%06zu.json", i);
        save_dataset(dir + "/" + name, store.datasets[i]);
        files.push_back({{"file", name}, {"model_index", store.labels[i]}});
    }
    nlohmann::json idx{{"schema_version", 1},
                       {"kind", "offline_store"},
                       {"count", store.datasets.size()},
                       {"num_models", store.num_models},
                       {"files", std::move(files)}};
    std::ofstream f(dir + "/index.json");
    if (!f) throw ConfigError("cannot write store index: " + dir + "/index.json");
    f << idx.dump(2) << "\n";
}

OfflineStore load_offline_store(const std::string& dir) {
    std::ifstream f(dir + "/index.json");
    if (!f) throw ConfigError("cannot open store index: " + dir + "/index.json");
    nlohmann::json idx;
    try {
        f >> idx;
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("store index parse: ") + e.what());
    }
    OfflineStore store;
    try {
        if (idx.value("kind", "") != "offline_store")
            throw StructuralError("not an offline store index: " + dir);
        store.num_models = idx.at("num_models").get<int>();
        for (const auto& entry : idx.at("files")) {
            store.datasets.push_back(load_dataset(dir + "/" + entry.at("file").get<std::string>()));
            store.labels.push_back(entry.at("model_index").get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("store index: ") + e.what());
    }
    if (store.datasets.empty()) throw StructuralError("offline store is empty: " + dir);
    return store;
}

namespace {

struct ValSet {
    std::vector<HierarchicalDataset> datasets;
    std::vector<int> labels;
};

ValSet make_validation_set(std::span<const ModelSpec> model_set, const TrainingConfig& cfg) {
    ValSet v;
    v.datasets.resize(cfg.val_sets);
    v.labels.resize(cfg.val_sets);
    int J = static_cast<int>(model_set.size());
    parallel_for(cfg.val_sets, cfg.jobs, [&](long i) {
        Rng rng = Rng::substream(cfg.seed, {kTagVal, static_cast<uint64_t>(i)});
        int j = static_cast<int>(rng.uniform_int(0, J - 1));
        int M = cfg.m_sizes.sample(rng);
        std::vector<int> Ns(M);
        for (int m = 0; m < M; ++m) Ns[m] = cfg.n_sizes.sample(rng);
        HierarchicalDataset d =
            with_model_context(j, [&] { return simulate(model_set[j], M, Ns, rng); });
        if (cfg.mask) d = apply_missingness(d, cfg.mask->mean, cfg.mask->sd, rng);
        v.datasets[i] = std::move(d);
        v.labels[i] = j;
    });
    return v;
}

}  // namespace

TrainResult train(std::span<const ModelSpec> model_set, const SummaryNet& net,
                  NetworkParams& params, const TrainingConfig& cfg, const OfflineStore* store) {
    cfg.validate();
    params.validate();
    long steps_total;
    long steps_per_epoch = 0;
    if (cfg.regime == Regime::offline) {
        if (!store) throw ConfigError("offline training requires a dataset store");
        long n = static_cast<long>(store->datasets.size());
        steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
        steps_total = steps_per_epoch * cfg.epochs;
    } else {
        steps_total = cfg.steps;
    }
    long schedule_total = cfg.schedule_total > 0 ? cfg.schedule_total : std::max(steps_total, 1l);

    OptState opt = OptState::zeros_for(params);
    FastWeights fw;
    fw.build(params);
    std::vector<double> grad(params.total_count());

    ValSet val;
    if (cfg.val_sets > 0) val = make_validation_set(model_set, cfg);
    auto eval_val = [&]() {
        PredictionCorpus c = predict_corpus(net, params, val.datasets, val.labels, cfg.jobs);
        return mean_log_loss(c);
    };

    nlohmann::json ck_extra;
    {
        std::vector<std::string> names;
        for (const ModelSpec& m : model_set) names.push_back(family_name(m.family));
        ck_extra = {{"summary", net.describe()}, {"models", names}};
    }

    TrainResult result;
    result.trace.reserve(steps_total);
    std::vector<long> order;  // offline shuffle order, rebuilt each epoch

    for (long step = 0; step < steps_total; ++step) {
        LabeledBatch batch;
        if (cfg.regime == Regime::online) {
            batch = sample_training_batch(model_set, cfg, step, cfg.jobs);
        } else {
            long epoch = step / steps_per_epoch;
            long pos = step % steps_per_epoch;
            if (pos == 0) {
                long n = static_cast<long>(store->datasets.size());
                order.resize(n);
                for (long i = 0; i < n; ++i) order[i] = i;
                Rng shuffle_rng =
                    Rng::substream(cfg.seed, {kTagShuffle, static_cast<uint64_t>(epoch)});
                for (long i = n - 1; i > 0; --i) {
                    long j = shuffle_rng.uniform_int(0, i);
                    std::swap(order[i], order[j]);
                }
            }
            long lo = pos * cfg.batch_size;
            long hi = std::min<long>(lo + cfg.batch_size,
                                     static_cast<long>(store->datasets.size()));
            batch.num_models = store->num_models;
            for (long i = lo; i < hi; ++i) {
                batch.datasets.push_back(store->datasets[order[i]]);
                batch.labels.push_back(store->labels[order[i]]);
            }
        }

        double lr = cosine_lr(cfg.initial_lr, step, schedule_total);
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = batch_gradient(net, params, fw, batch, grad, cfg.jobs);
        if (!std::isfinite(loss))
            throw NumericalError("train: non-finite loss at step " + std::to_string(step));
        if (cfg.optimizer == OptimizerTag::adam)
            adam_step(params, opt, grad, lr);
        else
            rmsprop_step(params, opt, grad, lr);
        fw.build(params);

        TraceRow row{step, lr, loss, std::numeric_limits<double>::quiet_NaN()};
        if (cfg.val_sets > 0 && cfg.val_every > 0 && (step + 1) % cfg.val_every == 0)
            row.val_loss = eval_val();
        result.trace.push_back(row);

        if (!cfg.checkpoint_prefix.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(cfg.checkpoint_prefix, params, ck_extra, &opt);
    }

    result.steps_done = steps_total;
    if (cfg.val_sets > 0) {
        result.final_val_loss = eval_val();
        if (!result.trace.empty() && !std::isfinite(result.trace.back().val_loss))
            result.trace.back().val_loss = result.final_val_loss;
    }
    if (!cfg.checkpoint_prefix.empty())
        save_checkpoint(cfg.checkpoint_prefix, params, ck_extra, &opt);
    return result;
}

PredictionCorpus predict_corpus(const SummaryNet& net, const NetworkParams& p,
                                std::span<const HierarchicalDataset> datasets,
                                std::span<const int> labels, int jobs) {
    if (datasets.size() != labels.size() || datasets.empty())
        throw StructuralError("predict_corpus: dataset/label mismatch");
    FastWeights fw;
    fw.build(p);
    PredictionCorpus c;
    c.preds.resize(static_cast<int>(datasets.size()), net.num_models);
    c.labels.assign(labels.begin(), labels.end());
    parallel_for(static_cast<long>(datasets.size()), jobs, [&](long i) {
        PmpVector pmp = net.classify_fast(p, fw, datasets[i]);
        std::copy(pmp.p.begin(), pmp.p.end(), c.preds.row(static_cast<int>(i)));
    });
    c.validate();
    return c;
}

double mean_log_loss(const PredictionCorpus& c) {
    double total = 0.0;
    for (int s = 0; s < c.size(); ++s)
        total -= std::log(std::max(c.preds(s, c.labels[s]), kProbFloor));
    return total / c.size();
}

}  // namespace hbmc
