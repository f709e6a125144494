#pragma once

#include <optional>

#include "hbmc/metrics.hpp"
#include "hbmc/simulators.hpp"
#include "hbmc/summary_net.hpp"

namespace hbmc {

enum class OptimizerTag { adam, rmsprop };
enum class Regime { online, offline };

const char* optimizer_name(OptimizerTag t);
OptimizerTag optimizer_from_name(const std::string& s);
const char* regime_name(Regime r);
Regime regime_from_name(const std::string& s);

// Discrete uniform over [lo, hi]; fixed size when lo == hi.
struct SizeDist {
    int lo = 1, hi = 1;
    int sample(Rng& rng) const { return static_cast<int>(rng.uniform_int(lo, hi)); }
    void validate() const {
        if (lo < 1 || hi < lo) throw ConfigError("size distribution needs 1 <= lo <= hi");
    }
};

// Missing-trial count distribution for data augmentation.
struct MaskAugment {
    double mean = 0.0;
    double sd = 0.0;
};

struct TrainingConfig {
    int batch_size = 32;
    long steps = 0;   // online regime
    int epochs = 0;   // offline regime
    OptimizerTag optimizer = OptimizerTag::adam;
    double initial_lr = 5e-4;
    long schedule_total = 0;  // cosine horizon; 0 = derive from steps/epochs
    Regime regime = Regime::online;
    SizeDist m_sizes{25, 25}, n_sizes{25, 25};
    std::optional<MaskAugment> mask;
    uint64_t seed = 0;
    long checkpoint_every = 500;
    std::string checkpoint_prefix;  // empty = no checkpoints
    int val_sets = 0;               // 0 = no validation during training
    long val_every = 0;             // 0 = final evaluation only
    int jobs = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct LabeledBatch {
    std::vector<HierarchicalDataset> datasets;
    std::vector<int> labels;
    int num_models = 0;

    Mat one_hot() const;  // exactly one 1 per row
};

// -sum_j 1[model j] log pmp_j with the probability floor applied.
double log_loss(const PmpVector& pmp, std::span<const double> one_hot);
double log_loss(const PmpVector& pmp, int label);

// Batch `step` of the online stream: model indices uniform, sizes from the
// config, one independent RNG substream per dataset (derived from the seed,
// the step, and the dataset's position, so results do not depend on worker
// count).
LabeledBatch sample_training_batch(std::span<const ModelSpec> model_set,
                                   const TrainingConfig& cfg, long step, int jobs);

// Copy of `data` with a masked-trial augmentation applied: per group draws a
// masked count from a discretized normal truncated to [1, N_m - 1] (groups
// with a single row are left alone), then zeroes that many uniformly chosen
// rows and records them in the mask.
HierarchicalDataset apply_missingness(const HierarchicalDataset& data, double mean, double sd,
                                      Rng& rng);

// Mean loss over the batch; parameter gradient (scaled by 1/B) accumulated
// into grad. Per-dataset gradients are reduced in dataset order, so the result
// is bit-identical for any worker count; batch_gradient_serial is the plain
// loop the parallel version is tested against.
double batch_gradient_serial(const SummaryNet& net, const NetworkParams& p, const FastWeights& fw,
                             const LabeledBatch& batch, std::span<double> grad);
double batch_gradient(const SummaryNet& net, const NetworkParams& p, const FastWeights& fw,
                      const LabeledBatch& batch, std::span<double> grad, int jobs);

struct TraceRow {
    long step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN = not evaluated
};

void write_trace_csv(const std::string& path, std::span<const TraceRow> trace);

struct OfflineStore {
    std::vector<HierarchicalDataset> datasets;
    std::vector<int> labels;
    int num_models = 0;
};

OfflineStore build_offline_store(std::span<const ModelSpec> model_set, int per_model,
                                 const TrainingConfig& cfg, uint64_t seed, int jobs);
void save_offline_store(const std::string& dir, const OfflineStore& store);
OfflineStore load_offline_store(const std::string& dir);

struct TrainResult {
    std::vector<TraceRow> trace;
    long steps_done = 0;
    double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Runs the configured regime, mutating params in place. For the offline
// regime a store must be supplied. Throws NumericalError on a non-finite
// loss (any checkpoint already written at the configured cadence is left on
// disk untouched).
TrainResult train(std::span<const ModelSpec> model_set, const SummaryNet& net,
                  NetworkParams& params, const TrainingConfig& cfg,
                  const OfflineStore* store = nullptr);

// Predictions over a labeled evaluation set (parallel over datasets).
PredictionCorpus predict_corpus(const SummaryNet& net, const NetworkParams& p,
                                std::span<const HierarchicalDataset> datasets,
                                std::span<const int> labels, int jobs);
double mean_log_loss(const PredictionCorpus& c);

}  // namespace hbmc
