#pragma once

#include <span>
#include <string>
#include <vector>

#include "hbmc/common.hpp"
#include "hbmc/rng.hpp"

#include "json.hpp"

namespace hbmc {

// Predicted model probabilities with ground-truth labels for S datasets.
struct PredictionCorpus {
    Mat preds;                // S x J, rows sum to 1
    std::vector<int> labels;  // in [0, J)

    int size() const { return preds.rows(); }
    int num_models() const { return preds.cols(); }
    void validate() const;
};

// Index of the row maximum; ties break toward the lower index.
int argmax_row(std::span<const double> row);

struct CalibrationBin {
    double pp = 0.0;  // mean predicted probability in the bin
    double tp = 0.0;  // fraction of true labels == j in the bin
    long count = 0;
};

// Equally spaced bins over predicted probability for model j; empty bins are
// omitted.
std::vector<CalibrationBin> calibration_curve(const PredictionCorpus& c, int j, int bins);

// Bin-weighted mean |PP - TP|.
double ece(const PredictionCorpus& c, int j, int bins);

// Fraction of rows where (argmax == j) agrees with (label == j).
double accuracy(const PredictionCorpus& c, int j);

double mae(const PredictionCorpus& c, int j);
double rmse(const PredictionCorpus& c, int j);
// -(1/S) sum over rows with label == j of log pred_j (floored), i.e. the
// indicator-weighted logarithmic score; summing over j recovers the mean
// training log-loss.
double log_score(const PredictionCorpus& c, int j);

// prior_j minus the mean predicted probability of model j.
double sbc(const PredictionCorpus& c, int j, double prior_j);

// Rows = true model, columns = argmax prediction, row-normalized. Rows for
// labels absent from the corpus are left all-zero.
Mat confusion_matrix(const PredictionCorpus& c);

struct MetricSummary {
    double mean = 0.0;
    double stderr_ = 0.0;
};

struct BootstrapReport {
    long n_boot = 0;
    MetricSummary accuracy, mae, rmse, log_score, sbc;
};

// Row resampling with replacement; stderr is the bootstrap standard deviation.
BootstrapReport bootstrap_metrics(const PredictionCorpus& c, int j, double prior_j, long n_boot,
                                  Rng& rng);

struct MetricsReport {
    long corpus_size = 0;
    int num_models = 0;
    int bins = 0;
    std::vector<double> ece, accuracy, mae, rmse, log_score, sbc;  // per model
    std::vector<std::vector<CalibrationBin>> curves;               // per model
    Mat confusion;
};

MetricsReport build_metrics_report(const PredictionCorpus& c, int bins,
                                   std::span<const double> prior);

nlohmann::json metrics_report_to_json(const MetricsReport& r);
void write_metrics_report(const std::string& path, const MetricsReport& r);
void write_calibration_csv(const std::string& path, const MetricsReport& r);
void write_confusion_csv(const std::string& path, const MetricsReport& r);

}  // namespace hbmc
