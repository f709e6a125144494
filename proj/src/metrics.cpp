#include "hbmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hbmc/autodiff.hpp"  // kProbFloor

namespace hbmc {

void PredictionCorpus::validate() const {
    if (preds.rows() <= 0 || preds.cols() < 2)
        throw StructuralError("corpus: need at least one row and two models");
    if (static_cast<int>(labels.size()) != preds.rows())
        throw StructuralError("corpus: label count mismatch");
    for (int s = 0; s < preds.rows(); ++s) {
        double sum = 0.0;
        for (int j = 0; j < preds.cols(); ++j) {
            double v = preds(s, j);
            if (!std::isfinite(v) || v < 0.0) throw StructuralError("corpus: bad probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw StructuralError("corpus: prediction row " + std::to_string(s) +
                                  " does not sum to 1");
        if (labels[s] < 0 || labels[s] >= preds.cols())
            throw StructuralError("corpus: label out of range");
    }
}

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

namespace {

void check_model(const PredictionCorpus& c, int j) {
    if (j < 0 || j >= c.num_models()) throw StructuralError("metrics: model index out of range");
}

}  // namespace

std::vector<CalibrationBin> calibration_curve(const PredictionCorpus& c, int j, int bins) {
    check_model(c, j);
    if (bins < 1) throw ConfigError("calibration_curve: bins must be >= 1");
    std::vector<CalibrationBin> acc(bins);
    for (int s = 0; s < c.size(); ++s) {
        double p = c.preds(s, j);
        int b = std::min(static_cast<int>(p * bins), bins - 1);
        acc[b].pp += p;
        acc[b].tp += (c.labels[s] == j) ? 1.0 : 0.0;
        acc[b].count += 1;
    }
    std::vector<CalibrationBin> out;
    for (CalibrationBin& b : acc) {
        if (b.count == 0) continue;
        b.pp /= b.count;
        b.tp /= b.count;
        out.push_back(b);
    }
    return out;
}

double ece(const PredictionCorpus& c, int j, int bins) {
    double total = 0.0;
    for (const CalibrationBin& b : calibration_curve(c, j, bins))
        total += (static_cast<double>(b.count) / c.size()) * std::abs(b.pp - b.tp);
    return total;
}

double accuracy(const PredictionCorpus& c, int j) {
    check_model(c, j);
    long agree = 0;
    for (int s = 0; s < c.size(); ++s) {
        bool pred_j = argmax_row(std::span<const double>(c.preds.row(s),
                                                         static_cast<size_t>(c.num_models()))) == j;
        bool true_j = c.labels[s] == j;
        agree += (pred_j == true_j);
    }
    return static_cast<double>(agree) / c.size();
}

double mae(const PredictionCorpus& c, int j) {
    check_model(c, j);
    double total = 0.0;
    for (int s = 0; s < c.size(); ++s)
        total += std::abs(c.preds(s, j) - (c.labels[s] == j ? 1.0 : 0.0));
    return total / c.size();
}

double rmse(const PredictionCorpus& c, int j) {
    check_model(c, j);
    double total = 0.0;
    for (int s = 0; s < c.size(); ++s) {
        double d = c.preds(s, j) - (c.labels[s] == j ? 1.0 : 0.0);
        total += d * d;
    }
    return std::sqrt(total / c.size());
}

double log_score(const PredictionCorpus& c, int j) {
    check_model(c, j);
    double total = 0.0;
    for (int s = 0; s < c.size(); ++s)
        if (c.labels[s] == j) total -= std::log(std::max(c.preds(s, j), kProbFloor));
    return total / c.size();
}

double sbc(const PredictionCorpus& c, int j, double prior_j) {
    check_model(c, j);
    double mean = 0.0;
    for (int s = 0; s < c.size(); ++s) mean += c.preds(s, j);
    return prior_j - mean / c.size();
}

Mat confusion_matrix(const PredictionCorpus& c) {
    int J = c.num_models();
    Mat counts(J, J);
    for (int s = 0; s < c.size(); ++s) {
        int pred = argmax_row(std::span<const double>(c.preds.row(s), static_cast<size_t>(J)));
        counts(c.labels[s], pred) += 1.0;
    }
    for (int r = 0; r < J; ++r) {
        double rowsum = 0.0;
        for (int k = 0; k < J; ++k) rowsum += counts(r, k);
        if (rowsum > 0.0)
            for (int k = 0; k < J; ++k) counts(r, k) /= rowsum;
    }
    return counts;
}

BootstrapReport bootstrap_metrics(const PredictionCorpus& c, int j, double prior_j, long n_boot,
                                  Rng& rng) {
    c.validate();
    check_model(c, j);
    if (n_boot < 1) throw ConfigError("bootstrap_metrics: n_boot must be >= 1");
    int S = c.size(), J = c.num_models();
    std::vector<double> va(n_boot), vm(n_boot), vr(n_boot), vl(n_boot), vs(n_boot);
    PredictionCorpus re;
    re.preds.resize(S, J);
    re.labels.resize(S);
    for (long b = 0; b < n_boot; ++b) {
        for (int s = 0; s < S; ++s) {
            int pick = static_cast<int>(rng.uniform_int(0, S - 1));
            std::copy(c.preds.row(pick), c.preds.row(pick) + J, re.preds.row(s));
            re.labels[s] = c.labels[pick];
        }
        va[b] = accuracy(re, j);
        vm[b] = mae(re, j);
        vr[b] = rmse(re, j);
        vl[b] = log_score(re, j);
        vs[b] = sbc(re, j, prior_j);
    }
    auto summarize = [n_boot](const std::vector<double>& v) {
        MetricSummary s;
        for (double x : v) s.mean += x;
        s.mean /= n_boot;
        double var = 0.0;
        for (double x : v) var += (x - s.mean) * (x - s.mean);
        s.stderr_ = n_boot > 1 ? std::sqrt(var / (n_boot - 1)) : 0.0;
        return s;
    };
    BootstrapReport r;
    r.n_boot = n_boot;
    r.accuracy = summarize(va);
    r.mae = summarize(vm);
    r.rmse = summarize(vr);
    r.log_score = summarize(vl);
    r.sbc = summarize(vs);
    return r;
}

MetricsReport build_metrics_report(const PredictionCorpus& c, int bins,
                                   std::span<const double> prior) {
    c.validate();
    if (static_cast<int>(prior.size()) != c.num_models())
        throw StructuralError("metrics report: prior size mismatch");
    MetricsReport r;
    r.corpus_size = c.size();
    r.num_models = c.num_models();
    r.bins = bins;
    for (int j = 0; j < c.num_models(); ++j) {
        r.ece.push_back(ece(c, j, bins));
        r.accuracy.push_back(accuracy(c, j));
        r.mae.push_back(mae(c, j));
        r.rmse.push_back(rmse(c, j));
        r.log_score.push_back(log_score(c, j));
        r.sbc.push_back(sbc(c, j, prior[j]));
        r.curves.push_back(calibration_curve(c, j, bins));
    }
    r.confusion = confusion_matrix(c);
    return r;
}

nlohmann::json metrics_report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "metrics_report";
    j["corpus_size"] = r.corpus_size;
    j["num_models"] = r.num_models;
    j["bins"] = r.bins;
    j["ece"] = r.ece;
    j["accuracy"] = r.accuracy;
    j["mae"] = r.mae;
    j["rmse"] = r.rmse;
    j["log_score"] = r.log_score;
    j["sbc"] = r.sbc;
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& curve : r.curves) {
        nlohmann::json rows = nlohmann::json::array();
        for (const CalibrationBin& b : curve)
            rows.push_back({{"pp", b.pp}, {"tp", b.tp}, {"count", b.count}});
        curves.push_back(std::move(rows));
    }
    j["calibration"] = std::move(curves);
    nlohmann::json conf = nlohmann::json::array();
    for (int a = 0; a < r.confusion.rows(); ++a)
        conf.push_back(std::vector<double>(r.confusion.row(a),
                                           r.confusion.row(a) + r.confusion.cols()));
    j["confusion"] = std::move(conf);
    return j;
}

void write_metrics_report(const std::string& path, const MetricsReport& r) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write metrics report: " + path);
    f << metrics_report_to_json(r).dump(2) << "\n";
}

void write_calibration_csv(const std::string& path, const MetricsReport& r) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write calibration csv: " + path);
    f << "# schema_version=1\n";
    f << "model,bin_pp,bin_tp,count\n";
    for (size_t j = 0; j < r.curves.size(); ++j)
        for (const CalibrationBin& b : r.curves[j])
            f << j << "," << format_double(b.pp) << "," << format_double(b.tp) << "," << b.count
              << "\n";
}

void write_confusion_csv(const std::string& path, const MetricsReport& r) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write confusion csv: " + path);
    f << "# schema_version=1\n";
    f << "true_model,predicted_model,fraction\n";
    for (int a = 0; a < r.confusion.rows(); ++a)
        for (int b = 0; b < r.confusion.cols(); ++b)
            f << a << "," << b << "," << format_double(r.confusion(a, b)) << "\n";
}

}  // namespace hbmc
