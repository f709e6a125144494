#pragma once

#include "hbmc/autodiff.hpp"
#include "hbmc/dataset.hpp"
#include "hbmc/params.hpp"

namespace hbmc {

enum class Pooling { sum, mean };

const char* pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& s);

struct SummaryConfig {
    int level1_equivariant = 2;  // equivariant modules before pooling, per level
    int level2_equivariant = 2;
    int hidden = 64;       // hidden width of every inner network
    int eq_out1 = 32;      // per-element width after a level-1 equivariant module
    int eq_out2 = 32;      // same for level 2
    int group_dim = 32;    // per-group embedding width
    int summary_dim = 64;  // dataset embedding width
    int head_hidden = 64;
    Pooling pooling = Pooling::mean;

    nlohmann::json to_json() const;
    static SummaryConfig from_json(const nlohmann::json& j);
};

// x_tilde = h2(pool_n h1(x_n)). Permutation invariant over rows.
struct InvariantViews {
    MlpView h1, h2;
};

// out_n = h3([x_n, ctx]) where ctx = h2(pool h1(x)). Permutation equivariant.
struct EquivariantViews {
    MlpView h1, h2, h3;
};

Mat pool_rows(const Mat& x, Pooling pooling, const std::vector<uint8_t>* mask = nullptr);

// Plain (reference) module applications; the tape path must agree with these
// to the last bit.
Mat invariant_module(const NetworkParams& p, const InvariantViews& v, Pooling pooling,
                     const Mat& x, const std::vector<uint8_t>* mask = nullptr);
Mat equivariant_module(const NetworkParams& p, const EquivariantViews& v, Pooling pooling,
                       const Mat& x, const std::vector<uint8_t>* mask = nullptr);
// Composition of equivariant modules followed by one invariant module.
Mat deep_invariant_module(const NetworkParams& p, std::span<const EquivariantViews> eq,
                          const InvariantViews& inv, Pooling pooling, const Mat& x,
                          const std::vector<uint8_t>* mask = nullptr);

// Two-level summary network plus classification head. Level 1 maps each
// group's rows to a group embedding; level 2 maps the set of group embeddings
// to a dataset embedding; the head maps that to model logits.
struct SummaryNet {
    SummaryConfig cfg;
    int feature_dim = 0;
    int num_models = 0;
    std::vector<EquivariantViews> level1_eq, level2_eq;
    InvariantViews level1_inv, level2_inv;
    MlpView head;

    // Appends all layers onto `params` (which must be empty) and records the
    // layer views.
    static SummaryNet build(int feature_dim, int num_models, const SummaryConfig& cfg,
                            NetworkParams& params);

    // He-uniform weights, then raises any relu bias whose pre-activation at
    // the zero-input point is non-positive. After this, a dataset with values
    // near zero activates every unit, so no parameter is cut off from the
    // loss at init (weights stay untouched; only biases move, by a little).
    void init_params(NetworkParams& params, Rng& rng) const;

    // Reference path.
    Mat group_embedding(const NetworkParams& p, const Mat& group,
                        const std::vector<uint8_t>* mask = nullptr) const;
    Mat summary(const NetworkParams& p, const HierarchicalDataset& d) const;
    Mat logits(const NetworkParams& p, const HierarchicalDataset& d) const;
    PmpVector classify(const NetworkParams& p, const HierarchicalDataset& d) const;

    // Tape path (training and fast inference).
    int tape_logits(Tape& t, const HierarchicalDataset& d) const;
    // -log p_hat[label], with the probability floor applied inside the log.
    int tape_loss(Tape& t, const HierarchicalDataset& d, int label) const;
    PmpVector classify_fast(const NetworkParams& p, const FastWeights& fw,
                            const HierarchicalDataset& d) const;

    nlohmann::json describe() const;
    // Rebuilds the net (and its layer plan inside `params`) from describe()
    // output; layer shapes must then match any checkpoint being loaded.
    static SummaryNet from_json(const nlohmann::json& j, NetworkParams& params);
};

PmpVector softmax_pmp(std::span<const double> logits);

}  // namespace hbmc
