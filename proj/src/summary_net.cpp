#include "hbmc/summary_net.hpp"

#include <algorithm>
#include <cmath>

namespace hbmc {

const char* pooling_name(Pooling p) { return p == Pooling::sum ? "sum" : "mean"; }

Pooling pooling_from_name(const std::string& s) {
    if (s == "sum") return Pooling::sum;
    if (s == "mean") return Pooling::mean;
    throw ConfigError("unknown pooling: " + s);
}

nlohmann::json SummaryConfig::to_json() const {
    return {{"level1_equivariant", level1_equivariant},
            {"level2_equivariant", level2_equivariant},
            {"hidden", hidden},
            {"eq_out1", eq_out1},
            {"eq_out2", eq_out2},
            {"group_dim", group_dim},
            {"summary_dim", summary_dim},
            {"head_hidden", head_hidden},
            {"pooling", pooling_name(pooling)}};
}

SummaryConfig SummaryConfig::from_json(const nlohmann::json& j) {
    SummaryConfig c;
    c.level1_equivariant = j.value("level1_equivariant", c.level1_equivariant);
    c.level2_equivariant = j.value("level2_equivariant", c.level2_equivariant);
    c.hidden = j.value("hidden", c.hidden);
    c.eq_out1 = j.value("eq_out1", c.eq_out1);
    c.eq_out2 = j.value("eq_out2", c.eq_out2);
    c.group_dim = j.value("group_dim", c.group_dim);
    c.summary_dim = j.value("summary_dim", c.summary_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    if (j.contains("pooling")) c.pooling = pooling_from_name(j.at("pooling").get<std::string>());
    if (c.level1_equivariant < 0 || c.level2_equivariant < 0 || c.hidden <= 0 ||
        c.eq_out1 <= 0 || c.eq_out2 <= 0 || c.group_dim <= 0 || c.summary_dim <= 0 ||
        c.head_hidden <= 0)
        throw ConfigError("summary config: bad dimensions");
    return c;
}

Mat pool_rows(const Mat& x, Pooling pooling, const std::vector<uint8_t>* mask) {
    if (mask && static_cast<int>(mask->size()) != x.rows())
        throw StructuralError("pool_rows: mask length mismatch");
    Mat out(1, x.cols());
    int obs = 0;
    for (int r = 0; r < x.rows(); ++r) {
        if (mask && !(*mask)[r]) continue;
        ++obs;
        for (int c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
    }
    if (obs == 0) throw StructuralError("pool_rows: no observed rows");
    if (pooling == Pooling::mean)
        for (double& v : out.flat()) v /= obs;
    return out;
}

Mat invariant_module(const NetworkParams& p, const InvariantViews& v, Pooling pooling,
                     const Mat& x, const std::vector<uint8_t>* mask) {
    Mat h = mlp_apply(p, v.h1, x);
    Mat pooled = pool_rows(h, pooling, mask);
    return mlp_apply(p, v.h2, pooled);
}

Mat equivariant_module(const NetworkParams& p, const EquivariantViews& v, Pooling pooling,
                       const Mat& x, const std::vector<uint8_t>* mask) {
    Mat h = mlp_apply(p, v.h1, x);
    Mat pooled = pool_rows(h, pooling, mask);
    Mat ctx = mlp_apply(p, v.h2, pooled);
    Mat cc(x.rows(), x.cols() + ctx.cols());
    for (int r = 0; r < x.rows(); ++r) {
        std::copy(x.row(r), x.row(r) + x.cols(), cc.row(r));
        std::copy(ctx.row(0), ctx.row(0) + ctx.cols(), cc.row(r) + x.cols());
    }
    return mlp_apply(p, v.h3, cc);
}

Mat deep_invariant_module(const NetworkParams& p, std::span<const EquivariantViews> eq,
                          const InvariantViews& inv, Pooling pooling, const Mat& x,
                          const std::vector<uint8_t>* mask) {
    Mat cur = x;
    for (const EquivariantViews& v : eq) cur = equivariant_module(p, v, pooling, cur, mask);
    return invariant_module(p, inv, pooling, cur, mask);
}

namespace {

MlpView add_mlp(NetworkParams& p, int in, int hidden, int out) {
    MlpView v;
    v.first = static_cast<int>(p.layers.size());
    p.add_layer(hidden, in, Activation::relu);
    p.add_layer(out, hidden, Activation::linear);
    v.count = 2;
    return v;
}

EquivariantViews add_equivariant(NetworkParams& p, int in, int hidden, int out) {
    EquivariantViews v;
    v.h1 = add_mlp(p, in, hidden, out);
    v.h2 = add_mlp(p, out, hidden, out);
    v.h3 = add_mlp(p, in + out, hidden, out);
    return v;
}

InvariantViews add_invariant(NetworkParams& p, int in, int hidden, int out) {
    InvariantViews v;
    v.h1 = add_mlp(p, in, hidden, hidden);
    v.h2 = add_mlp(p, hidden, hidden, out);
    return v;
}

}  // namespace

SummaryNet SummaryNet::build(int feature_dim, int num_models, const SummaryConfig& cfg,
                             NetworkParams& params) {
    if (!params.layers.empty())
        throw StructuralError("SummaryNet::build expects an empty parameter store");
    if (feature_dim <= 0 || num_models < 2)
        throw ConfigError("summary net needs feature_dim >= 1 and at least two models");
    SummaryNet net;
    net.cfg = cfg;
    net.feature_dim = feature_dim;
    net.num_models = num_models;

    int in = feature_dim;
    for (int k = 0; k < cfg.level1_equivariant; ++k) {
        net.level1_eq.push_back(add_equivariant(params, in, cfg.hidden, cfg.eq_out1));
        in = cfg.eq_out1;
    }
    net.level1_inv = add_invariant(params, in, cfg.hidden, cfg.group_dim);

    in = cfg.group_dim;
    for (int k = 0; k < cfg.level2_equivariant; ++k) {
        net.level2_eq.push_back(add_equivariant(params, in, cfg.hidden, cfg.eq_out2));
        in = cfg.eq_out2;
    }
    net.level2_inv = add_invariant(params, in, cfg.hidden, cfg.summary_dim);

    net.head.first = static_cast<int>(params.layers.size());
    params.add_layer(cfg.head_hidden, cfg.summary_dim, Activation::relu);
    params.add_layer(cfg.head_hidden, cfg.head_hidden, Activation::relu);
    params.add_layer(num_models, cfg.head_hidden, Activation::linear);
    net.head.count = 3;
    return net;
}

namespace {

// Forward one h-net on a single row, lifting each relu bias just enough that
// the unit stays active at this point. Callers thread the zero-input point
// through the whole module graph; pooling a one-row set returns the row
// itself, so the walk below mirrors the real forward pass exactly.
Mat lift_mlp(NetworkParams& p, const MlpView& v, const Mat& in, double floor_act) {
    Mat cur = in;
    for (int k = v.first; k < v.first + v.count; ++k) {
        int out = p.layers[k].out, width = p.layers[k].in;
        Mat next(1, out);
        for (int o = 0; o < out; ++o) {
            double acc = p.b(k)[o];
            for (int i = 0; i < width; ++i) acc += p.w(k)[static_cast<size_t>(o) * width + i] * cur(0, i);
            if (p.layers[k].act == Activation::relu && acc <= 0.0) {
                p.b(k)[o] += floor_act - acc;
                acc = floor_act;
            }
            next(0, o) = acc;
        }
        cur = std::move(next);
    }
    return cur;
}

Mat lift_equivariant(NetworkParams& p, const EquivariantViews& v, const Mat& in,
                     double floor_act) {
    Mat ctx = lift_mlp(p, v.h2, lift_mlp(p, v.h1, in, floor_act), floor_act);
    Mat cc(1, in.cols() + ctx.cols());
    std::copy(in.row(0), in.row(0) + in.cols(), cc.row(0));
    std::copy(ctx.row(0), ctx.row(0) + ctx.cols(), cc.row(0) + in.cols());
    return lift_mlp(p, v.h3, cc, floor_act);
}

}  // namespace

void SummaryNet::init_params(NetworkParams& params, Rng& rng) const {
    // He scaling suits the relu layers but roughly doubles the variance when
    // applied to a linear layer, and with every h-net ending in one the
    // doublings compound until the head emits logits in the tens, saturating
    // softmax before training starts. Linear layers therefore get the
    // variance-preserving bound sqrt(3/in) instead.
    for (size_t k = 0; k < params.layers.size(); ++k) {
        double gain = params.layers[k].act == Activation::relu ? 6.0 : 3.0;
        double limit = std::sqrt(gain / params.layers[k].in);
        for (double& v : params.w(k)) v = rng.uniform(-limit, limit);
        for (double& v : params.b(k)) v = 0.01;
    }
    const double floor_act = 0.01;
    Mat cur(1, feature_dim);  // the all-zeros observation
    for (const EquivariantViews& v : level1_eq) cur = lift_equivariant(params, v, cur, floor_act);
    cur = lift_mlp(params, level1_inv.h2, lift_mlp(params, level1_inv.h1, cur, floor_act),
                   floor_act);
    for (const EquivariantViews& v : level2_eq) cur = lift_equivariant(params, v, cur, floor_act);
    cur = lift_mlp(params, level2_inv.h2, lift_mlp(params, level2_inv.h1, cur, floor_act),
                   floor_act);
    lift_mlp(params, head, cur, floor_act);
}

Mat SummaryNet::group_embedding(const NetworkParams& p, const Mat& group,
                                const std::vector<uint8_t>* mask) const {
    return deep_invariant_module(p, level1_eq, level1_inv, cfg.pooling, group, mask);
}

Mat SummaryNet::summary(const NetworkParams& p, const HierarchicalDataset& d) const {
    Mat set2(d.num_groups(), cfg.group_dim);
    for (int m = 0; m < d.num_groups(); ++m) {
        const std::vector<uint8_t>* mask = d.has_mask() ? &d.mask[m] : nullptr;
        Mat e = group_embedding(p, d.groups[m], mask);
        std::copy(e.row(0), e.row(0) + e.cols(), set2.row(m));
    }
    return deep_invariant_module(p, level2_eq, level2_inv, cfg.pooling, set2, nullptr);
}

Mat SummaryNet::logits(const NetworkParams& p, const HierarchicalDataset& d) const {
    return mlp_apply(p, head, summary(p, d));
}

PmpVector SummaryNet::classify(const NetworkParams& p, const HierarchicalDataset& d) const {
    Mat l = logits(p, d);
    return softmax_pmp(std::span<const double>(l.row(0), static_cast<size_t>(l.cols())));
}

namespace {

int tape_pool(Tape& t, Pooling pooling, int x, const std::vector<uint8_t>* mask) {
    return pooling == Pooling::sum ? t.pool_sum(x, mask) : t.pool_mean(x, mask);
}

int tape_equivariant(Tape& t, const EquivariantViews& v, Pooling pooling, int x,
                     const std::vector<uint8_t>* mask) {
    int ctx = t.mlp(v.h2, tape_pool(t, pooling, t.mlp(v.h1, x), mask));
    return t.mlp(v.h3, t.concat_broadcast(x, ctx));
}

int tape_invariant(Tape& t, const InvariantViews& v, Pooling pooling, int x,
                   const std::vector<uint8_t>* mask) {
    return t.mlp(v.h2, tape_pool(t, pooling, t.mlp(v.h1, x), mask));
}

}  // namespace

int SummaryNet::tape_logits(Tape& t, const HierarchicalDataset& d) const {
    if (d.feature_dim() != feature_dim)
        throw StructuralError("summary net: dataset feature_dim mismatch");
    std::vector<int> embeddings;
    embeddings.reserve(d.num_groups());
    for (int m = 0; m < d.num_groups(); ++m) {
        const std::vector<uint8_t>* mask = d.has_mask() ? &d.mask[m] : nullptr;
        int cur = t.leaf(d.groups[m]);
        for (const EquivariantViews& v : level1_eq) cur = tape_equivariant(t, v, cfg.pooling, cur, mask);
        embeddings.push_back(tape_invariant(t, level1_inv, cfg.pooling, cur, mask));
    }
    int cur = t.vstack(embeddings);
    for (const EquivariantViews& v : level2_eq) cur = tape_equivariant(t, v, cfg.pooling, cur, nullptr);
    int z = tape_invariant(t, level2_inv, cfg.pooling, cur, nullptr);
    return t.mlp(head, z);
}

int SummaryNet::tape_loss(Tape& t, const HierarchicalDataset& d, int label) const {
    if (label < 0 || label >= num_models) throw StructuralError("tape_loss: label out of range");
    // Cross-entropy straight from the logits. Going through softmax and a
    // floored log instead would zero the gradient exactly on the confidently
    // wrong datasets, the ones training most needs to hear about.
    return t.scale(t.pick(t.log_softmax_row(tape_logits(t, d)), 0, label), -1.0);
}

PmpVector SummaryNet::classify_fast(const NetworkParams& p, const FastWeights& fw,
                                    const HierarchicalDataset& d) const {
    Tape t(p, fw);
    int l = tape_logits(t, d);
    const Mat& lv = t.val(l);
    return softmax_pmp(std::span<const double>(lv.row(0), static_cast<size_t>(lv.cols())));
}

nlohmann::json SummaryNet::describe() const {
    return {{"feature_dim", feature_dim}, {"num_models", num_models}, {"config", cfg.to_json()}};
}

SummaryNet SummaryNet::from_json(const nlohmann::json& j, NetworkParams& params) {
    try {
        SummaryConfig cfg = SummaryConfig::from_json(j.at("config"));
        return build(j.at("feature_dim").get<int>(), j.at("num_models").get<int>(), cfg, params);
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string("summary net description: ") + e.what());
    }
}

PmpVector softmax_pmp(std::span<const double> logits) {
    if (logits.empty()) throw StructuralError("softmax_pmp: empty logits");
    double mx = *std::max_element(logits.begin(), logits.end());
    PmpVector out;
    out.p.resize(logits.size());
    double s = 0.0;
    for (size_t j = 0; j < logits.size(); ++j) s += (out.p[j] = std::exp(logits[j] - mx));
    for (double& v : out.p) v /= s;
    out.validate();
    return out;
}

}  // namespace hbmc
