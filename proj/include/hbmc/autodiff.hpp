#pragma once

#include <vector>

#include "hbmc/params.hpp"

namespace hbmc {

// Probability floor used before taking logs anywhere in the loss path.
inline constexpr double kProbFloor = 1e-12;

// Transposed copies (in x out) of every weight matrix. With input features in
// the outer loop the forward pass becomes a contiguous axpy, which is ~7x
// faster than the dot-product form on wide rows. Rebuild after optimizer steps;
// holders must treat it as a cache of NetworkParams, never the source of truth.
struct FastWeights {
    std::vector<double> wt;
    std::vector<size_t> off;

    void build(const NetworkParams& p);
    const double* layer(int k) const { return wt.data() + off[k]; }
};

// Reference forward pass: plain dot products over the primary (out x in)
// layout, one activation per layer. Deliberately the obvious implementation;
// the tape is tested for exact agreement against it.
Mat mlp_apply(const NetworkParams& p, const MlpView& v, const Mat& x);

// Reverse-mode tape over matrix-valued nodes (rows = set elements). Forward
// values are computed eagerly as ops are recorded; backward() accumulates
// parameter gradients into a flat vector aligned with NetworkParams::values.
//
// Masks passed to pooling ops are borrowed pointers; the dataset they belong
// to must outlive the tape.
class Tape {
  public:
    Tape(const NetworkParams& p, const FastWeights& fw) : p_(&p), fw_(&fw) {}

    int leaf(const Mat& x);
    // One network layer: Y = act(X W^T + b). The activation comes from the
    // layer's own tag.
    int affine(int layer, int x);
    int mlp(const MlpView& v, int x);
    int pool_sum(int x, const std::vector<uint8_t>* mask = nullptr);
    int pool_mean(int x, const std::vector<uint8_t>* mask = nullptr);
    // Rows of `set` each get `ctx` (a single row) appended.
    int concat_broadcast(int set, int ctx);
    // Stack single-row nodes into one matrix, in the given order.
    int vstack(const std::vector<int>& rows);
    int softmax_row(int x);
    // Row-wise x - logsumexp(x). Unlike log_floor(softmax_row(x)) this stays
    // finite and keeps a usable gradient however saturated the logits are,
    // which is what the training loss needs.
    int log_softmax_row(int x);
    // log(max(x, kProbFloor)) elementwise; gradient is zero where the floor binds.
    int log_floor(int x);
    int pick(int x, int r, int c);
    int scale(int x, double k);

    const Mat& val(int id) const { return nodes_[id].val; }
    size_t num_nodes() const { return nodes_.size(); }

    // Seeds d(node)/d(node) = 1 at a scalar node and accumulates parameter
    // gradients (+=) into grad, which must have NetworkParams::total_count()
    // entries.
    void backward(int id, std::span<double> grad);

  private:
    enum class Op {
        leaf,
        affine,
        pool_sum,
        pool_mean,
        concat_b,
        vstack,
        softmax,
        log_softmax,
        log_floor,
        pick,
        scale
    };

    struct Node {
        Op op;
        int a = -1, b = -1;
        int layer = -1;
        int r = 0, c = 0;
        double k = 1.0;
        const std::vector<uint8_t>* mask = nullptr;
        int observed = 0;
        std::vector<int> kids;
        Mat val, adj;
    };

    int push(Node n, const char* what);

    const NetworkParams* p_;
    const FastWeights* fw_;
    std::vector<Node> nodes_;
};

}  // namespace hbmc
