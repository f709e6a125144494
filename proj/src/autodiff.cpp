#include "hbmc/autodiff.hpp"

#include <algorithm>

namespace hbmc {

void FastWeights::build(const NetworkParams& p) {
    off.assign(p.layers.size(), 0);
    size_t total = 0;
    for (size_t k = 0; k < p.layers.size(); ++k) {
        off[k] = total;
        total += static_cast<size_t>(p.layers[k].out) * p.layers[k].in;
    }
    wt.resize(total);
    for (size_t k = 0; k < p.layers.size(); ++k) {
        int out = p.layers[k].out, in = p.layers[k].in;
        const double* w = p.w(k).data();
        double* t = wt.data() + off[k];
        for (int o = 0; o < out; ++o)
            for (int i = 0; i < in; ++i) t[static_cast<size_t>(i) * out + o] = w[static_cast<size_t>(o) * in + i];
    }
}

Mat mlp_apply(const NetworkParams& p, const MlpView& v, const Mat& x) {
    v.check_chain(p);
    if (x.cols() != v.in_dim(p)) throw StructuralError("mlp_apply: input width mismatch");
    Mat cur = x;
    for (int k = v.first; k < v.first + v.count; ++k) {
        int out = p.layers[k].out, in = p.layers[k].in;
        Mat next(cur.rows(), out);
        const double* w = p.w(k).data();
        const double* b = p.b(k).data();
        for (int n = 0; n < cur.rows(); ++n) {
            const double* xr = cur.row(n);
            double* y = next.row(n);
            for (int o = 0; o < out; ++o) {
                double acc = b[o];
                const double* wr = w + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
                y[o] = acc;
            }
        }
        if (p.layers[k].act == Activation::relu)
            for (double& y : next.flat()) y = std::max(y, 0.0);
        cur = std::move(next);
    }
    return cur;
}

int Tape::push(Node n, const char* what) {
    if (!all_finite(n.val.flat()))
        throw NumericalError(std::string("tape: non-finite value from ") + what + " at node " +
                             std::to_string(nodes_.size()));
    n.adj.resize(n.val.rows(), n.val.cols());
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const Mat& x) {
    Node n;
    n.op = Op::leaf;
    n.val = x;
    return push(std::move(n), "leaf");
}

int Tape::affine(int layer, int x) {
    const Mat& X = nodes_[x].val;
    int out = p_->layers[layer].out, in = p_->layers[layer].in;
    if (X.cols() != in) throw StructuralError("affine: input width mismatch");
    Node n;
    n.op = Op::affine;
    n.a = x;
    n.layer = layer;
    n.val.resize(X.rows(), out);
    const double* wt = fw_->layer(layer);
    const double* b = p_->b(layer).data();
    for (int r = 0; r < X.rows(); ++r) {
        const double* xr = X.row(r);
        double* y = n.val.row(r);
        std::copy(b, b + out, y);
        for (int i = 0; i < in; ++i) {
            double xi = xr[i];
            const double* wrow = wt + static_cast<size_t>(i) * out;
            for (int o = 0; o < out; ++o) y[o] += xi * wrow[o];
        }
    }
    if (p_->layers[layer].act == Activation::relu)
        for (double& y : n.val.flat()) y = std::max(y, 0.0);
    return push(std::move(n), "affine");
}

int Tape::mlp(const MlpView& v, int x) {
    int cur = x;
    for (int k = v.first; k < v.first + v.count; ++k) cur = affine(k, cur);
    return cur;
}

int Tape::pool_sum(int x, const std::vector<uint8_t>* mask) {
    const Mat& X = nodes_[x].val;
    if (mask && static_cast<int>(mask->size()) != X.rows())
        throw StructuralError("pool: mask length mismatch");
    Node n;
    n.op = Op::pool_sum;
    n.a = x;
    n.mask = mask;
    n.val.resize(1, X.cols());
    int obs = 0;
    for (int r = 0; r < X.rows(); ++r) {
        if (mask && !(*mask)[r]) continue;
        ++obs;
        const double* xr = X.row(r);
        double* y = n.val.row(0);
        for (int c = 0; c < X.cols(); ++c) y[c] += xr[c];
    }
    if (obs == 0) throw StructuralError("pool: no observed rows");
    n.observed = obs;
    return push(std::move(n), "pool_sum");
}

int Tape::pool_mean(int x, const std::vector<uint8_t>* mask) {
    const Mat& X = nodes_[x].val;
    if (mask && static_cast<int>(mask->size()) != X.rows())
        throw StructuralError("pool: mask length mismatch");
    Node n;
    n.op = Op::pool_mean;
    n.a = x;
    n.mask = mask;
    n.val.resize(1, X.cols());
    int obs = 0;
    for (int r = 0; r < X.rows(); ++r) {
        if (mask && !(*mask)[r]) continue;
        ++obs;
        const double* xr = X.row(r);
        double* y = n.val.row(0);
        for (int c = 0; c < X.cols(); ++c) y[c] += xr[c];
    }
    if (obs == 0) throw StructuralError("pool: no observed rows");
    n.observed = obs;
    // Divide rather than multiply by a reciprocal so the value is bit-identical
    // to what pool_rows produces on the reference path.
    for (double& v : n.val.flat()) v /= obs;
    return push(std::move(n), "pool_mean");
}

int Tape::concat_broadcast(int set, int ctx) {
    const Mat& A = nodes_[set].val;
    const Mat& B = nodes_[ctx].val;
    if (B.rows() != 1) throw StructuralError("concat_broadcast: context must be a single row");
    Node n;
    n.op = Op::concat_b;
    n.a = set;
    n.b = ctx;
    n.val.resize(A.rows(), A.cols() + B.cols());
    for (int r = 0; r < A.rows(); ++r) {
        double* y = n.val.row(r);
        std::copy(A.row(r), A.row(r) + A.cols(), y);
        std::copy(B.row(0), B.row(0) + B.cols(), y + A.cols());
    }
    return push(std::move(n), "concat_broadcast");
}

int Tape::vstack(const std::vector<int>& rows) {
    if (rows.empty()) throw StructuralError("vstack: no inputs");
    int cols = nodes_[rows[0]].val.cols();
    Node n;
    n.op = Op::vstack;
    n.kids = rows;
    n.val.resize(static_cast<int>(rows.size()), cols);
    for (size_t r = 0; r < rows.size(); ++r) {
        const Mat& v = nodes_[rows[r]].val;
        if (v.rows() != 1 || v.cols() != cols) throw StructuralError("vstack: shape mismatch");
        std::copy(v.row(0), v.row(0) + cols, n.val.row(static_cast<int>(r)));
    }
    return push(std::move(n), "vstack");
}

int Tape::softmax_row(int x) {
    const Mat& X = nodes_[x].val;
    Node n;
    n.op = Op::softmax;
    n.a = x;
    n.val.resize(X.rows(), X.cols());
    for (int r = 0; r < X.rows(); ++r) {
        const double* xr = X.row(r);
        double* y = n.val.row(r);
        double mx = *std::max_element(xr, xr + X.cols());
        double s = 0.0;
        for (int c = 0; c < X.cols(); ++c) s += (y[c] = std::exp(xr[c] - mx));
        for (int c = 0; c < X.cols(); ++c) y[c] /= s;  // matches softmax_pmp exactly
    }
    return push(std::move(n), "softmax_row");
}

int Tape::log_softmax_row(int x) {
    const Mat& X = nodes_[x].val;
    Node n;
    n.op = Op::log_softmax;
    n.a = x;
    n.val.resize(X.rows(), X.cols());
    for (int r = 0; r < X.rows(); ++r) {
        const double* xr = X.row(r);
        double* y = n.val.row(r);
        double mx = *std::max_element(xr, xr + X.cols());
        double s = 0.0;
        for (int c = 0; c < X.cols(); ++c) s += std::exp(xr[c] - mx);
        double lse = mx + std::log(s);
        for (int c = 0; c < X.cols(); ++c) y[c] = xr[c] - lse;
    }
    return push(std::move(n), "log_softmax_row");
}

int Tape::log_floor(int x) {
    const Mat& X = nodes_[x].val;
    Node n;
    n.op = Op::log_floor;
    n.a = x;
    n.val.resize(X.rows(), X.cols());
    for (size_t i = 0; i < X.size(); ++i)
        n.val.flat()[i] = std::log(std::max(X.flat()[i], kProbFloor));
    return push(std::move(n), "log_floor");
}

int Tape::pick(int x, int r, int c) {
    const Mat& X = nodes_[x].val;
    if (r < 0 || r >= X.rows() || c < 0 || c >= X.cols())
        throw StructuralError("pick: index out of range");
    Node n;
    n.op = Op::pick;
    n.a = x;
    n.r = r;
    n.c = c;
    n.val.resize(1, 1);
    n.val(0, 0) = X(r, c);
    return push(std::move(n), "pick");
}

int Tape::scale(int x, double k) {
    Node n;
    n.op = Op::scale;
    n.a = x;
    n.k = k;
    n.val = nodes_[x].val;
    for (double& v : n.val.flat()) v *= k;
    return push(std::move(n), "scale");
}

void Tape::backward(int id, std::span<double> grad) {
    if (grad.size() != p_->total_count()) throw StructuralError("backward: grad size mismatch");
    if (nodes_[id].val.size() != 1) throw StructuralError("backward: root must be scalar");

    for (int k = 0; k <= id; ++k) nodes_[k].adj.fill(0.0);
    nodes_[id].adj(0, 0) = 1.0;
    std::vector<char> touched(static_cast<size_t>(id) + 1, 0);
    touched[id] = 1;

    for (int k = id; k >= 0; --k) {
        if (!touched[k]) continue;
        Node& n = nodes_[k];
        const Mat& dy = n.adj;
        auto reach = [&](int child) { touched[child] = 1; };
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::affine: {
                Node& xn = nodes_[n.a];
                const Mat& X = xn.val;
                int out = p_->layers[n.layer].out, in = p_->layers[n.layer].in;
                const double* w = p_->values.data() + p_->w_off[n.layer];
                double* gw = grad.data() + p_->w_off[n.layer];
                double* gb = grad.data() + p_->b_off[n.layer];
                bool relu = p_->layers[n.layer].act == Activation::relu;
                std::vector<double> t(out);
                for (int r = 0; r < X.rows(); ++r) {
                    const double* dyr = dy.row(r);
                    const double* yr = n.val.row(r);
                    for (int o = 0; o < out; ++o)
                        t[o] = relu && yr[o] <= 0.0 ? 0.0 : dyr[o];
                    double* dx = xn.adj.row(r);
                    const double* xr = X.row(r);
                    for (int o = 0; o < out; ++o) {
                        double a = t[o];
                        if (a == 0.0) continue;
                        const double* wr = w + static_cast<size_t>(o) * in;
                        double* gwr = gw + static_cast<size_t>(o) * in;
                        for (int i = 0; i < in; ++i) {
                            dx[i] += a * wr[i];
                            gwr[i] += a * xr[i];
                        }
                        gb[o] += a;
                    }
                }
                reach(n.a);
                break;
            }
            case Op::pool_sum: {
                Node& xn = nodes_[n.a];
                for (int r = 0; r < xn.val.rows(); ++r) {
                    if (n.mask && !(*n.mask)[r]) continue;
                    double* dx = xn.adj.row(r);
                    const double* d = dy.row(0);
                    for (int c = 0; c < xn.val.cols(); ++c) dx[c] += d[c];
                }
                reach(n.a);
                break;
            }
            case Op::pool_mean: {
                Node& xn = nodes_[n.a];
                double inv = 1.0 / n.observed;
                for (int r = 0; r < xn.val.rows(); ++r) {
                    if (n.mask && !(*n.mask)[r]) continue;
                    double* dx = xn.adj.row(r);
                    const double* d = dy.row(0);
                    for (int c = 0; c < xn.val.cols(); ++c) dx[c] += d[c] * inv;
                }
                reach(n.a);
                break;
            }
            case Op::concat_b: {
                Node& an = nodes_[n.a];
                Node& bn = nodes_[n.b];
                int ca = an.val.cols(), cb = bn.val.cols();
                for (int r = 0; r < an.val.rows(); ++r) {
                    const double* d = dy.row(r);
                    double* da = an.adj.row(r);
                    for (int c = 0; c < ca; ++c) da[c] += d[c];
                    double* db = bn.adj.row(0);
                    for (int c = 0; c < cb; ++c) db[c] += d[ca + c];
                }
                reach(n.a);
                reach(n.b);
                break;
            }
            case Op::vstack: {
                for (size_t r = 0; r < n.kids.size(); ++r) {
                    Node& kn = nodes_[n.kids[r]];
                    const double* d = dy.row(static_cast<int>(r));
                    double* dk = kn.adj.row(0);
                    for (int c = 0; c < n.val.cols(); ++c) dk[c] += d[c];
                    reach(n.kids[r]);
                }
                break;
            }
            case Op::softmax: {
                Node& xn = nodes_[n.a];
                for (int r = 0; r < n.val.rows(); ++r) {
                    const double* y = n.val.row(r);
                    const double* d = dy.row(r);
                    double dot = 0.0;
                    for (int c = 0; c < n.val.cols(); ++c) dot += d[c] * y[c];
                    double* dx = xn.adj.row(r);
                    for (int c = 0; c < n.val.cols(); ++c) dx[c] += y[c] * (d[c] - dot);
                }
                reach(n.a);
                break;
            }
            case Op::log_softmax: {
                Node& xn = nodes_[n.a];
                for (int r = 0; r < n.val.rows(); ++r) {
                    const double* y = n.val.row(r);
                    const double* d = dy.row(r);
                    double dot = 0.0;
                    for (int c = 0; c < n.val.cols(); ++c) dot += d[c];
                    double* dx = xn.adj.row(r);
                    for (int c = 0; c < n.val.cols(); ++c) dx[c] += d[c] - std::exp(y[c]) * dot;
                }
                reach(n.a);
                break;
            }
            case Op::log_floor: {
                Node& xn = nodes_[n.a];
                for (size_t i = 0; i < n.val.size(); ++i) {
                    double x = xn.val.flat()[i];
                    if (x > kProbFloor) xn.adj.flat()[i] += dy.flat()[i] / x;
                }
                reach(n.a);
                break;
            }
            case Op::pick: {
                nodes_[n.a].adj(n.r, n.c) += dy(0, 0);
                reach(n.a);
                break;
            }
            case Op::scale: {
                Node& xn = nodes_[n.a];
                for (size_t i = 0; i < n.val.size(); ++i) xn.adj.flat()[i] += n.k * dy.flat()[i];
                reach(n.a);
                break;
            }
        }
    }
    if (!all_finite(grad)) throw NumericalError("backward: non-finite gradient");
}

}  // namespace hbmc
