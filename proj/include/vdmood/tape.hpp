#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vdmood/matrix.hpp"

namespace vdmood {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }
inline double std_normal_pdf(double x) {
    return std::exp(-0.5 * x * x) * 0.3989422804014326779;
}

// gelu(x) = x * Phi(x), exact Gaussian CDF form (no tanh approximation).
inline double gelu_scalar(double x) { return x * std_normal_cdf(x); }

// Reverse-mode tape over matrix-valued nodes. Creation order is already a
// topological order (an op's inputs exist before the op), so backward is a
// single reverse sweep that touches each node exactly once. Tapes are cheap,
// single-threaded objects: build one per training step or per ODE stage.
class Tape {
  public:
    using Id = int;

    static constexpr double kLayerNormEps = 1e-5;

    // Leaf that never needs a gradient (data, noise draws, one-hot masks).
    Id constant(Matrix v) { return push_leaf(std::move(v), false); }
    // Leaf with a gradient slot (parameters, or the flow's state input).
    Id variable(Matrix v) { return push_leaf(std::move(v), true); }

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        return push(Op::kAdd, val(a) + val(b), a, b);
    }
    Id sub(Id a, Id b) {
        check_same_shape(a, b, "sub");
        return push(Op::kSub, val(a) - val(b), a, b);
    }
    Id mul(Id a, Id b) {
        check_same_shape(a, b, "mul");
        return push(Op::kMul, hadamard(val(a), val(b)), a, b);
    }
    Id matmul(Id a, Id b) { return push(Op::kMatMul, vdmood::matmul(val(a), val(b)), a, b); }

    Id scale(Id a, double c) {
        Id id = push(Op::kScale, val(a) * c, a);
        nodes_[id].scalar_arg = c;
        return id;
    }
    Id add_scalar(Id a, double c) {
        Matrix v = val(a);
        for (double& x : v.data) x += c;
        return push(Op::kAddScalar, std::move(v), a);
    }

    // rows of a plus the single row b (bias add).
    Id add_rowvec(Id a, Id b) {
        const Matrix& m = val(a);
        const Matrix& r = val(b);
        if (r.rows != 1 || r.cols != m.cols)
            throw std::invalid_argument("add_rowvec: expected 1 x cols row");
        Matrix v = m;
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j < v.cols; ++j) v.at(i, j) += r.at(0, j);
        return push(Op::kAddRowVec, std::move(v), a, b);
    }

    // row i of a scaled by b(i, 0); b is a column vector.
    Id mul_colvec(Id a, Id b) {
        const Matrix& m = val(a);
        const Matrix& c = val(b);
        if (c.cols != 1 || c.rows != m.rows)
            throw std::invalid_argument("mul_colvec: expected rows x 1 column");
        Matrix v = m;
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j < v.cols; ++j) v.at(i, j) *= c.at(i, 0);
        return push(Op::kMulColVec, std::move(v), a, b);
    }

    // a scaled by the scalar node s (shape 1 x 1).
    Id scale_by(Id a, Id s) {
        const Matrix& sv = val(s);
        if (sv.rows != 1 || sv.cols != 1) throw std::invalid_argument("scale_by: s must be 1 x 1");
        return push(Op::kScaleByNode, val(a) * sv.at(0, 0), a, s);
    }

    Id concat_cols(Id a, Id b) {
        const Matrix& x = val(a);
        const Matrix& y = val(b);
        if (x.rows != y.rows) throw std::invalid_argument("concat_cols: row count mismatch");
        Matrix v(x.rows, x.cols + y.cols);
        for (int i = 0; i < x.rows; ++i) {
            for (int j = 0; j < x.cols; ++j) v.at(i, j) = x.at(i, j);
            for (int j = 0; j < y.cols; ++j) v.at(i, x.cols + j) = y.at(i, j);
        }
        return push(Op::kConcatCols, std::move(v), a, b);
    }

    Id sin(Id a) { return unary(Op::kSin, a, [](double x) { return std::sin(x); }); }
    Id cos(Id a) { return unary(Op::kCos, a, [](double x) { return std::cos(x); }); }
    Id exp(Id a) { return unary(Op::kExp, a, [](double x) { return std::exp(x); }); }
    Id log(Id a) { return unary(Op::kLog, a, [](double x) { return std::log(x); }); }
    Id sqrt(Id a) { return unary(Op::kSqrt, a, [](double x) { return std::sqrt(x); }); }
    Id tanh(Id a) { return unary(Op::kTanh, a, [](double x) { return std::tanh(x); }); }
    Id sigmoid(Id a) {
        return unary(Op::kSigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }
    Id softplus(Id a) {
        // log(1 + e^x), written to avoid overflow for large |x|.
        return unary(Op::kSoftplus, a,
                     [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
    }
    Id gelu(Id a) { return unary(Op::kGelu, a, gelu_scalar); }
    Id recip(Id a) { return unary(Op::kRecip, a, [](double x) { return 1.0 / x; }); }

    // Per-row layer normalization with learnable gain and bias (each 1 x cols).
    Id layernorm(Id x, Id gain, Id bias) {
        const Matrix& m = val(x);
        const Matrix& g = val(gain);
        const Matrix& b = val(bias);
        if (g.rows != 1 || g.cols != m.cols || b.rows != 1 || b.cols != m.cols)
            throw std::invalid_argument("layernorm: gain/bias must be 1 x cols");
        Matrix xhat(m.rows, m.cols);
        Matrix inv_std(m.rows, 1);
        Matrix v(m.rows, m.cols);
        for (int i = 0; i < m.rows; ++i) {
            double mean = 0.0;
            for (int j = 0; j < m.cols; ++j) mean += m.at(i, j);
            mean /= m.cols;
            double var = 0.0;
            for (int j = 0; j < m.cols; ++j) {
                double d = m.at(i, j) - mean;
                var += d * d;
            }
            var /= m.cols;
            double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_std.at(i, 0) = inv;
            for (int j = 0; j < m.cols; ++j) {
                double h = (m.at(i, j) - mean) * inv;
                xhat.at(i, j) = h;
                v.at(i, j) = h * g.at(0, j) + b.at(0, j);
            }
        }
        Id id = push(Op::kLayerNorm, std::move(v), x, gain, bias);
        nodes_[id].aux = std::move(xhat);
        nodes_[id].aux2 = std::move(inv_std);
        return id;
    }

    // Per-row softmax with max subtraction, so equal inputs give exactly 1/n.
    Id softmax(Id a) {
        Matrix v = val(a);
        for (int i = 0; i < v.rows; ++i) {
            double mx = v.at(i, 0);
            for (int j = 1; j < v.cols; ++j) mx = std::max(mx, v.at(i, j));
            double sum = 0.0;
            for (int j = 0; j < v.cols; ++j) {
                double e = std::exp(v.at(i, j) - mx);
                v.at(i, j) = e;
                sum += e;
            }
            for (int j = 0; j < v.cols; ++j) v.at(i, j) /= sum;
        }
        return push(Op::kSoftmax, std::move(v), a);
    }

    Id sum(Id a) {
        Matrix v(1, 1);
        v.at(0, 0) = sum_all(val(a));
        return push(Op::kSumAll, std::move(v), a);
    }

    const Matrix& value(Id id) const { return nodes_[id].value; }

    const Matrix& gradient(Id id) const {
        const Node& n = nodes_[id];
        if (!n.requires_grad) throw std::invalid_argument("gradient: node does not track gradients");
        return n.grad;
    }

    // Reverse sweep from a scalar root. Gradients of earlier backward calls on
    // the same tape are discarded first, so each call stands alone.
    void backward(Id root) {
        Node& r = nodes_[root];
        if (r.value.rows != 1 || r.value.cols != 1)
            throw std::invalid_argument("backward: loss must be scalar (1 x 1)");
        if (!r.requires_grad)
            throw std::invalid_argument("backward: root has no differentiable inputs");
        for (Id id = 0; id <= root; ++id) {
            Node& n = nodes_[id];
            if (!n.requires_grad) continue;
            if (!n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows, n.value.cols);
            else std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
        }
        r.grad.at(0, 0) = 1.0;
        for (Id id = root; id >= 0; --id) backprop_node(id);
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    enum class Op {
        kLeaf, kAdd, kSub, kMul, kMatMul, kScale, kAddScalar, kAddRowVec, kMulColVec,
        kScaleByNode, kConcatCols, kSin, kCos, kExp, kLog, kSqrt, kTanh, kSigmoid,
        kSoftplus, kGelu, kRecip, kLayerNorm, kSoftmax, kSumAll,
    };

    struct Node {
        Op op = Op::kLeaf;
        Id a = -1, b = -1, c = -1;
        bool requires_grad = false;
        double scalar_arg = 0.0;
        Matrix value;
        Matrix grad;
        Matrix aux;   // layernorm: normalized rows
        Matrix aux2;  // layernorm: per-row 1/std
    };

    std::vector<Node> nodes_;

    const Matrix& val(Id id) const { return nodes_[id].value; }

    Id push_leaf(Matrix v, bool requires_grad) {
        Node n;
        n.op = Op::kLeaf;
        n.requires_grad = requires_grad;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id push(Op op, Matrix v, Id a, Id b = -1, Id c = -1) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.c = c;
        n.requires_grad = nodes_[a].requires_grad || (b >= 0 && nodes_[b].requires_grad) ||
                          (c >= 0 && nodes_[c].requires_grad);
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    template <class F>
    Id unary(Op op, Id a, F f) {
        Matrix v = val(a);
        for (double& x : v.data) x = f(x);
        return push(op, std::move(v), a);
    }

    void check_same_shape(Id a, Id b, const char* what) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }

    bool wants(Id id) const { return id >= 0 && nodes_[id].requires_grad; }
    Matrix& g(Id id) { return nodes_[id].grad; }

    void backprop_node(Id id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.op == Op::kLeaf) return;
        const Matrix& gy = n.grad;
        switch (n.op) {
            case Op::kAdd:
                if (wants(n.a)) accumulate(g(n.a), gy, 1.0);
                if (wants(n.b)) accumulate(g(n.b), gy, 1.0);
                break;
            case Op::kSub:
                if (wants(n.a)) accumulate(g(n.a), gy, 1.0);
                if (wants(n.b)) accumulate(g(n.b), gy, -1.0);
                break;
            case Op::kMul:
                if (wants(n.a)) accumulate_prod(g(n.a), gy, val(n.b));
                if (wants(n.b)) accumulate_prod(g(n.b), gy, val(n.a));
                break;
            case Op::kMatMul:
                if (wants(n.a)) accumulate(g(n.a), vdmood::matmul(gy, transpose(val(n.b))), 1.0);
                if (wants(n.b)) accumulate(g(n.b), vdmood::matmul(transpose(val(n.a)), gy), 1.0);
                break;
            case Op::kScale:
                if (wants(n.a)) accumulate(g(n.a), gy, n.scalar_arg);
                break;
            case Op::kAddScalar:
                if (wants(n.a)) accumulate(g(n.a), gy, 1.0);
                break;
            case Op::kAddRowVec:
                if (wants(n.a)) accumulate(g(n.a), gy, 1.0);
                if (wants(n.b)) {
                    Matrix& gb = g(n.b);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) gb.at(0, j) += gy.at(i, j);
                }
                break;
            case Op::kMulColVec: {
                const Matrix& a = val(n.a);
                const Matrix& col = val(n.b);
                if (wants(n.a)) {
                    Matrix& ga = g(n.a);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < gy.cols; ++j) ga.at(i, j) += gy.at(i, j) * col.at(i, 0);
                }
                if (wants(n.b)) {
                    Matrix& gb = g(n.b);
                    for (int i = 0; i < gy.rows; ++i) {
                        double s = 0.0;
                        for (int j = 0; j < gy.cols; ++j) s += gy.at(i, j) * a.at(i, j);
                        gb.at(i, 0) += s;
                    }
                }
                break;
            }
            case Op::kScaleByNode: {
                double s = val(n.b).at(0, 0);
                if (wants(n.a)) accumulate(g(n.a), gy, s);
                if (wants(n.b)) g(n.b).at(0, 0) += dot_all(gy, val(n.a));
                break;
            }
            case Op::kConcatCols: {
                const Matrix& x = val(n.a);
                if (wants(n.a)) {
                    Matrix& ga = g(n.a);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < x.cols; ++j) ga.at(i, j) += gy.at(i, j);
                }
                if (wants(n.b)) {
                    Matrix& gb = g(n.b);
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = x.cols; j < gy.cols; ++j) gb.at(i, j - x.cols) += gy.at(i, j);
                }
                break;
            }
            case Op::kSin:
                unary_back(n, gy, [](double x, double) { return std::cos(x); });
                break;
            case Op::kCos:
                unary_back(n, gy, [](double x, double) { return -std::sin(x); });
                break;
            case Op::kExp:
                unary_back(n, gy, [](double, double y) { return y; });
                break;
            case Op::kLog:
                unary_back(n, gy, [](double x, double) { return 1.0 / x; });
                break;
            case Op::kSqrt:
                unary_back(n, gy, [](double, double y) { return 0.5 / y; });
                break;
            case Op::kTanh:
                unary_back(n, gy, [](double, double y) { return 1.0 - y * y; });
                break;
            case Op::kSigmoid:
                unary_back(n, gy, [](double, double y) { return y * (1.0 - y); });
                break;
            case Op::kSoftplus:
                unary_back(n, gy, [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
                break;
            case Op::kGelu:
                unary_back(n, gy, [](double x, double) {
                    return std_normal_cdf(x) + x * std_normal_pdf(x);
                });
                break;
            case Op::kRecip:
                unary_back(n, gy, [](double, double y) { return -y * y; });
                break;
            case Op::kLayerNorm: {
                const Matrix& xhat = n.aux;
                const Matrix& inv_std = n.aux2;
                const Matrix& gain = val(n.b);
                int cols = gy.cols;
                if (wants(n.b) || wants(n.c)) {
                    for (int i = 0; i < gy.rows; ++i)
                        for (int j = 0; j < cols; ++j) {
                            if (wants(n.b)) g(n.b).at(0, j) += gy.at(i, j) * xhat.at(i, j);
                            if (wants(n.c)) g(n.c).at(0, j) += gy.at(i, j);
                        }
                }
                if (wants(n.a)) {
                    Matrix& ga = g(n.a);
                    for (int i = 0; i < gy.rows; ++i) {
                        double mean_h = 0.0, mean_hx = 0.0;
                        for (int j = 0; j < cols; ++j) {
                            double h = gy.at(i, j) * gain.at(0, j);
                            mean_h += h;
                            mean_hx += h * xhat.at(i, j);
                        }
                        mean_h /= cols;
                        mean_hx /= cols;
                        double inv = inv_std.at(i, 0);
                        for (int j = 0; j < cols; ++j) {
                            double h = gy.at(i, j) * gain.at(0, j);
                            ga.at(i, j) += inv * (h - mean_h - xhat.at(i, j) * mean_hx);
                        }
                    }
                }
                break;
            }
            case Op::kSoftmax: {
                if (!wants(n.a)) break;
                const Matrix& y = n.value;
                Matrix& ga = g(n.a);
                for (int i = 0; i < gy.rows; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < gy.cols; ++j) s += gy.at(i, j) * y.at(i, j);
                    for (int j = 0; j < gy.cols; ++j)
                        ga.at(i, j) += y.at(i, j) * (gy.at(i, j) - s);
                }
                break;
            }
            case Op::kSumAll: {
                if (!wants(n.a)) break;
                double s = gy.at(0, 0);
                for (double& v : g(n.a).data) v += s;
                break;
            }
            case Op::kLeaf:
                break;
        }
    }

    static void accumulate(Matrix& dst, const Matrix& src, double scale) {
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += scale * src.data[i];
    }
    static void accumulate_prod(Matrix& dst, const Matrix& a, const Matrix& b) {
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += a.data[i] * b.data[i];
    }

    template <class F>
    void unary_back(Node& n, const Matrix& gy, F dfdx) {
        if (!wants(n.a)) return;
        const Matrix& x = val(n.a);
        const Matrix& y = n.value;
        Matrix& ga = g(n.a);
        for (size_t i = 0; i < gy.size(); ++i)
            ga.data[i] += gy.data[i] * dfdx(x.data[i], y.data[i]);
    }
};

}  // namespace vdmood
