#ifndef FEDFD_AUTODIFF_HPP
#define FEDFD_AUTODIFF_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedfd/matrix.hpp"
#include "fedfd/numerics.hpp"

namespace fedfd {

// Handle into a GradTape.
class Value {
public:
    Value() = default;
    explicit Value(int id) : id_(id) {}
    int id() const { return id_; }
    bool valid() const { return id_ >= 0; }

private:
    int id_ = -1;
};

// Reverse-mode tape over Matrix values.
//
// A loss is built forward from constants and trainable parameters through the
// primitives below; backward() then accumulates exact adjoints. The matrix
// exponential is composed from scale/matmul/add, so its gradient flows through
// every Taylor term and every squaring with no special casing.
class GradTape {
public:
    Value constant(Matrix m) { return push(Op::Constant, std::move(m), -1, -1, false); }

    Value param(Matrix m) { return push(Op::Param, std::move(m), -1, -1, true); }

    const Matrix& value(Value v) const { return node(v).val; }

    Value matmul(Value a, Value b) {
        return push(Op::MatMul, fedfd::matmul(val(a), val(b)), a.id(), b.id());
    }

    // a * b^T
    Value matmul_nt(Value a, Value b) {
        return push(Op::MatMulNT, fedfd::matmul_nt(val(a), val(b)), a.id(), b.id());
    }

    Value transpose(Value a) { return push(Op::Transpose, fedfd::transpose(val(a)), a.id(), -1); }

    Value add(Value a, Value b) { return push(Op::Add, fedfd::add(val(a), val(b)), a.id(), b.id()); }

    Value sub(Value a, Value b) { return push(Op::Sub, fedfd::sub(val(a), val(b)), a.id(), b.id()); }

    // a (r x c) + bias (1 x c) broadcast over rows
    Value add_rowvec(Value a, Value bias) {
        const Matrix& m = val(a);
        const Matrix& v = val(bias);
        if (v.rows() != 1 || v.cols() != m.cols())
            throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
        Matrix out = m;
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += v(0, j);
        return push(Op::AddRowVec, std::move(out), a.id(), bias.id());
    }

    Value scale(Value a, double c) {
        Value v = push(Op::Scale, fedfd::scale(val(a), c), a.id(), -1);
        node(v).scalar = c;
        return v;
    }

    Value mul(Value a, Value b) {
        return push(Op::Mul, hadamard(val(a), val(b)), a.id(), b.id());
    }

    Value relu(Value a) {
        Matrix out = val(a);
        for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
        return push(Op::Relu, std::move(out), a.id(), -1);
    }

    Value log(Value a) {
        Matrix out = val(a);
        for (double& x : out.data()) x = std::log(x);
        return push(Op::Log, std::move(out), a.id(), -1);
    }

    Value softmax_rows(Value a, double tau) {
        Value v = push(Op::SoftmaxRows, fedfd::softmax_rows(val(a), tau), a.id(), -1);
        node(v).scalar = tau;
        return v;
    }

    Value log_softmax_rows(Value a, double tau) {
        Value v = push(Op::LogSoftmaxRows, fedfd::log_softmax_rows(val(a), tau), a.id(), -1);
        node(v).scalar = tau;
        return v;
    }

    Value sum(Value a) {
        double s = 0.0;
        for (double x : val(a).data()) s += x;
        return push(Op::Sum, Matrix(1, 1, {s}), a.id(), -1);
    }

    Value take_rows(Value a, std::size_t r) {
        Value v = push(Op::TakeRows, fedfd::take_rows(val(a), r), a.id(), -1);
        node(v).index = r;
        return v;
    }

    // free params (1 x D(D-1)/2) -> D x D skew-symmetric
    Value skew(Value a, std::size_t dim) {
        const Matrix& p = val(a);
        if (p.rows() != 1) throw std::invalid_argument("skew: parameters must be a row vector");
        Value v = push(Op::Skew, skew_from_params(p.data(), dim), a.id(), -1);
        node(v).index = dim;
        return v;
    }

    // mean over rows of (logsumexp(row) - row[label]).
    Value cross_entropy_mean(Value logits, std::vector<int> labels) {
        const Matrix& z = val(logits);
        if (labels.size() != z.rows())
            throw std::invalid_argument("cross_entropy_mean: one label per row required");
        double total = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
                throw std::invalid_argument("cross_entropy_mean: label out of range");
            double m = z(i, 0);
            for (std::size_t j = 1; j < z.cols(); ++j) m = std::max(m, z(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < z.cols(); ++j) s += std::exp(z(i, j) - m);
            total += m + std::log(s) - z(i, static_cast<std::size_t>(y));
        }
        Value v = push(Op::CrossEntropyMean, Matrix(1, 1, {total / static_cast<double>(z.rows())}),
                       logits.id(), -1);
        node(v).labels = std::move(labels);
        return v;
    }

    // exp(w) composed from primitives: Taylor to degree `order` on w/2^s, then
    // s squarings, s chosen so the scaled 1-norm is <= 0.5.
    Value matrix_exp(Value w, int order = kDefaultTaylorOrder) {
        const Matrix& m = val(w);
        if (m.rows() != m.cols()) throw std::invalid_argument("matrix_exp: matrix must be square");
        if (order < 1) throw std::invalid_argument("matrix_exp: order must be >= 1");
        const std::size_t n = m.rows();
        const int s = exp_squarings(one_norm(m));
        Value x = scale(w, std::ldexp(1.0, -s));
        Value acc = constant(Matrix::identity(n));
        Value term = constant(Matrix::identity(n));
        for (int k = 1; k <= order; ++k) {
            term = scale(matmul(term, x), 1.0 / k);
            acc = add(acc, term);
        }
        for (int i = 0; i < s; ++i) acc = matmul(acc, acc);
        return acc;
    }

    // mean over rows of KL(p || q), both row-stochastic; accepts precomputed
    // log-probabilities so softmax outputs never pass through a bare log.
    Value kl_rows_mean(Value p, Value log_p, Value log_q) {
        const std::size_t rows = val(p).rows();
        Value kl = sum(mul(p, sub(log_p, log_q)));
        return scale(kl, 1.0 / static_cast<double>(rows));
    }

    // Accumulates d loss / d node for every node reachable from `loss`.
    void backward(Value loss) {
        const Matrix& l = val(loss);
        if (l.rows() != 1 || l.cols() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        if (!std::isfinite(l(0, 0))) throw NumericError("backward: non-finite loss");
        grads_.assign(nodes_.size(), Matrix());
        accumulate(loss.id(), Matrix(1, 1, {1.0}));
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (grads_[i].empty() || !nodes_[i].requires_grad) continue;
            propagate(i);
        }
    }

    // Zero matrix when no gradient reached v.
    Matrix grad(Value v) const {
        const Node& n = node(v);
        if (static_cast<std::size_t>(v.id()) < grads_.size() && !grads_[v.id()].empty())
            return grads_[v.id()];
        return Matrix(n.val.rows(), n.val.cols());
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        Constant,
        Param,
        MatMul,
        MatMulNT,
        Transpose,
        Add,
        Sub,
        AddRowVec,
        Scale,
        Mul,
        Relu,
        Log,
        SoftmaxRows,
        LogSoftmaxRows,
        Sum,
        TakeRows,
        Skew,
        CrossEntropyMean,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Matrix val;
        double scalar = 0.0;
        std::size_t index = 0;
        std::vector<int> labels;
        bool requires_grad = false;
    };

    Value push(Op op, Matrix val, int a, int b, bool explicit_grad = false) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.val = std::move(val);
        n.requires_grad = explicit_grad || (a >= 0 && nodes_[a].requires_grad) ||
                          (b >= 0 && nodes_[b].requires_grad);
        nodes_.push_back(std::move(n));
        return Value(static_cast<int>(nodes_.size()) - 1);
    }

    const Matrix& val(Value v) const { return node(v).val; }

    Node& node(Value v) {
        if (!v.valid() || static_cast<std::size_t>(v.id()) >= nodes_.size())
            throw std::invalid_argument("GradTape: invalid value handle");
        return nodes_[v.id()];
    }
    const Node& node(Value v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id()) >= nodes_.size())
            throw std::invalid_argument("GradTape: invalid value handle");
        return nodes_[v.id()];
    }

    void accumulate(int id, const Matrix& g) {
        if (id < 0 || !nodes_[id].requires_grad) return;
        if (grads_[id].empty())
            grads_[id] = g;
        else
            for (std::size_t k = 0; k < g.size(); ++k) grads_[id][k] += g[k];
    }

    void propagate(int i) {
        const Node& n = nodes_[i];
        const Matrix& g = grads_[i];
        switch (n.op) {
            case Op::Constant:
            case Op::Param:
                break;
            case Op::MatMul:
                accumulate(n.a, fedfd::matmul_nt(g, nodes_[n.b].val));
                accumulate(n.b, fedfd::matmul_tn(nodes_[n.a].val, g));
                break;
            case Op::MatMulNT:
                accumulate(n.a, fedfd::matmul(g, nodes_[n.b].val));
                accumulate(n.b, fedfd::matmul_tn(g, nodes_[n.a].val));
                break;
            case Op::Transpose:
                accumulate(n.a, fedfd::transpose(g));
                break;
            case Op::Add:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::Sub:
                accumulate(n.a, g);
                accumulate(n.b, fedfd::scale(g, -1.0));
                break;
            case Op::AddRowVec: {
                accumulate(n.a, g);
                Matrix gb(1, g.cols());
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
                accumulate(n.b, gb);
                break;
            }
            case Op::Scale:
                accumulate(n.a, fedfd::scale(g, n.scalar));
                break;
            case Op::Mul:
                accumulate(n.a, hadamard(g, nodes_[n.b].val));
                accumulate(n.b, hadamard(g, nodes_[n.a].val));
                break;
            case Op::Relu: {
                Matrix ga = g;
                const Matrix& in = nodes_[n.a].val;
                for (std::size_t k = 0; k < ga.size(); ++k)
                    if (in[k] <= 0.0) ga[k] = 0.0;
                accumulate(n.a, ga);
                break;
            }
            case Op::Log: {
                Matrix ga = g;
                const Matrix& in = nodes_[n.a].val;
                for (std::size_t k = 0; k < ga.size(); ++k) ga[k] /= in[k];
                accumulate(n.a, ga);
                break;
            }
            case Op::SoftmaxRows: {
                // d a = (p .* g - (sum p .* g) p) / tau, per row
                const Matrix& p = n.val;
                Matrix ga(p.rows(), p.cols());
                for (std::size_t r = 0; r < p.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < p.cols(); ++c) dot += p(r, c) * g(r, c);
                    for (std::size_t c = 0; c < p.cols(); ++c)
                        ga(r, c) = p(r, c) * (g(r, c) - dot) / n.scalar;
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::LogSoftmaxRows: {
                // d a = (g - (sum g) p) / tau, per row, with p = exp(out)
                const Matrix& l = n.val;
                Matrix ga(l.rows(), l.cols());
                for (std::size_t r = 0; r < l.rows(); ++r) {
                    double gs = 0.0;
                    for (std::size_t c = 0; c < l.cols(); ++c) gs += g(r, c);
                    for (std::size_t c = 0; c < l.cols(); ++c)
                        ga(r, c) = (g(r, c) - gs * std::exp(l(r, c))) / n.scalar;
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::Sum: {
                const Matrix& in = nodes_[n.a].val;
                accumulate(n.a, Matrix(in.rows(), in.cols(), g(0, 0)));
                break;
            }
            case Op::TakeRows: {
                const Matrix& in = nodes_[n.a].val;
                Matrix ga(in.rows(), in.cols());
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(r, c);
                accumulate(n.a, ga);
                break;
            }
            case Op::Skew: {
                const std::size_t dim = n.index;
                Matrix ga(1, skew_param_count(dim));
                std::size_t k = 0;
                for (std::size_t r = 0; r < dim; ++r)
                    for (std::size_t c = r + 1; c < dim; ++c, ++k) ga(0, k) = g(r, c) - g(c, r);
                accumulate(n.a, ga);
                break;
            }
            case Op::CrossEntropyMean: {
                const Matrix& z = nodes_[n.a].val;
                const double w = g(0, 0) / static_cast<double>(z.rows());
                Matrix ga = fedfd::softmax_rows(z, 1.0);
                for (std::size_t r = 0; r < z.rows(); ++r)
                    ga(r, static_cast<std::size_t>(n.labels[r])) -= 1.0;
                accumulate(n.a, fedfd::scale(ga, w));
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<Matrix> grads_;
};

// Builds a scalar loss from trainable parameter blocks staged on a fresh tape.
using LossBuilder = std::function<Value(GradTape&, const std::vector<Value>&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Central differences at `eps`; throws NumericError if any probe is non-finite.
inline double grad_check(const LossBuilder& build, std::vector<Matrix> params, double eps = 1e-5) {
    std::vector<Matrix> analytic;
    {
        GradTape tape;
        std::vector<Value> vs;
        vs.reserve(params.size());
        for (const Matrix& p : params) vs.push_back(tape.param(p));
        Value loss = build(tape, vs);
        tape.backward(loss);
        for (const Value& v : vs) analytic.push_back(tape.grad(v));
    }
    const auto eval = [&](const std::vector<Matrix>& at) {
        GradTape tape;
        std::vector<Value> vs;
        vs.reserve(at.size());
        for (const Matrix& p : at) vs.push_back(tape.constant(p));
        const Matrix& l = tape.value(build(tape, vs));
        if (l.rows() != 1 || l.cols() != 1 || !std::isfinite(l(0, 0)))
            throw NumericError("grad_check: non-finite loss at probe point");
        return l(0, 0);
    };
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t k = 0; k < params[p].size(); ++k) {
            const double orig = params[p][k];
            params[p][k] = orig + eps;
            const double up = eval(params);
            params[p][k] = orig - eps;
            const double down = eval(params);
            params[p][k] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double ana = analytic[p][k];
            worst = std::max(worst, std::fabs(ana - fd) / std::max(1.0, std::fabs(ana)));
        }
    }
    return worst;
}

}  // namespace fedfd

#endif  // FEDFD_AUTODIFF_HPP
