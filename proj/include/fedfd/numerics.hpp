#ifndef FEDFD_NUMERICS_HPP
#define FEDFD_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfd/matrix.hpp"

namespace fedfd {

constexpr int kDefaultTaylorOrder = 12;

// Temperature softmax with max-subtraction. Output sums to 1, entries > 0.
inline std::vector<double> softmax_t(const std::vector<double>& v, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_t: tau must be positive");
    if (v.empty()) throw std::invalid_argument("softmax_t: empty input");
    double m = v[0];
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError("softmax_t: non-finite input");
        m = std::max(m, x);
    }
    std::vector<double> out(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp((v[i] - m) / tau);
        s += out[i];
    }
    for (double& x : out) x /= s;
    return out;
}

// Row-wise temperature softmax.
inline Matrix softmax_rows(const Matrix& a, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_rows: tau must be positive");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double m = a(i, 0);
        for (std::size_t j = 1; j < a.cols(); ++j) m = std::max(m, a(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = std::exp((a(i, j) - m) / tau);
            s += out(i, j);
        }
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= s;
    }
    return out;
}

inline Matrix log_softmax_rows(const Matrix& a, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("log_softmax_rows: tau must be positive");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double m = a(i, 0);
        for (std::size_t j = 1; j < a.cols(); ++j) m = std::max(m, a(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += std::exp((a(i, j) - m) / tau);
        const double lse = std::log(s);
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = (a(i, j) - m) / tau - lse;
    }
    return out;
}

// KL(p || q) = sum p_i log(p_i / q_i); terms with p_i = 0 contribute 0.
inline double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_div: length mismatch");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(q[i] > 0.0)) throw std::invalid_argument("kl_div: q entries must be positive");
        if (p[i] < 0.0) throw std::invalid_argument("kl_div: p entries must be nonnegative");
        sp += p[i];
        sq += q[i];
    }
    if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6)
        throw std::invalid_argument("kl_div: inputs must sum to 1 within 1e-6");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

// -log softmax(logits)[label], computed through log-sum-exp.
inline double cross_entropy(const std::vector<double>& logits, std::size_t label) {
    if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
    double m = logits[0];
    for (double x : logits) {
        if (!std::isfinite(x)) throw NumericError("cross_entropy: non-finite logits");
        m = std::max(m, x);
    }
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    return m + std::log(s) - logits[label];
}

constexpr std::size_t skew_param_count(std::size_t dim) { return dim * (dim - 1) / 2; }

// Skew-symmetric W from the free parameters of its strict upper triangle,
// row-major: W = -W^T exactly, zero diagonal.
inline Matrix skew_from_params(const std::vector<double>& a, std::size_t dim) {
    if (a.size() != skew_param_count(dim)) {
        throw std::invalid_argument("skew_from_params: expected " +
                                    std::to_string(skew_param_count(dim)) + " parameters, got " +
                                    std::to_string(a.size()));
    }
    Matrix w(dim, dim);
    std::size_t k = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = i + 1; j < dim; ++j, ++k) {
            w(i, j) = a[k];
            w(j, i) = -a[k];
        }
    }
    return w;
}

// Number of halvings that brings the 1-norm to <= 0.5.
inline int exp_squarings(double norm) {
    int s = 0;
    while (norm > 0.5) {
        norm *= 0.5;
        ++s;
    }
    return s;
}

// exp(W) by Taylor series up to degree `order` on W/2^s, then s squarings.
// For skew-symmetric W the result is orthogonal to ~1e-13 at order >= 12.
inline Matrix matrix_exp(const Matrix& w, int order = kDefaultTaylorOrder) {
    if (w.rows() != w.cols()) throw std::invalid_argument("matrix_exp: matrix must be square");
    if (order < 1) throw std::invalid_argument("matrix_exp: order must be >= 1");
    require_finite(w, "matrix_exp");
    const std::size_t n = w.rows();
    const int s = exp_squarings(one_norm(w));
    const Matrix x = scale(w, std::ldexp(1.0, -s));
    Matrix acc = Matrix::identity(n);
    Matrix term = Matrix::identity(n);
    for (int k = 1; k <= order; ++k) {
        term = scale(matmul(term, x), 1.0 / k);
        acc = add(acc, term);
    }
    for (int i = 0; i < s; ++i) acc = matmul(acc, acc);
    return acc;
}

// ||M M^T - I||_F
inline double orthogonality_residual(const Matrix& m) {
    const Matrix g = matmul_nt(m, m);
    double s = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const double d = g(i, j) - (i == j ? 1.0 : 0.0);
            s += d * d;
        }
    return std::sqrt(s);
}

}  // namespace fedfd

#endif  // FEDFD_NUMERICS_HPP
