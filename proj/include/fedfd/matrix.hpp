#ifndef FEDFD_MATRIX_HPP
#define FEDFD_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedfd {

// Raised when a computation produces or encounters non-finite values.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major float64 matrix. Row and column vectors are 1xN / Nx1.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix row_vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Matrix(1, n, std::move(v));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
    }
}

inline void require_finite(const Matrix& m, const char* who) {
    if (!m.all_finite()) throw NumericError(std::string(who) + ": non-finite entries");
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()));
    }
    Matrix c(a.rows(), b.cols());
    // ikj order keeps the inner loop contiguous in b and c
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: inner dimensions " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    }
    return c;
}

// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn: inner dimensions " + std::to_string(a.rows()) +
                                    " vs " + std::to_string(b.rows()));
    }
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += b[k];
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] -= b[k];
    return c;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] *= s;
    return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] *= b[k];
    return c;
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

// Max absolute column sum.
inline double one_norm(const Matrix& m) {
    double best = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += std::fabs(m(i, j));
        if (s > best) best = s;
    }
    return best;
}

inline double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double v : m.data()) best = std::max(best, std::fabs(v));
    return best;
}

// Leading block [0,r) x [0,c), copied.
inline Matrix take_block(const Matrix& m, std::size_t r, std::size_t c) {
    if (r > m.rows() || c > m.cols()) {
        throw std::invalid_argument("take_block: block " + std::to_string(r) + "x" +
                                    std::to_string(c) + " exceeds " + std::to_string(m.rows()) +
                                    "x" + std::to_string(m.cols()));
    }
    Matrix out(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) = m(i, j);
    return out;
}

inline Matrix take_rows(const Matrix& m, std::size_t r) { return take_block(m, r, m.cols()); }

}  // namespace fedfd

#endif  // FEDFD_MATRIX_HPP
