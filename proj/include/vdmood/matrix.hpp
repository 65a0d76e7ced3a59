#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace vdmood {

// Dense row-major matrix of doubles. All numerics in this library are 64-bit.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
    }
    Matrix(int r, int c, std::initializer_list<double> vals) : Matrix(r, c) {
        if (static_cast<int>(vals.size()) != r * c)
            throw std::invalid_argument("Matrix: initializer size mismatch");
        size_t i = 0;
        for (double v : vals) data[i++] = v;
    }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, double v) {
        Matrix m(r, c);
        for (double& x : m.data) x = v;
        return m;
    }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
    Matrix c(a.rows, b.cols);
    // i-k-j order so the inner loop walks both b and c contiguously.
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("operator+: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("operator-: shape mismatch");
    Matrix c = a;
    for (size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Matrix operator*(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}
inline Matrix operator*(double s, const Matrix& a) { return a * s; }

inline double dot_all(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot_all: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double sum_all(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return s;
}

}  // namespace vdmood
