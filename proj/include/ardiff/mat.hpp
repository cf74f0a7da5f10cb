#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ardiff/errors.hpp"

namespace ardiff {

// Dense row-major matrix of doubles. All model math runs in double precision;
// 32-bit floats appear only at serialization boundaries.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, double fill) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return v.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }
};

inline void require_shape(const Mat& m, int rows, int cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw ShapeMismatch(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                            std::to_string(m.cols));
    }
}

inline void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                            std::to_string(b.cols));
    }
}

// c += a * b
inline void matmul_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
}

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) {
        throw ShapeMismatch("matmul: inner dims " + std::to_string(a.cols) + " vs " +
                            std::to_string(b.rows));
    }
    Mat c(a.rows, b.cols);
    matmul_acc(a, b, c);
    return c;
}

// c += a * b^T
inline void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row_ptr(i);
        double* cr = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* br = b.row_ptr(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            cr[j] += s;
        }
    }
}

// c += a^T * b
inline void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    for (int k = 0; k < a.rows; ++k) {
        const double* ar = a.row_ptr(k);
        const double* br = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0) continue;
            double* cr = c.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
        }
    }
}

}  // namespace ardiff
