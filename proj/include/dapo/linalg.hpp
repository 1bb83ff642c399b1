#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dapo/errors.hpp"

namespace dapo {

using Vec = std::vector<double>;

// Dense row-major matrix. Everything in this project is desk scale
// (a few hundred rows at most), so plain loops beat any BLAS detour and
// keep summation order fixed.
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec data;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    Vec row(int r) const {
        return Vec(data.begin() + static_cast<std::ptrdiff_t>(r) * cols,
                   data.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
    }
    void set_row(int r, const Vec& v) {
        for (int c = 0; c < cols; ++c) (*this)(r, c) = v[static_cast<std::size_t>(c)];
    }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double linf_norm(const Vec& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

inline double linf_dist(const Vec& a, const Vec& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l1_norm(const Vec& a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

inline double sq_norm(const Vec& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

// Solve A x = b by LU with partial pivoting. A is copied; desk-scale only.
inline Vec lu_solve(Mat a, Vec b) {
    const int n = a.rows;
    if (n != a.cols || static_cast<int>(b.size()) != n)
        throw SingularSystemError("lu_solve: shape mismatch");
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

    for (int col = 0; col < n; ++col) {
        int pivot = col;
        double best = std::abs(a(col, col));
        for (int r = col + 1; r < n; ++r) {
            const double v = std::abs(a(r, col));
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best < 1e-300) throw SingularSystemError("lu_solve: singular matrix");
        if (pivot != col) {
            for (int c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(pivot)]);
        }
        for (int r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            a(r, col) = f;
            for (int c = col + 1; c < n; ++c) a(r, c) -= f * a(col, c);
            b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    Vec x(static_cast<std::size_t>(n));
    for (int r = n - 1; r >= 0; --r) {
        double s = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < n; ++c) s -= a(r, c) * x[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(r)] = s / a(r, r);
    }
    return x;
}

}  // namespace dapo
