#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dpr/rng.hpp"

namespace dpr {

// Dense row-major f64 matrix. Training math runs in double; model files
// store f32 (see dual_encoder save/load).
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    void fill(double v) { data.assign(data.size(), v); }

    static Mat randn(std::size_t r, std::size_t c, double stddev, Rng& rng) {
        Mat m(r, c);
        for (double& x : m.data) x = stddev * rng.normal();
        return m;
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// out = v^T * m where v has m.rows entries; out has m.cols entries.
inline std::vector<double> vec_mat(std::span<const double> v, const Mat& m) {
    assert(v.size() == m.rows);
    std::vector<double> out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double x = v[r];
        if (x == 0.0) continue;
        const double* mr = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += x * mr[c];
    }
    return out;
}

inline bool all_finite(std::span<const double> a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace dpr
