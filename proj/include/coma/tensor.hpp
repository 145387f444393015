#pragma once

#include <cassert>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "coma/common.hpp"

namespace coma {

// Dense row-major tensor of doubles. Small and unclever on purpose; the hot
// loops live in coma::kernels, this is just storage plus indexing.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        assert(static_cast<size_t>(numel_of(shape)) == data.size());
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Seeded element-wise fills.
    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = rng.gauss() * stddev;
        return t;
    }

    static Tensor rand_uniform(std::vector<int> s, Rng& rng, double lo, double hi) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = rng.uniform_range(lo, hi);
        return t;
    }
};

// Row-major float matrix used for motion frames (stored as 32-bit on disk and
// in memory so file round trips stay bitwise).
struct MatF {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    MatF() = default;
    MatF(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace coma
