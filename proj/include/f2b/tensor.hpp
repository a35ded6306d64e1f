// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "f2b/common.hpp"

namespace f2b {

// Dense row-major tensor. Rank 1 and 2 cover the whole model; checkpoints
// keep the general shape so blocks round-trip as written.
template <class S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
        data.assign(static_cast<size_t>(count(shape)), S(0));
    }
    Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
        if (data.size() != static_cast<size_t>(count(shape)))
            throw dim_error("tensor data length does not match shape");
    }

    static int64_t count(const std::vector<int>& shp) {
        int64_t n = 1;
        for (int d : shp) {
            if (d < 0) throw dim_error("negative dimension");
            n *= d;
        }
        return n;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rows() const {
        if (rank() != 2) throw dim_error("rows() on non-matrix tensor");
        return shape[0];
    }
    int cols() const {
        if (rank() != 2) throw dim_error("cols() on non-matrix tensor");
        return shape[1];
    }
    S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    const S& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape == b.shape;
}

// A named, trainable tensor. Gradients are accumulated here by Tape::backward.
template <class S>
struct Param {
    std::string name;
    Tensor<S> value;
    std::vector<S> grad;
    bool trainable = true;

    Param(std::string n, Tensor<S> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.data.size(), S(0)), trainable(train) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

}  // namespace f2b
