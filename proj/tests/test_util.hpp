// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "f2b/data.hpp"
#include "f2b/model.hpp"
#include "f2b/tape.hpp"

namespace f2b::test {

template <class S>
Tensor<S> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor<S> t(std::move(shape));
    for (S& v : t.data) v = static_cast<S>(normal01(rng) * scale);
    return t;
}

// Reduces any matrix node to a scalar through fixed random weights, so
// backward paths see non-uniform upstream gradients.
template <class S>
typename Tape<S>::Id scalarize(Tape<S>& tape, typename Tape<S>::Id x, uint64_t seed = 7) {
    std::mt19937_64 rng = seeded_rng(seed, 99);
    int rows = tape.val(x).rows();
    int cols = tape.val(x).cols();
    auto left = tape.constant(random_tensor<S>({1, rows}, rng));
    auto right = tape.constant(random_tensor<S>({cols, 1}, rng));
    return tape.matmul(tape.matmul(left, x), right);
}

// Micro config small enough for exhaustive finite-difference checks
// (< 500 trainable parameters with rank-1 adapters).
inline ModelConfig micro_config() {
    ModelConfig c;
    c.d_model = 4;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_width = 8;
    c.vocab_size = 33;
    c.k_vision = 4;
    c.k_summary = 2;
    c.max_seq_len = 24;
    return c;
}

inline ModelOptions micro_options() {
    ModelOptions o;
    o.lora_rank = 1;
    return o;
}

inline Scene scene_from_cells(int rows, int cols, const std::vector<uint8_t>& cells) {
    Scene s;
    s.rows = rows;
    s.cols = cols;
    s.cells = cells;
    return s;
}

inline Scene micro_scene() {
    // 2x2 grid: red circle at 0, blue square at 3
    return scene_from_cells(2, 2, {1, 0, 0, static_cast<uint8_t>(1 + 2 * kNumShapes + 1)});
}

inline DataConfig small_data_config(int rows = 6, int cols = 6) {
    DataConfig d;
    d.rows = rows;
    d.cols = cols;
    return d;
}

}  // namespace f2b::test
