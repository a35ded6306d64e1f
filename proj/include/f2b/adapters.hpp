// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "f2b/tape.hpp"

namespace f2b {

enum class Stage { compression, generation };
enum class AdapterMode { stage_specific, single, full_finetune };

inline const char* stage_name(Stage s) { return s == Stage::compression ? "compression" : "generation"; }

// Low-rank delta for one base matrix W [d_in x m]:
//   y = x (W + alpha * B A),  B [d_in x r], A [r x m], r << min(d_in, m).
// B starts at zero so an untrained adapter is exactly the base model.
template <class S>
struct LoraAdapter {
    Param<S>* B = nullptr;
    Param<S>* A = nullptr;
    S alpha = S(1);

    int rank() const { return A ? A->value.rows() : 0; }
};

// y = x W + alpha ((x B) A); the delta path never materializes B A.
template <class S>
typename Tape<S>::Id adapted_linear(Tape<S>& tape, typename Tape<S>::Id x, Param<S>& w_base,
                                    const LoraAdapter<S>* adapter) {
    auto y = tape.matmul(x, tape.param(w_base));
    if (adapter && adapter->A && adapter->B) {
        auto delta = tape.matmul(tape.matmul(x, tape.param(*adapter->B)), tape.param(*adapter->A));
        y = tape.add(y, tape.scale(delta, adapter->alpha));
    }
    return y;
}

// ||B A||_F without forming B A: ||BA||_F^2 = tr((B^T B)(A A^T)), both r x r.
template <class S>
double lora_delta_norm(const LoraAdapter<S>& ad) {
    if (!ad.A || !ad.B) return 0.0;
    int r = ad.rank();
    int d_in = ad.B->value.rows();
    int m = ad.A->value.cols();
    std::vector<double> btb(static_cast<size_t>(r) * r, 0.0), aat(static_cast<size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double s = 0;
            for (int k = 0; k < d_in; ++k)
                s += static_cast<double>(ad.B->value.at(k, i)) * static_cast<double>(ad.B->value.at(k, j));
            btb[static_cast<size_t>(i) * r + j] = s;
        }
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double s = 0;
            for (int k = 0; k < m; ++k)
                s += static_cast<double>(ad.A->value.at(i, k)) * static_cast<double>(ad.A->value.at(j, k));
            aat[static_cast<size_t>(i) * r + j] = s;
        }
    double tr = 0;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) tr += btb[static_cast<size_t>(i) * r + j] * aat[static_cast<size_t>(j) * r + i];
    double a2 = static_cast<double>(ad.alpha) * static_cast<double>(ad.alpha);
    return std::sqrt(std::max(0.0, a2 * tr));
}

}  // namespace f2b
