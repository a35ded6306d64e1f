// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "f2b/tensor.hpp"

namespace f2b {

// Compares reverse-mode gradients against central finite differences,
// (f(x+eps) - f(x-eps)) / 2eps, coordinate by coordinate over the given
// parameters. `eval(true)` must build a fresh graph, run backward, and leave
// gradients accumulated in the params; `eval(false)` only returns the loss
// value. Runs in float64.
//
// Error metric: |analytic - numeric| / max(|analytic|, |numeric|, 1) —
// relative above unit scale, absolute below it, so finite-difference
// round-off on near-zero coordinates does not dominate.
inline double grad_check(const std::function<double(bool)>& eval, const std::vector<Param<double>*>& params,
                         double eps = 1e-5) {
    for (Param<double>* p : params) p->zero_grad();
    eval(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Param<double>* p : params) analytic.push_back(p->grad);

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param<double>& p = *params[pi];
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            double keep = p.value.data[i];
            p.value.data[i] = keep + eps;
            double fp = eval(false);
            p.value.data[i] = keep - eps;
            double fm = eval(false);
            p.value.data[i] = keep;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[pi][i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace f2b
