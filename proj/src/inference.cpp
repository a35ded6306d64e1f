// SPDX-License-Identifier: Apache-2.0
#include "f2b/inference.hpp"

#include <map>

namespace f2b {

double chance_qa_accuracy(const std::vector<TrainSample>& samples, int limit) {
    std::map<std::string, std::map<std::string, int>> counts;  // question -> answer -> n
    int n = 0;
    const Vocabulary& v = default_vocab();
    for (const TrainSample& s : samples) {
        if (!s.has_qa()) continue;
        if (limit >= 0 && n >= limit) break;
        ++n;
        counts[v.detokenize(s.qa->question)][v.detokenize(s.qa->answer)]++;
    }
    if (n == 0) throw contract_error("no QA samples to evaluate");
    int correct = 0;
    for (const auto& [q, answers] : counts) {
        int best = 0;
        for (const auto& [a, c] : answers) best = std::max(best, c);
        correct += best;
    }
    return static_cast<double>(correct) / n;
}

}  // namespace f2b
