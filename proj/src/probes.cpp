// SPDX-License-Identifier: Apache-2.0
#include "f2b/probes.hpp"

namespace f2b {

FlopsBreakdown flops_estimate(const CostModel& cost, FlopsMode mode) {
    cost.validate();
    const uint64_t c = cost.flops_c;
    FlopsBreakdown out;
    switch (mode) {
        case FlopsMode::baseline:
            out.vision_term = c * cost.n_vision * cost.v_tokens;
            out.llm_term = c * cost.n_llm * (cost.v_tokens + cost.q_tokens + cost.g_tokens);
            break;
        case FlopsMode::offline_compress:
            out.vision_term = c * cost.n_vision * cost.v_tokens;
            out.llm_term = c * cost.n_llm * (cost.v_tokens + cost.k_summary);
            break;
        case FlopsMode::online_query:
            out.llm_term = c * cost.n_llm * (cost.k_summary + cost.q_tokens + cost.g_tokens);
            break;
        case FlopsMode::query_dependent_online:
            out.llm_term = c * cost.n_llm * (cost.k_summary + 2 * cost.q_tokens + cost.g_tokens);
            break;
    }
    out.total = out.vision_term + out.llm_term;
    return out;
}

FlopsMode flops_mode_from_name(const std::string& name) {
    if (name == "baseline") return FlopsMode::baseline;
    if (name == "offline_compress") return FlopsMode::offline_compress;
    if (name == "online_query") return FlopsMode::online_query;
    if (name == "query_dependent_online") return FlopsMode::query_dependent_online;
    throw usage_error("unknown flops mode " + name);
}

const char* flops_mode_name(FlopsMode mode) {
    switch (mode) {
        case FlopsMode::baseline: return "baseline";
        case FlopsMode::offline_compress: return "offline_compress";
        case FlopsMode::online_query: return "online_query";
        case FlopsMode::query_dependent_online: return "query_dependent_online";
    }
    return "?";
}

uint64_t storage_bytes(uint64_t k, uint64_t d, StoreDtype dtype) {
    return (dtype == StoreDtype::half ? 2 : 4) * k * d;
}

CostModel full_scale_cost_model() {
    CostModel c;
    c.n_vision = 304'000'000;    // ViT-L-sized encoder
    c.n_llm = 6'700'000'000;     // 7B-class decoder
    c.v_tokens = 576;
    c.k_summary = 16;
    c.q_tokens = 32;
    c.g_tokens = 64;
    c.d = 4096;
    return c;
}

std::string flops_csv(const CostModel& cost) {
    std::string out = "mode,V,K,Q,G,vision_flops,llm_flops,total_flops\n";
    for (FlopsMode mode : {FlopsMode::baseline, FlopsMode::offline_compress, FlopsMode::online_query,
                           FlopsMode::query_dependent_online}) {
        FlopsBreakdown b = flops_estimate(cost, mode);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%llu,%llu,%llu,%llu,%llu,%llu,%llu\n", flops_mode_name(mode),
                      static_cast<unsigned long long>(cost.v_tokens), static_cast<unsigned long long>(cost.k_summary),
                      static_cast<unsigned long long>(cost.q_tokens), static_cast<unsigned long long>(cost.g_tokens),
                      static_cast<unsigned long long>(b.vision_term), static_cast<unsigned long long>(b.llm_term),
                      static_cast<unsigned long long>(b.total));
        out += buf;
    }
    return out;
}

std::string attention_csv(const std::vector<Tensor<float>>& maps) {
    std::string out = "layer,row,col,weight\n";
    char buf[96];
    for (size_t l = 0; l < maps.size(); ++l)
        for (int r = 0; r < maps[l].rows(); ++r)
            for (int c = 0; c < maps[l].cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.6f\n", l, r, c, static_cast<double>(maps[l].at(r, c)));
                out += buf;
            }
    return out;
}

std::string importance_csv(const ImportanceReport& rep) {
    std::string out = "group_start,group_end,accuracy,drop\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "-1,-1,%.6f,0.000000\n", rep.baseline_accuracy);  // unmasked baseline row
    out += buf;
    for (const auto& g : rep.groups) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%.6f\n", g.start, g.end, g.accuracy, g.drop);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "0,%d,%.6f,%.6f\n", rep.groups.empty() ? 0 : rep.groups.back().end,
                  rep.all_masked_accuracy, rep.baseline_accuracy - rep.all_masked_accuracy);
    out += buf;
    return out;
}

std::string prefix_csv(const PrefixSweep& sweep) {
    std::string out = "m,accuracy\n";
    char buf[64];
    for (size_t i = 0; i < sweep.m_values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", sweep.m_values[i], sweep.accuracies[i]);
        out += buf;
    }
    return out;
}

std::string adapter_norms_csv(const std::vector<AdapterNormRow>& rows) {
    std::string out = "stage,layer,target,frobenius\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%s,%.8f\n", r.stage.c_str(), r.layer, r.target.c_str(), r.frobenius);
        out += buf;
    }
    return out;
}

std::string csv_to_gnuplot(const std::string& csv) {
    std::string out;
    bool first_line = true;
    for (size_t i = 0; i < csv.size();) {
        size_t end = csv.find('\n', i);
        if (end == std::string::npos) end = csv.size();
        std::string line = csv.substr(i, end - i);
        for (char& ch : line)
            if (ch == ',') ch = ' ';
        out += first_line ? "# " + line : line;
        out += '\n';
        first_line = false;
        i = end + 1;
    }
    return out;
}

}  // namespace f2b
