// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "f2b/inference.hpp"
#include "f2b/store.hpp"
#include "f2b/training.hpp"

namespace f2b {

// ---- cost model -----------------------------------------------------------------

// Symbolic FLOPs accounting: cost of a transformer pass is c * N * T with c
// multiply-accumulate FLOPs per parameter per token (c = 2 by default).
struct CostModel {
    uint64_t n_vision = 0;  // vision encoder parameters
    uint64_t n_llm = 0;     // decoder parameters
    uint64_t v_tokens = 0;  // vision tokens V
    uint64_t k_summary = 0; // summary tokens K
    uint64_t q_tokens = 0;  // query tokens Q
    uint64_t g_tokens = 0;  // generated tokens G
    uint64_t d = 0;         // embedding width
    uint64_t flops_c = 2;

    void validate() const {
        if (n_vision == 0 || n_llm == 0 || v_tokens == 0 || d == 0) throw usage_error("cost model fields must be positive");
        if (k_summary > v_tokens) throw usage_error("K must not exceed V");
    }
};

enum class FlopsMode { baseline, offline_compress, online_query, query_dependent_online };

struct FlopsBreakdown {
    uint64_t vision_term = 0;
    uint64_t llm_term = 0;
    uint64_t total = 0;
};

FlopsBreakdown flops_estimate(const CostModel& cost, FlopsMode mode);
FlopsMode flops_mode_from_name(const std::string& name);
const char* flops_mode_name(FlopsMode mode);

uint64_t storage_bytes(uint64_t k, uint64_t d, StoreDtype dtype);

// LLaVA-scale preset (7B decoder, ViT-L-sized encoder, 576 vision tokens).
CostModel full_scale_cost_model();
// Toy preset derived from a model's actual trainable parameter counts.
template <class S>
CostModel toy_cost_model(const ModelState<S>& m, int q_tokens = 6, int g_tokens = 2) {
    CostModel c;
    c.n_vision = static_cast<uint64_t>(m.proj_w->value.size());
    int64_t llm = 0;
    for (const auto& p : m.params)
        if (p->trainable && p.get() != m.proj_w) llm += p->value.size();
    c.n_llm = static_cast<uint64_t>(llm);
    c.v_tokens = static_cast<uint64_t>(m.cfg.k_vision);
    c.k_summary = static_cast<uint64_t>(m.cfg.k_summary);
    c.q_tokens = static_cast<uint64_t>(q_tokens);
    c.g_tokens = static_cast<uint64_t>(g_tokens);
    c.d = static_cast<uint64_t>(m.cfg.d_model);
    return c;
}

std::string flops_csv(const CostModel& cost);

// ---- attention maps --------------------------------------------------------------

// Attention restricted to the probe-relevant block, summed over heads:
// compression pass -> (summary rows x vision cols), one k' x k matrix per
// layer; generation pass -> (generated rows x summary cols).
template <class S>
std::vector<Tensor<S>> attention_map_compression(ModelState<S>& m, const Scene& scene) {
    if (m.opts.pipeline != Pipeline::double_forward)
        throw usage_error("compression attention map requires the double_forward pipeline");
    Tape<S> tape;
    auto res = compress_scene(tape, m, scene, Stage::compression, /*want_attention=*/true);
    int T = res.pass.seq_len;
    int k = m.cfg.k_vision, ks = m.cfg.k_summary;
    std::vector<Tensor<S>> out;
    for (const auto& layer : res.pass.attention) {
        Tensor<S> acc({ks, k});
        for (const Tensor<S>& head : layer)
            for (int r = 0; r < ks; ++r)
                for (int c = 0; c < k; ++c) acc.at(r, c) += head.at(T - ks + r, c);
        out.push_back(std::move(acc));
    }
    return out;
}

// Generation-pass attention of answer tokens onto the prefix (summary tokens
// for compressed pipelines, vision tokens for the uncompressed baseline).
template <class S>
std::vector<Tensor<S>> attention_map_generation(ModelState<S>& m, const Scene& scene, const std::vector<int>& question,
                                                const GenerationParams& params = {}) {
    Tensor<S> prefix = qa_prefix_rows(m, scene);
    std::vector<int> generated = generate_with_prefix(m, prefix, question, params);
    if (generated.empty()) generated.push_back(Vocabulary::kEos);  // attend with at least one produced token
    Tape<S> tape;
    std::vector<int> toks = question;
    toks.insert(toks.end(), generated.begin(), generated.end());
    auto rows = tape.rows_concat({tape.constant(prefix), tape.embed(tape.param(*m.tok_emb), toks)});
    PassOutput<S> pass = forward_rows(tape, m, rows, Stage::generation, AttnMode::causal, /*want_attention=*/true);
    int p = prefix.rows();
    int g0 = p + static_cast<int>(question.size());
    int T = pass.seq_len;
    std::vector<Tensor<S>> out;
    for (const auto& layer : pass.attention) {
        Tensor<S> acc({T - g0, p});
        for (const Tensor<S>& head : layer)
            for (int r = g0; r < T; ++r)
                for (int c = 0; c < p; ++c) acc.at(r - g0, c) += head.at(r, c);
        out.push_back(std::move(acc));
    }
    return out;
}

// Fraction of target tokens receiving more than half the uniform share of
// cumulative attention (summed over source rows, heads and layers).
template <class S>
double attention_coverage(const std::vector<Tensor<S>>& maps) {
    if (maps.empty()) throw contract_error("no attention maps");
    int targets = maps[0].cols();
    std::vector<double> mass(static_cast<size_t>(targets), 0.0);
    double total = 0;
    for (const Tensor<S>& m : maps)
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < targets; ++c) {
                mass[static_cast<size_t>(c)] += static_cast<double>(m.at(r, c));
                total += static_cast<double>(m.at(r, c));
            }
    if (total <= 0) throw numeric_error("attention mass vanished");
    int covered = 0;
    double threshold = 0.5 / targets;
    for (double v : mass) covered += (v / total > threshold);
    return static_cast<double>(covered) / targets;
}

std::string attention_csv(const std::vector<Tensor<float>>& maps);

// ---- masking and truncation probes ---------------------------------------------------

template <class S>
double qa_accuracy_masked(ModelState<S>& m, const std::vector<TrainSample>& samples, int limit, int mask_start,
                          int mask_end) {
    if (mask_start < 0 || mask_end < mask_start || mask_end > m.cfg.k_summary) throw contract_error("bad mask range");
    int n = 0, correct = 0;
    for (const TrainSample& s : samples) {
        if (!s.has_qa()) continue;
        if (limit >= 0 && n >= limit) break;
        ++n;
        Tensor<S> prefix = qa_prefix_rows(m, s.scene);
        for (int r = mask_start; r < mask_end; ++r)
            for (int c = 0; c < prefix.cols(); ++c) prefix.at(r, c) = S(0);  // zeroed, positions preserved
        std::vector<int> got = generate_with_prefix(m, prefix, s.qa->question);
        if (got == s.qa->answer) ++correct;
    }
    if (n == 0) throw contract_error("no QA samples to evaluate");
    return static_cast<double>(correct) / n;
}

struct ImportanceReport {
    int group_size = 0;
    double baseline_accuracy = 0.0;
    double all_masked_accuracy = 0.0;
    struct Group {
        int start, end;
        double accuracy;
        double drop;  // baseline - accuracy
    };
    std::vector<Group> groups;
};

// Zeroes each contiguous summary-token group in turn and measures the QA
// score drop against the unmasked run.
template <class S>
ImportanceReport mask_importance(ModelState<S>& m, const std::vector<TrainSample>& samples, int group_size,
                                 int limit = -1) {
    if (group_size < 1) throw contract_error("group size must be >= 1");
    ImportanceReport rep;
    rep.group_size = group_size;
    rep.baseline_accuracy = qa_accuracy_masked(m, samples, limit, 0, 0);  // empty mask == standard eval
    rep.all_masked_accuracy = qa_accuracy_masked(m, samples, limit, 0, m.cfg.k_summary);
    for (int start = 0; start < m.cfg.k_summary; start += group_size) {
        int end = std::min(start + group_size, m.cfg.k_summary);
        double acc = qa_accuracy_masked(m, samples, limit, start, end);
        rep.groups.push_back({start, end, acc, rep.baseline_accuracy - acc});
    }
    return rep;
}

std::string importance_csv(const ImportanceReport& rep);

template <class S>
double qa_accuracy_prefix(ModelState<S>& m, const std::vector<TrainSample>& samples, int m_prefix, int limit = -1) {
    if (m_prefix < 1 || m_prefix > m.cfg.k_summary) throw contract_error("prefix length out of range");
    int n = 0, correct = 0;
    for (const TrainSample& s : samples) {
        if (!s.has_qa()) continue;
        if (limit >= 0 && n >= limit) break;
        ++n;
        Tensor<S> full = qa_prefix_rows(m, s.scene);
        Tensor<S> cut({m_prefix, full.cols()});
        std::copy(full.data.begin(), full.data.begin() + static_cast<int64_t>(m_prefix) * full.cols(), cut.data.begin());
        std::vector<int> got = generate_with_prefix(m, cut, s.qa->question);
        if (got == s.qa->answer) ++correct;
    }
    if (n == 0) throw contract_error("no QA samples to evaluate");
    return static_cast<double>(correct) / n;
}

struct PrefixSweep {
    std::vector<int> m_values;
    std::vector<double> accuracies;
};

template <class S>
PrefixSweep prefix_truncation_eval(ModelState<S>& m, const std::vector<TrainSample>& samples,
                                   const std::vector<int>& m_values, int limit = -1) {
    PrefixSweep sweep;
    for (int mv : m_values) {
        sweep.m_values.push_back(mv);
        sweep.accuracies.push_back(qa_accuracy_prefix(m, samples, mv, limit));
    }
    return sweep;
}

std::string prefix_csv(const PrefixSweep& sweep);

// ---- adapter norms ----------------------------------------------------------------

struct AdapterNormRow {
    std::string stage;
    int layer;
    std::string target;
    double frobenius;
};

template <class S>
std::vector<AdapterNormRow> adapter_delta_norms(const ModelState<S>& m) {
    std::vector<AdapterNormRow> rows;
    auto emit = [&](const char* stage, const std::vector<typename ModelState<S>::LayerLora>& set) {
        for (size_t l = 0; l < set.size(); ++l) {
            const auto& ll = set[l];
            const std::pair<const char*, const LoraAdapter<S>*> targets[] = {
                {"wq", &ll.wq}, {"wk", &ll.wk}, {"wv", &ll.wv}, {"wo", &ll.wo}, {"ffn1", &ll.w1}, {"ffn2", &ll.w2}};
            for (auto [name, ad] : targets)
                rows.push_back({stage, static_cast<int>(l), name, lora_delta_norm(*ad)});
        }
    };
    emit("compression", m.lora_compression);
    if (m.opts.adapter_mode == AdapterMode::stage_specific) emit("generation", m.lora_generation);
    return rows;
}

std::string adapter_norms_csv(const std::vector<AdapterNormRow>& rows);

// Space-separated, '#'-commented variant of any of the CSV outputs, directly
// plottable with gnuplot.
std::string csv_to_gnuplot(const std::string& csv);

}  // namespace f2b
