// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "f2b/checkpoint.hpp"
#include "f2b/model.hpp"

namespace f2b {

struct GenerationParams {
    int max_new_tokens = 4;  // greedy decoding only

    void validate() const {
        if (max_new_tokens < 1) throw contract_error("max_new_tokens must be >= 1");
    }
};

// Greedy autoregressive decoding over [prefix_rows ; query ; generated...]
// with the generation-stage adapters, until <eos> or max_new_tokens. The
// prefix is a plain tensor (stored compressed tokens for the compressed
// pipelines, H_v for the uncompressed baseline); no path back to the scene
// exists here. Each step consumes exactly prefix + |query| + |generated|
// positions. Ties in the argmax resolve to the lowest token id.
template <class S>
std::vector<int> generate_with_prefix(ModelState<S>& m, const Tensor<S>& prefix_rows, const std::vector<int>& query,
                                      const GenerationParams& params = {}) {
    params.validate();
    if (prefix_rows.rank() != 2 || prefix_rows.cols() != m.cfg.d_model)
        throw usage_error("config error: prefix rows do not match d_model");
    for (int t : query)
        if (t < 0 || t >= m.cfg.vocab_size) throw vocab_error("query token out of vocabulary");
    std::vector<int> generated;
    for (int step = 0; step < params.max_new_tokens; ++step) {
        Tape<S> tape;
        std::vector<int> toks = query;
        toks.insert(toks.end(), generated.begin(), generated.end());
        auto rows = toks.empty() ? tape.constant(prefix_rows)
                                 : tape.rows_concat({tape.constant(prefix_rows), tape.embed(tape.param(*m.tok_emb), toks)});
        PassOutput<S> pass = forward_rows(tape, m, rows, Stage::generation, AttnMode::causal);
        const Tensor<S>& logits = tape.val(pass.logits);
        int last = pass.seq_len - 1;
        int best = 0;
        S best_v = logits.at(last, 0);
        for (int v = 1; v < m.cfg.vocab_size; ++v)
            if (logits.at(last, v) > best_v) {
                best_v = logits.at(last, v);
                best = v;
            }
        if (best == Vocabulary::kEos) break;
        generated.push_back(best);
    }
    return generated;
}

// Compressed summary of a scene as plain values (offline path). For
// double_forward this is the first forward pass; for single_forward the
// learned input-space pooling. The uncompressed baseline has no summary.
template <class S>
Tensor<S> summary_values(ModelState<S>& m, const Scene& scene) {
    if (m.opts.pipeline == Pipeline::uncompressed)
        throw usage_error("config error: uncompressed pipeline has no summary tokens");
    Tape<S> tape;
    auto res = compress_scene(tape, m, scene);
    return tape.val(res.summary);
}

// Leading rows the generation pass conditions on for QA evaluation.
template <class S>
Tensor<S> qa_prefix_rows(ModelState<S>& m, const Scene& scene) {
    if (m.opts.pipeline == Pipeline::uncompressed) {
        Tape<S> tape;
        return tape.val(encode_scene(tape, m, scene));
    }
    return summary_values(m, scene);
}

template <class S>
std::vector<int> generate_answer(ModelState<S>& m, const Scene& scene, const std::vector<int>& question,
                                 const GenerationParams& params = {}) {
    Tensor<S> prefix = qa_prefix_rows(m, scene);
    return generate_with_prefix(m, prefix, question, params);
}

// ---- embeddings ---------------------------------------------------------------

template <class S>
Tensor<S> unit_vector(Tensor<S> v) {
    double ss = 0;
    for (S x : v.data) ss += static_cast<double>(x) * static_cast<double>(x);
    if (ss == 0) throw numeric_error("degenerate input: zero embedding");
    double inv = 1.0 / std::sqrt(ss);
    for (S& x : v.data) x = static_cast<S>(x * inv);
    return v;
}

// Pooled, unit-normalized image embedding e_v = (1/k') sum H^c_v.
template <class S>
Tensor<S> embed_scene(ModelState<S>& m, const Scene& scene) {
    Tape<S> tape;
    auto res = compress_scene(tape, m, scene);
    auto pooled = tape.mean_rows(res.summary);
    Tensor<S> v({m.cfg.d_model});
    v.data = tape.val(pooled).data;
    return unit_vector(std::move(v));
}

// Pooled, unit-normalized text embedding e_t = (1/k') sum H^c_t.
template <class S>
Tensor<S> embed_text(ModelState<S>& m, const std::vector<int>& caption) {
    Tape<S> tape;
    auto res = compress_text(tape, m, caption);
    auto pooled = tape.mean_rows(res.summary);
    Tensor<S> v({m.cfg.d_model});
    v.data = tape.val(pooled).data;
    return unit_vector(std::move(v));
}

// Last-token embedding without summary tokens: f([rows ; H_p])[-1]. Works on
// an untrained model; the reference point trained compressed retrieval is
// compared against.
template <class S>
Tensor<S> zero_shot_embed_scene(ModelState<S>& m, const Scene& scene) {
    Tape<S> tape;
    auto hv = encode_scene(tape, m, scene);
    auto hp = tape.embed(tape.param(*m.tok_emb), default_vocab().prompt_ids());
    auto emb = last_token_embedding(tape, m, tape.rows_concat({hv, hp}), Stage::generation);
    Tensor<S> v({m.cfg.d_model});
    v.data = tape.val(emb).data;
    return unit_vector(std::move(v));
}

template <class S>
Tensor<S> zero_shot_embed_text(ModelState<S>& m, const std::vector<int>& tokens) {
    if (tokens.empty()) throw contract_error("zero_shot_embed on empty sequence");
    Tape<S> tape;
    auto hq = tape.embed(tape.param(*m.tok_emb), tokens);
    auto hp = tape.embed(tape.param(*m.tok_emb), default_vocab().prompt_ids());
    auto emb = last_token_embedding(tape, m, tape.rows_concat({hq, hp}), Stage::generation);
    Tensor<S> v({m.cfg.d_model});
    v.data = tape.val(emb).data;
    return unit_vector(std::move(v));
}

// ---- retrieval ------------------------------------------------------------------

struct RetrievalIndex {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> vectors;  // unit rows, one per id
};

inline RetrievalIndex build_index(std::vector<std::string> ids, std::vector<std::vector<float>> vectors) {
    if (ids.size() != vectors.size()) throw contract_error("index ids/vectors length mismatch");
    RetrievalIndex idx;
    idx.ids = std::move(ids);
    idx.vectors = std::move(vectors);
    for (auto& v : idx.vectors) {
        double ss = 0;
        for (float x : v) ss += static_cast<double>(x) * x;
        if (ss == 0) throw numeric_error("degenerate input: zero index vector");
        double inv = 1.0 / std::sqrt(ss);
        for (float& x : v) x = static_cast<float>(x * inv);
    }
    return idx;
}

struct RankedHit {
    std::string id;
    double score;
};

// Cosine ranking (dot product of unit vectors), descending score, ties broken
// by lexicographic id.
inline std::vector<RankedHit> retrieve(const RetrievalIndex& index, const std::vector<float>& query_unit, int topk) {
    if (index.ids.empty()) throw contract_error("retrieve from empty index");
    if (topk < 1 || static_cast<size_t>(topk) > index.ids.size()) throw contract_error("topk out of range");
    std::vector<RankedHit> hits;
    hits.reserve(index.ids.size());
    for (size_t i = 0; i < index.ids.size(); ++i) {
        const auto& v = index.vectors[i];
        if (v.size() != query_unit.size()) throw dim_error("query width does not match index");
        double s = 0;
        for (size_t j = 0; j < v.size(); ++j) s += static_cast<double>(v[j]) * query_unit[j];
        hits.push_back({index.ids[i], s});
    }
    std::sort(hits.begin(), hits.end(), [](const RankedHit& a, const RankedHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    hits.resize(static_cast<size_t>(topk));
    return hits;
}

// Fraction of queries whose unique positive appears in the top k.
inline double recall_at_k(const std::vector<std::vector<std::string>>& ranked_ids,
                          const std::vector<std::string>& positives, int k) {
    if (ranked_ids.size() != positives.size() || positives.empty())
        throw contract_error("recall_at_k needs one positive per query");
    if (k < 1) throw contract_error("k must be >= 1");
    int hit = 0;
    for (size_t q = 0; q < positives.size(); ++q) {
        if (positives[q].empty()) throw contract_error("missing ground truth for query " + std::to_string(q));
        const auto& ranked = ranked_ids[q];
        int limit = std::min<int>(k, static_cast<int>(ranked.size()));
        for (int i = 0; i < limit; ++i)
            if (ranked[i] == positives[q]) {
                ++hit;
                break;
            }
    }
    return static_cast<double>(hit) / static_cast<double>(positives.size());
}

// ---- evaluation ------------------------------------------------------------------

// Exact-match QA accuracy over samples carrying questions.
template <class S>
double qa_accuracy(ModelState<S>& m, const std::vector<TrainSample>& samples, int limit = -1) {
    int n = 0, correct = 0;
    for (const TrainSample& s : samples) {
        if (!s.has_qa()) continue;
        if (limit >= 0 && n >= limit) break;
        ++n;
        std::vector<int> got = generate_answer(m, s.scene, s.qa->question);
        if (got == s.qa->answer) ++correct;
    }
    if (n == 0) throw contract_error("no QA samples to evaluate");
    return static_cast<double>(correct) / n;
}

// Accuracy of the best blind (no-vision) predictor: majority answer per
// question template over the evaluation set. The floor QA accuracy is
// measured against.
double chance_qa_accuracy(const std::vector<TrainSample>& samples, int limit = -1);

// R@1 of caption -> scene retrieval over held-out pairs, via the compressed
// embeddings (or last-token embeddings when use_zero_shot).
template <class S>
double retrieval_r_at_1(ModelState<S>& m, const std::vector<TrainSample>& samples, int limit = -1,
                        bool use_zero_shot = false) {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> vecs;
    std::vector<std::vector<int>> captions;
    int n = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const TrainSample& s = samples[i];
        if (!s.has_caption()) continue;
        if (limit >= 0 && n >= limit) break;
        ++n;
        Tensor<S> ev = use_zero_shot ? zero_shot_embed_scene(m, s.scene) : embed_scene(m, s.scene);
        std::vector<float> row(ev.data.begin(), ev.data.end());
        char buf[16];
        std::snprintf(buf, sizeof buf, "img_%05zu", i);
        ids.push_back(buf);
        vecs.push_back(std::move(row));
        captions.push_back(*s.caption);
    }
    if (n < 2) throw contract_error("retrieval eval needs at least 2 pairs");
    RetrievalIndex index = build_index(ids, vecs);
    std::vector<std::vector<std::string>> ranked;
    for (const auto& cap : captions) {
        Tensor<S> et = use_zero_shot ? zero_shot_embed_text(m, cap) : embed_text(m, cap);
        std::vector<float> q(et.data.begin(), et.data.end());
        auto hits = retrieve(index, q, 1);
        ranked.push_back({hits[0].id});
    }
    return recall_at_k(ranked, ids, 1);
}

}  // namespace f2b
