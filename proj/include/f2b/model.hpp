// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "f2b/adapters.hpp"
#include "f2b/data.hpp"
#include "f2b/tape.hpp"

namespace f2b {

enum class AttnMode { causal, bidirectional };

// Which training/eval pipeline a model belongs to. double_forward is the main
// method (the LLM itself compresses); single_forward compresses in input
// space with a learned linear pooling; uncompressed feeds all vision tokens
// to the decoder (the reference the compressed models are measured against).
enum class Pipeline { double_forward, single_forward, uncompressed };

struct ModelConfig {
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int ffn_width = 256;
    int vocab_size = 64;
    int k_vision = 36;
    int k_summary = 8;
    int max_seq_len = 96;
    AttnMode attention_mode_compression = AttnMode::causal;

    void validate() const {
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_width <= 0) throw usage_error("model dims must be positive");
        if (d_model % n_heads != 0) throw usage_error("d_model must be divisible by n_heads");
        if (k_summary > k_vision) throw usage_error("k_summary must not exceed k_vision");
        if (k_vision + Vocabulary::kPromptLen + k_summary > max_seq_len)
            throw usage_error("k_vision + prompt + k_summary exceeds max_seq_len");
        if (vocab_size < default_vocab().size()) throw usage_error("vocab_size smaller than grammar vocabulary");
    }
};

struct ModelOptions {
    AdapterMode adapter_mode = AdapterMode::stage_specific;
    int lora_rank = 4;
    double lora_alpha = 1.0;
    Pipeline pipeline = Pipeline::double_forward;
};

// One-hot color + one-hot shape + occupancy bit, per grid cell.
inline constexpr int kCellFeatureDim = kNumColors + kNumShapes + 1;

// Cellwise featurizer g: deterministic, frozen. Returns [k_vision x 8].
template <class S>
Tensor<S> scene_features(const Scene& scene, const ModelConfig& cfg) {
    if (scene.rows * scene.cols != cfg.k_vision)
        throw data_error("scene grid does not match k_vision");
    Tensor<S> f({cfg.k_vision, kCellFeatureDim});
    for (int i = 0; i < cfg.k_vision; ++i) {
        uint8_t c = scene.cells[static_cast<size_t>(i)];
        if (c == 0) continue;
        if (c > kNumColors * kNumShapes) throw data_error("cell attribute outside vocabulary");
        int v = c - 1;
        f.at(i, v / kNumShapes) = S(1);
        f.at(i, kNumColors + v % kNumShapes) = S(1);
        f.at(i, kNumColors + kNumShapes) = S(1);
    }
    return f;
}

template <class S>
struct ModelState {
    ModelConfig cfg;
    ModelOptions opts;

    struct Layer {
        Param<S>*norm1, *norm2;
        Param<S>*wq, *wk, *wv, *wo, *w1, *w2;
    };
    struct LayerLora {
        LoraAdapter<S> wq, wk, wv, wo, w1, w2;
    };

    std::vector<std::unique_ptr<Param<S>>> params;  // serialization order
    Param<S>* tok_emb = nullptr;                    // [vocab x d]
    Param<S>* pos_emb = nullptr;                    // [max_seq x d]
    Param<S>* proj_w = nullptr;                     // [8 x d], the projector W
    Param<S>* h_r = nullptr;                        // [k' x d], summary embeddings
    Param<S>* final_norm = nullptr;                 // [d]
    Param<S>* head = nullptr;                       // [d x vocab]
    Param<S>* input_compressor = nullptr;           // [k' x k_vision], single_forward only
    std::vector<Layer> layers;
    std::vector<LayerLora> lora_compression;  // empty unless stage adapters active
    std::vector<LayerLora> lora_generation;

    Param<S>* find(const std::string& name) {
        for (auto& p : params)
            if (p->name == name) return p.get();
        return nullptr;
    }

    std::vector<Param<S>*> trainable_params() {
        std::vector<Param<S>*> out;
        for (auto& p : params)
            if (p->trainable) out.push_back(p.get());
        return out;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params)
            if (p->trainable) n += p->value.size();
        return n;
    }

    // Adapter set for a pass. Single mode shares one set across stages;
    // full fine-tuning has none.
    const std::vector<LayerLora>* adapters_for(Stage stage) const {
        switch (opts.adapter_mode) {
            case AdapterMode::full_finetune: return nullptr;
            case AdapterMode::single: return &lora_compression;
            case AdapterMode::stage_specific:
                return stage == Stage::compression ? &lora_compression : &lora_generation;
        }
        throw contract_error("unknown adapter mode");
    }
};

namespace detail {

template <class S>
Param<S>* add_param(ModelState<S>& m, const std::string& name, std::vector<int> shape, std::mt19937_64& rng,
                    double std_dev, bool trainable = true) {
    Tensor<S> t(std::move(shape));
    if (std_dev > 0)
        for (S& v : t.data) v = static_cast<S>(normal01(rng) * std_dev);
    m.params.push_back(std::make_unique<Param<S>>(name, std::move(t), trainable));
    return m.params.back().get();
}

template <class S>
Param<S>* add_ones(ModelState<S>& m, const std::string& name, int n) {
    Tensor<S> t({n});
    std::fill(t.data.begin(), t.data.end(), S(1));
    m.params.push_back(std::make_unique<Param<S>>(name, std::move(t), true));
    return m.params.back().get();
}

template <class S>
LoraAdapter<S> add_lora(ModelState<S>& m, const std::string& prefix, int d_in, int d_out, int rank, double alpha,
                        std::mt19937_64& rng) {
    if (rank >= std::min(d_in, d_out)) throw usage_error("lora rank must be below min(d_in, d_out)");
    LoraAdapter<S> ad;
    ad.B = add_param(m, prefix + ".B", {d_in, rank}, rng, 0.0);  // zero init
    ad.A = add_param(m, prefix + ".A", {rank, d_out}, rng, 0.02);
    ad.alpha = static_cast<S>(alpha);
    return ad;
}

}  // namespace detail

template <class S>
ModelState<S> init_model(const ModelConfig& cfg, const ModelOptions& opts, uint64_t seed) {
    cfg.validate();
    ModelState<S> m;
    m.cfg = cfg;
    m.opts = opts;
    std::mt19937_64 rng = seeded_rng(seed, 10);
    const double w_std = 0.02;

    m.tok_emb = detail::add_param(m, "embed.tokens", {cfg.vocab_size, cfg.d_model}, rng, w_std);
    m.pos_emb = detail::add_param(m, "embed.positions", {cfg.max_seq_len, cfg.d_model}, rng, w_std);
    m.proj_w = detail::add_param(m, "vision.proj", {kCellFeatureDim, cfg.d_model}, rng, w_std);
    m.h_r = detail::add_param(m, "summary.h_r", {cfg.k_summary, cfg.d_model}, rng, w_std);
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string p = "layer." + std::to_string(l) + ".";
        typename ModelState<S>::Layer layer;
        layer.norm1 = detail::add_ones(m, p + "norm1", cfg.d_model);
        layer.wq = detail::add_param(m, p + "wq", {cfg.d_model, cfg.d_model}, rng, w_std);
        layer.wk = detail::add_param(m, p + "wk", {cfg.d_model, cfg.d_model}, rng, w_std);
        layer.wv = detail::add_param(m, p + "wv", {cfg.d_model, cfg.d_model}, rng, w_std);
        layer.wo = detail::add_param(m, p + "wo", {cfg.d_model, cfg.d_model}, rng, w_std);
        layer.norm2 = detail::add_ones(m, p + "norm2", cfg.d_model);
        layer.w1 = detail::add_param(m, p + "ffn1", {cfg.d_model, cfg.ffn_width}, rng, w_std);
        layer.w2 = detail::add_param(m, p + "ffn2", {cfg.ffn_width, cfg.d_model}, rng, w_std);
        m.layers.push_back(layer);
    }
    m.final_norm = detail::add_ones(m, "final_norm", cfg.d_model);
    m.head = detail::add_param(m, "head", {cfg.d_model, cfg.vocab_size}, rng, w_std);

    if (opts.pipeline == Pipeline::single_forward)
        m.input_compressor = detail::add_param(m, "input_compressor", {cfg.k_summary, cfg.k_vision}, rng, w_std);

    if (opts.adapter_mode != AdapterMode::full_finetune) {
        auto build_set = [&](const char* stage) {
            std::vector<typename ModelState<S>::LayerLora> set;
            for (int l = 0; l < cfg.n_layers; ++l) {
                std::string p = std::string("lora.") + stage + ".layer." + std::to_string(l) + ".";
                typename ModelState<S>::LayerLora ll;
                ll.wq = detail::add_lora(m, p + "wq", cfg.d_model, cfg.d_model, opts.lora_rank, opts.lora_alpha, rng);
                ll.wk = detail::add_lora(m, p + "wk", cfg.d_model, cfg.d_model, opts.lora_rank, opts.lora_alpha, rng);
                ll.wv = detail::add_lora(m, p + "wv", cfg.d_model, cfg.d_model, opts.lora_rank, opts.lora_alpha, rng);
                ll.wo = detail::add_lora(m, p + "wo", cfg.d_model, cfg.d_model, opts.lora_rank, opts.lora_alpha, rng);
                ll.w1 = detail::add_lora(m, p + "ffn1", cfg.d_model, cfg.ffn_width, opts.lora_rank, opts.lora_alpha, rng);
                ll.w2 = detail::add_lora(m, p + "ffn2", cfg.ffn_width, cfg.d_model, opts.lora_rank, opts.lora_alpha, rng);
                set.push_back(ll);
            }
            return set;
        };
        m.lora_compression = build_set("compression");
        if (opts.adapter_mode == AdapterMode::stage_specific) m.lora_generation = build_set("generation");
    }

    // Non-trainable scalars so options beyond ModelConfig round-trip through
    // the checkpoint's named-block section.
    auto add_meta = [&](const std::string& name, double v) {
        Tensor<S> t({1});
        t.data[0] = static_cast<S>(v);
        m.params.push_back(std::make_unique<Param<S>>(name, std::move(t), false));
    };
    add_meta("meta.pipeline", static_cast<double>(static_cast<int>(opts.pipeline)));
    add_meta("meta.adapter_mode", static_cast<double>(static_cast<int>(opts.adapter_mode)));
    add_meta("meta.lora_rank", static_cast<double>(opts.lora_rank));
    add_meta("meta.lora_alpha", opts.lora_alpha);
    return m;
}

// ---- forward pass -----------------------------------------------------------

template <class S>
struct PassOutput {
    typename Tape<S>::Id hidden = -1;  // [T x d], after the final norm
    typename Tape<S>::Id logits = -1;  // [T x vocab]
    int seq_len = 0;
    // per-layer, per-head attention weights; captured only on request
    std::vector<std::vector<Tensor<S>>> attention;
};

// Runs the decoder over already-embedded rows (positions are added here).
// `stage` selects the adapter set, `mode` the attention mask of this pass.
template <class S>
PassOutput<S> forward_rows(Tape<S>& tape, ModelState<S>& m, typename Tape<S>::Id rows, Stage stage, AttnMode mode,
                           bool want_attention = false) {
    using Id = typename Tape<S>::Id;
    const ModelConfig& cfg = m.cfg;
    const Tensor<S>& in = tape.val(rows);
    if (in.rank() != 2 || in.cols() != cfg.d_model) throw dim_error("forward expects [T x d_model] rows");
    int T = in.rows();
    if (T > cfg.max_seq_len) throw contract_error("capacity error: sequence length exceeds max_seq_len");

    const auto* lora = m.adapters_for(stage);
    auto adapted = [&](Id x, Param<S>& w, const LoraAdapter<S>* ad) { return adapted_linear(tape, x, w, ad); };

    std::vector<int> visible(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i) visible[static_cast<size_t>(i)] = mode == AttnMode::causal ? i + 1 : T;

    Id x = tape.add(rows, tape.rows_slice(tape.param(*m.pos_emb), 0, T));
    PassOutput<S> out;
    out.seq_len = T;
    const int dh = cfg.d_model / cfg.n_heads;
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));

    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& L = m.layers[static_cast<size_t>(l)];
        const typename ModelState<S>::LayerLora* ll = lora ? &(*lora)[static_cast<size_t>(l)] : nullptr;
        Id xn = tape.rmsnorm(x, tape.param(*L.norm1), S(1e-5));
        Id q = adapted(xn, *L.wq, ll ? &ll->wq : nullptr);
        Id k = adapted(xn, *L.wk, ll ? &ll->wk : nullptr);
        Id v = adapted(xn, *L.wv, ll ? &ll->wv : nullptr);
        std::vector<Id> head_outs;
        std::vector<Tensor<S>> layer_attn;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Id qh = tape.cols_slice(q, h * dh, (h + 1) * dh);
            Id kh = tape.cols_slice(k, h * dh, (h + 1) * dh);
            Id vh = tape.cols_slice(v, h * dh, (h + 1) * dh);
            Id scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
            Id attn = tape.masked_softmax_rows(scores, visible);
            if (want_attention) layer_attn.push_back(tape.val(attn));
            head_outs.push_back(tape.matmul(attn, vh));
        }
        Id merged = tape.cols_concat(head_outs);
        Id attn_out = adapted(merged, *L.wo, ll ? &ll->wo : nullptr);
        x = tape.add(x, attn_out);
        Id xn2 = tape.rmsnorm(x, tape.param(*L.norm2), S(1e-5));
        Id hmid = tape.gelu(adapted(xn2, *L.w1, ll ? &ll->w1 : nullptr));
        Id ffn_out = adapted(hmid, *L.w2, ll ? &ll->w2 : nullptr);
        x = tape.add(x, ffn_out);
        if (want_attention) out.attention.push_back(std::move(layer_attn));
    }
    out.hidden = tape.rmsnorm(x, tape.param(*m.final_norm), S(1e-5));
    out.logits = tape.matmul(out.hidden, tape.param(*m.head));
    return out;
}

// H_v = g(X_v) W : frozen featurizer projected by the trainable W.
template <class S>
typename Tape<S>::Id encode_scene(Tape<S>& tape, ModelState<S>& m, const Scene& scene) {
    auto feats = tape.constant(scene_features<S>(scene, m.cfg));
    return tape.matmul(feats, tape.param(*m.proj_w));
}

template <class S>
struct CompressResult {
    typename Tape<S>::Id summary = -1;  // [k' x d]
    PassOutput<S> pass;                 // unset for input-space compression
};

// First forward pass: [H_v ; H_p ; H_r] -> final hidden states of the last k'
// positions. For the single_forward pipeline the summary is instead a learned
// linear pooling of H_v, with no decoder pass involved.
template <class S>
CompressResult<S> compress_scene(Tape<S>& tape, ModelState<S>& m, const Scene& scene,
                                 Stage stage = Stage::compression, bool want_attention = false) {
    CompressResult<S> res;
    auto hv = encode_scene(tape, m, scene);
    if (m.opts.pipeline == Pipeline::single_forward) {
        res.summary = tape.matmul(tape.param(*m.input_compressor), hv);
        return res;
    }
    auto hp = tape.embed(tape.param(*m.tok_emb), default_vocab().prompt_ids());
    auto seq = tape.rows_concat({hv, hp, tape.param(*m.h_r)});
    res.pass = forward_rows(tape, m, seq, stage, m.cfg.attention_mode_compression, want_attention);
    int T = res.pass.seq_len;
    res.summary = tape.rows_slice(res.pass.hidden, T - m.cfg.k_summary, T);
    return res;
}

// Same mechanics with text embeddings in place of H_v; feeds the
// discriminative loss only.
template <class S>
CompressResult<S> compress_text(Tape<S>& tape, ModelState<S>& m, const std::vector<int>& tokens,
                                Stage stage = Stage::compression, bool want_attention = false) {
    if (tokens.empty()) throw contract_error("compress_text on empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= m.cfg.vocab_size) throw vocab_error("token id out of vocabulary");
    CompressResult<S> res;
    auto hq = tape.embed(tape.param(*m.tok_emb), tokens);
    auto hp = tape.embed(tape.param(*m.tok_emb), default_vocab().prompt_ids());
    auto seq = tape.rows_concat({hq, hp, tape.param(*m.h_r)});
    res.pass = forward_rows(tape, m, seq, stage, m.cfg.attention_mode_compression, want_attention);
    int T = res.pass.seq_len;
    res.summary = tape.rows_slice(res.pass.hidden, T - m.cfg.k_summary, T);
    return res;
}

// Final-layer hidden state at the last position of a pass over token rows;
// the zero-shot embedding route (no summary tokens involved).
template <class S>
typename Tape<S>::Id last_token_embedding(Tape<S>& tape, ModelState<S>& m, typename Tape<S>::Id rows, Stage stage,
                                          AttnMode mode = AttnMode::causal) {
    const Tensor<S>& r = tape.val(rows);
    if (r.rank() != 2 || r.rows() == 0) throw contract_error("last_token_embedding on empty sequence");
    PassOutput<S> pass = forward_rows(tape, m, rows, stage, mode);
    return tape.rows_slice(pass.hidden, pass.seq_len - 1, pass.seq_len);
}

}  // namespace f2b
