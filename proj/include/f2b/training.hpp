// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "f2b/inference.hpp"
#include "f2b/model.hpp"

namespace f2b {

struct TrainConfig {
    int steps = 1200;
    int ar_batch = 8;
    int contrastive_batch = 16;  // B in the discriminative loss
    double lr = 3e-3;
    std::string lr_schedule = "cosine";  // cosine | constant
    int warmup_steps = 20;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    uint64_t seed = 1;
    std::string loss_mode = "both";  // both | generative | discriminative
    int ratio_disc = 1;              // discriminative : autoregressive step mix
    int ratio_ar = 1;
    double temperature = 1.0;  // contrastive similarity divisor; 1 = none
    int eval_every = 100;
    int eval_qa = 128;
    int eval_retrieval = 64;

    void validate() const {
        if (steps < 1) throw usage_error("steps must be >= 1");
        if (ar_batch < 1 || contrastive_batch < 2) throw usage_error("batch sizes too small");
        if (ratio_disc < 0 || ratio_ar < 0 || ratio_disc + ratio_ar == 0) throw usage_error("bad loss ratio");
        if (loss_mode != "both" && loss_mode != "generative" && loss_mode != "discriminative")
            throw usage_error("loss_mode must be both|generative|discriminative");
        if (lr_schedule != "cosine" && lr_schedule != "constant") throw usage_error("lr_schedule must be cosine|constant");
        if (temperature <= 0) throw usage_error("temperature must be positive");
    }
};

// ---- losses -------------------------------------------------------------------

// Second forward pass over [H^c_v ; X_q ; X_a]: mean next-token cross-entropy
// over the answer tokens plus the closing <eos>. Gradients flow through the
// summary node into the first pass.
template <class S>
typename Tape<S>::Id ar_loss(Tape<S>& tape, ModelState<S>& m, typename Tape<S>::Id summary,
                             const std::vector<int>& question, const std::vector<int>& answer) {
    if (answer.empty()) throw contract_error("ar_loss with empty answer");
    const Tensor<S>& sm = tape.val(summary);
    int prefix = sm.rows();
    std::vector<int> toks = question;
    toks.insert(toks.end(), answer.begin(), answer.end());
    auto rows = tape.rows_concat({summary, tape.embed(tape.param(*m.tok_emb), toks)});
    PassOutput<S> pass = forward_rows(tape, m, rows, Stage::generation, AttnMode::causal);
    std::vector<int> positions, targets;
    int qlen = static_cast<int>(question.size());
    for (size_t i = 0; i < answer.size(); ++i) {
        positions.push_back(prefix + qlen - 1 + static_cast<int>(i));
        targets.push_back(answer[i]);
    }
    positions.push_back(prefix + qlen + static_cast<int>(answer.size()) - 1);
    targets.push_back(Vocabulary::kEos);
    return tape.cross_entropy(pass.logits, targets, positions);
}

// Eq.-style symmetric contrastive loss over mean-pooled compressed
// embeddings. Rows of e_v/e_t are one element each; no temperature by
// default. B = 1 degenerates to zero loss (flagged by the caller).
template <class S>
typename Tape<S>::Id contrastive_loss(Tape<S>& tape, typename Tape<S>::Id e_v, typename Tape<S>::Id e_t,
                                      double temperature = 1.0) {
    const Tensor<S>& Ev = tape.val(e_v);
    const Tensor<S>& Et = tape.val(e_t);
    if (Ev.rank() != 2 || Et.rank() != 2 || Ev.rows() != Et.rows() || Ev.cols() != Et.cols())
        throw dim_error("contrastive_loss embedding shape mismatch");
    auto sims = tape.matmul_nt(tape.rows_unit(e_v), tape.rows_unit(e_t));
    if (temperature != 1.0) sims = tape.scale(sims, static_cast<S>(1.0 / temperature));
    return tape.sym_info_nce(sims);
}

// ---- batches --------------------------------------------------------------------

struct TrainBatch {
    std::vector<const TrainSample*> ar;    // L_AR applies
    std::vector<const TrainSample*> disc;  // L_disc applies; distinct scenes
};

// Interleaves loss kinds at the configured ratio (deterministic pattern), so
// a 1:1 mix applies each loss in exactly half the steps. Samples carrying
// both annotations are grouped: when an autoregressive draw contains at least
// two of them, the step also runs the discriminative loss on a contrastive
// sub-batch seeded by those samples and filled to size B.
class BatchSampler {
  public:
    BatchSampler(const std::vector<TrainSample>& dataset, const TrainConfig& cfg)
        : data_(dataset), cfg_(cfg), rng_(seeded_rng(cfg.seed, 20)) {
        for (size_t i = 0; i < dataset.size(); ++i) {
            if (dataset[i].has_qa()) qa_pool_.push_back(i);
            if (dataset[i].has_caption()) cap_pool_.push_back(i);
            if (dataset[i].has_qa() && dataset[i].has_caption()) dual_pool_.push_back(i);
        }
        if (data_.empty()) throw data_error("empty dataset");
        bool want_ar = cfg.loss_mode != "discriminative" && cfg.ratio_ar > 0;
        bool want_disc = cfg.loss_mode != "generative" && cfg.ratio_disc > 0;
        if (want_ar && qa_pool_.empty()) throw data_error("no QA samples in dataset");
        if (want_disc && static_cast<int>(cap_pool_.size()) < cfg.contrastive_batch)
            throw data_error("sampler error: cannot fill a contrastive batch with distinct scenes");
    }

    TrainBatch next() {
        TrainBatch batch;
        bool ar_step;
        if (cfg_.loss_mode == "generative") {
            ar_step = true;
        } else if (cfg_.loss_mode == "discriminative") {
            ar_step = false;
        } else {
            int cycle = cfg_.ratio_ar + cfg_.ratio_disc;
            ar_step = (step_ % cycle) < cfg_.ratio_ar;
        }
        ++step_;
        if (ar_step) {
            // Dual-annotated samples are drawn together (at their natural
            // rate) so both losses apply within one step.
            bool grouped = false;
            if (cfg_.loss_mode == "both" && static_cast<int>(dual_pool_.size()) >= cfg_.ar_batch) {
                double dual_frac = static_cast<double>(dual_pool_.size()) / static_cast<double>(qa_pool_.size());
                grouped = uniform01(rng_) < dual_frac;
            }
            draw_without_replacement(grouped ? dual_pool_ : qa_pool_, cfg_.ar_batch, batch.ar);
            if (grouped) {
                batch.disc = batch.ar;
                fill_contrastive(batch.disc);
            }
        } else {
            fill_contrastive(batch.disc);
        }
        return batch;
    }

  private:
    void draw_without_replacement(const std::vector<size_t>& pool, int n, std::vector<const TrainSample*>& out) {
        if (static_cast<int>(pool.size()) < n) throw data_error("sampler error: pool smaller than batch");
        std::vector<size_t> idx = pool;
        for (int k = 0; k < n; ++k) {
            size_t pick = k + static_cast<size_t>(uniform_index(rng_, idx.size() - k));
            std::swap(idx[k], idx[pick]);
            out.push_back(&data_[idx[k]]);
        }
    }

    // Distinct scenes, filled to the configured contrastive batch size.
    void fill_contrastive(std::vector<const TrainSample*>& out) {
        std::unordered_set<std::string> keys;
        for (const TrainSample* s : out) keys.insert(s->scene.key());
        std::vector<size_t> idx = cap_pool_;
        size_t cursor = 0;
        while (static_cast<int>(out.size()) < cfg_.contrastive_batch) {
            if (cursor >= idx.size()) throw data_error("sampler error: cannot fill a contrastive batch with distinct scenes");
            size_t pick = cursor + static_cast<size_t>(uniform_index(rng_, idx.size() - cursor));
            std::swap(idx[cursor], idx[pick]);
            const TrainSample* s = &data_[idx[cursor]];
            ++cursor;
            if (!keys.insert(s->scene.key()).second) continue;
            out.push_back(s);
        }
    }

    const std::vector<TrainSample>& data_;
    TrainConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<size_t> qa_pool_, cap_pool_, dual_pool_;
    int64_t step_ = 0;
};

// ---- optimizer ------------------------------------------------------------------

// Adam with decoupled weight decay; decay skips rank-1 gains and embedding
// tables when enabled.
template <class S>
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const std::vector<Param<S>*>& params, double lr, double weight_decay) {
        ++t_;
        if (slots_.size() < params.size()) slots_.resize(params.size());
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Param<S>& p = *params[pi];
            Slot& s = slots_[pi];
            if (s.m.size() != p.value.data.size()) {
                s.m.assign(p.value.data.size(), 0.0);
                s.v.assign(p.value.data.size(), 0.0);
            }
            bool decay = weight_decay > 0 && p.value.rank() >= 2 && p.name.rfind("embed.", 0) != 0 &&
                         p.name.rfind("summary.", 0) != 0;
            for (size_t i = 0; i < p.value.data.size(); ++i) {
                double g = static_cast<double>(p.grad[i]);
                s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
                s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
                double update = (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
                double x = static_cast<double>(p.value.data[i]);
                x -= lr * update;
                if (decay) x -= lr * weight_decay * x;
                p.value.data[i] = static_cast<S>(x);
            }
        }
    }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;  // parallel to the param list passed each step
    double b1_, b2_, eps_;
    int64_t t_ = 0;
};

inline double schedule_lr(const TrainConfig& cfg, int step) {  // step is 0-based
    double lr = cfg.lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) return lr * (step + 1) / cfg.warmup_steps;
    if (cfg.lr_schedule == "constant") return lr;
    int total = std::max(1, cfg.steps - cfg.warmup_steps);
    int done = std::min(total, step - cfg.warmup_steps);
    double min_lr = 0.1 * lr;
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * done / total));
}

// ---- the double-forward step -------------------------------------------------------

struct StepLosses {
    double ar = 0.0;
    double disc = 0.0;
    double total = 0.0;
    bool ar_applied = false;
    bool disc_applied = false;
};

struct StepLossNodes {
    int32_t ar = -1;
    int32_t disc = -1;
    int32_t total = -1;
};

// Builds the full training objective on one tape: first pass (compression
// stage) produces H^c_v per scene and H^c_t per caption, L_disc is computed
// on pooled embeddings, the second pass (generation stage) consumes only the
// summaries for L_AR. L_Total = L_AR + L_disc, absent parts contributing 0.
template <class S>
StepLossNodes build_step_loss(Tape<S>& tape, ModelState<S>& m, const TrainBatch& batch, const TrainConfig& cfg) {
    using Id = typename Tape<S>::Id;
    if (batch.ar.empty() && batch.disc.empty()) throw contract_error("empty training batch");
    StepLossNodes nodes;
    if (!batch.ar.empty()) {
        Id sum = -1;
        for (const TrainSample* s : batch.ar) {
            if (!s->has_qa()) throw contract_error("AR batch sample without QA");
            auto comp = compress_scene(tape, m, s->scene);
            Id li = ar_loss(tape, m, comp.summary, s->qa->question, s->qa->answer);
            sum = sum < 0 ? li : tape.add(sum, li);
        }
        nodes.ar = tape.scale(sum, S(1) / static_cast<S>(batch.ar.size()));
        nodes.total = nodes.ar;
    }
    if (!batch.disc.empty()) {
        if (batch.disc.size() < 2) throw contract_error("contrastive batch needs B >= 2");
        std::vector<Id> ev_rows, et_rows;
        for (const TrainSample* s : batch.disc) {
            if (!s->has_caption()) throw contract_error("contrastive sample without caption");
            auto comp = compress_scene(tape, m, s->scene);
            ev_rows.push_back(tape.mean_rows(comp.summary));
            auto tcomp = compress_text(tape, m, *s->caption);
            et_rows.push_back(tape.mean_rows(tcomp.summary));
        }
        nodes.disc = contrastive_loss(tape, tape.rows_concat(ev_rows), tape.rows_concat(et_rows), cfg.temperature);
        nodes.total = nodes.total < 0 ? nodes.disc : tape.add(nodes.total, nodes.disc);
    }
    return nodes;
}

// One optimizer update over a batch.
template <class S>
StepLosses double_forward_step(ModelState<S>& m, const TrainBatch& batch, const TrainConfig& cfg, AdamW<S>& opt,
                               int step_index) {
    for (Param<S>* p : m.trainable_params()) p->zero_grad();

    Tape<S> tape;
    StepLossNodes nodes;
    try {
        nodes = build_step_loss(tape, m, batch, cfg);
    } catch (const numeric_error& e) {
        throw numeric_error("aborting at step " + std::to_string(step_index) + ": " + e.what());
    }
    StepLosses out;
    if (nodes.ar >= 0) {
        out.ar = static_cast<double>(tape.scalar(nodes.ar));
        out.ar_applied = true;
    }
    if (nodes.disc >= 0) {
        out.disc = static_cast<double>(tape.scalar(nodes.disc));
        out.disc_applied = true;
    }
    out.total = static_cast<double>(tape.scalar(nodes.total));
    if (!std::isfinite(out.total))
        throw numeric_error("non-finite loss at step " + std::to_string(step_index));

    tape.backward(nodes.total);

    auto params = m.trainable_params();
    if (cfg.clip_norm > 0) {
        double ss = 0;
        for (Param<S>* p : params)
            for (S g : p->grad) ss += static_cast<double>(g) * static_cast<double>(g);
        double norm = std::sqrt(ss);
        if (norm > cfg.clip_norm) {
            S k = static_cast<S>(cfg.clip_norm / norm);
            for (Param<S>* p : params)
                for (S& g : p->grad) g *= k;
        }
    }
    opt.step(params, schedule_lr(cfg, step_index), cfg.weight_decay);
    return out;
}

// ---- training loop ----------------------------------------------------------------

struct MetricsRow {
    int step;
    double l_ar, l_disc, qa_acc, r_at_1;
};

struct TrainResult {
    double final_qa = 0.0;
    double final_r1 = 0.0;
    std::vector<MetricsRow> metrics;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,L_AR,L_disc,qa_acc,r_at_1\n";
    char buf[160];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", r.step, r.l_ar, r.l_disc, r.qa_acc, r.r_at_1);
        out += buf;
    }
    return out;
}

// Runs the configured number of steps, periodically evaluating held-out QA
// accuracy and retrieval R@1. The model is mutated in place; metric rows
// accumulate in the result.
template <class S>
TrainResult train_model(ModelState<S>& m, const std::vector<TrainSample>& train_set,
                        const std::vector<TrainSample>& heldout, const TrainConfig& cfg,
                        const std::function<void(int, const StepLosses&)>& on_step = nullptr) {
    cfg.validate();
    TrainConfig effective = cfg;
    if (m.opts.pipeline != Pipeline::double_forward) {
        // The baselines optimize next-token prediction only; their summary
        // (or raw vision) tokens never produce a text-side embedding to
        // contrast against.
        if (cfg.loss_mode == "discriminative")
            throw usage_error("discriminative loss mode requires the double_forward pipeline");
        effective.loss_mode = "generative";
    }
    BatchSampler sampler(train_set, effective);
    AdamW<S> opt;
    TrainResult result;
    double win_ar = 0, win_disc = 0;
    int win_ar_n = 0, win_disc_n = 0;

    auto evaluate = [&](int step) {
        double qa = qa_accuracy(m, heldout, effective.eval_qa);
        double r1 = m.opts.pipeline == Pipeline::uncompressed
                        ? retrieval_r_at_1(m, heldout, effective.eval_retrieval, /*use_zero_shot=*/true)
                        : retrieval_r_at_1(m, heldout, effective.eval_retrieval);
        MetricsRow row{step, win_ar_n ? win_ar / win_ar_n : 0.0, win_disc_n ? win_disc / win_disc_n : 0.0, qa, r1};
        result.metrics.push_back(row);
        win_ar = win_disc = 0;
        win_ar_n = win_disc_n = 0;
        result.final_qa = qa;
        result.final_r1 = r1;
    };

    for (int step = 0; step < effective.steps; ++step) {
        TrainBatch batch = sampler.next();
        StepLosses losses = double_forward_step(m, batch, effective, opt, step);
        if (losses.ar_applied) {
            win_ar += losses.ar;
            ++win_ar_n;
        }
        if (losses.disc_applied) {
            win_disc += losses.disc;
            ++win_disc_n;
        }
        if (on_step) on_step(step, losses);
        if (effective.eval_every > 0 && (step + 1) % effective.eval_every == 0) evaluate(step + 1);
    }
    if (result.metrics.empty() || result.metrics.back().step != effective.steps) evaluate(effective.steps);
    return result;
}

}  // namespace f2b
