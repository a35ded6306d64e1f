// SPDX-License-Identifier: Apache-2.0
#include "f2b/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace f2b {

const std::vector<RunConfig::KeyDoc>& RunConfig::key_docs() {
    static const std::vector<KeyDoc> docs = {
        {"model.d_model", "64", "embedding width d"},
        {"model.n_layers", "4", "decoder layers"},
        {"model.n_heads", "4", "attention heads"},
        {"model.ffn_width", "256", "feed-forward hidden width"},
        {"model.vocab_size", "64", "token vocabulary size"},
        {"model.k_vision", "36", "vision tokens per scene (grid cells)"},
        {"model.k_summary", "8", "summary tokens k'"},
        {"model.max_seq_len", "96", "maximum sequence length"},
        {"model.attention_mode_compression", "causal", "attention mask of the compression pass: causal|bidirectional"},
        {"model.adapter_mode", "stage", "adapter layout: stage|single|full_finetune"},
        {"model.lora_rank", "4", "low-rank adapter rank r"},
        {"model.lora_alpha", "1.0", "adapter scale alpha"},
        {"model.pipeline", "double_forward", "training pipeline: double_forward|single_forward|uncompressed"},
        {"train.steps", "1200", "optimizer steps"},
        {"train.ar_batch", "8", "samples per autoregressive step"},
        {"train.contrastive_batch", "16", "contrastive batch size B"},
        {"train.lr", "0.003", "peak learning rate"},
        {"train.lr_schedule", "cosine", "cosine|constant"},
        {"train.warmup_steps", "20", "linear warmup steps"},
        {"train.weight_decay", "0.0", "decoupled weight decay"},
        {"train.clip_norm", "1.0", "global gradient norm clip (0 disables)"},
        {"train.seed", "1", "seed for init, sampling and data order"},
        {"train.loss_mode", "both", "both|generative|discriminative"},
        {"train.loss_ratio", "1:1", "discriminative:autoregressive step mix"},
        {"train.temperature", "1.0", "contrastive similarity divisor (1 = none)"},
        {"train.eval_every", "100", "steps between held-out evaluations"},
        {"train.eval_qa", "128", "held-out QA questions per evaluation"},
        {"train.eval_retrieval", "64", "held-out retrieval pairs per evaluation"},
        {"data.rows", "6", "scene grid rows"},
        {"data.cols", "6", "scene grid columns"},
        {"data.min_objects", "1", "minimum objects per scene"},
        {"data.max_objects", "4", "maximum objects per scene"},
        {"data.qa_only_rate", "0.5", "fraction of train samples with QA only"},
        {"data.caption_only_rate", "0.5", "fraction with caption only (rest carry both)"},
        {"store.dtype", "half", "stored element type: half|float32"},
        {"probe.mask_group", "4", "summary-token group size for the masking probe"},
        {"probe.prefix_values", "1,2,4,8", "prefix lengths for the truncation probe"},
        {"probe.eval_limit", "128", "held-out samples used by eval-based probes"},
        {"probe.flops_c", "2", "FLOPs per parameter per token"},
        {"probe.flops_preset", "toy", "cost-model preset: toy|full_scale"},
    };
    return docs;
}

namespace {

const RunConfig::KeyDoc* find_doc(const std::string& key) {
    for (const auto& d : RunConfig::key_docs())
        if (key == d.key) return &d;
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw usage_error("config key " + key + " expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw usage_error("config key " + key + " expects a number, got '" + v + "'");
    }
}

}  // namespace

void RunConfig::set_checked(const std::string& key, const std::string& value) {
    if (!find_doc(key)) throw usage_error("unknown config key '" + key + "'");
    values_[key] = value;
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw usage_error("config line " + std::to_string(lineno) + " is not key=value: " + t);
        cfg.set_checked(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    const KeyDoc* d = find_doc(key);
    if (!d) throw usage_error("unknown config key '" + key + "'");
    return d->def;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.d_model = to_int("model.d_model", get("model.d_model"));
    m.n_layers = to_int("model.n_layers", get("model.n_layers"));
    m.n_heads = to_int("model.n_heads", get("model.n_heads"));
    m.ffn_width = to_int("model.ffn_width", get("model.ffn_width"));
    m.vocab_size = to_int("model.vocab_size", get("model.vocab_size"));
    m.k_vision = to_int("model.k_vision", get("model.k_vision"));
    m.k_summary = to_int("model.k_summary", get("model.k_summary"));
    m.max_seq_len = to_int("model.max_seq_len", get("model.max_seq_len"));
    std::string mode = get("model.attention_mode_compression");
    if (mode == "causal")
        m.attention_mode_compression = AttnMode::causal;
    else if (mode == "bidirectional")
        m.attention_mode_compression = AttnMode::bidirectional;
    else
        throw usage_error("model.attention_mode_compression must be causal|bidirectional");
    return m;
}

ModelOptions RunConfig::model_options() const {
    ModelOptions o;
    std::string am = get("model.adapter_mode");
    if (am == "stage")
        o.adapter_mode = AdapterMode::stage_specific;
    else if (am == "single")
        o.adapter_mode = AdapterMode::single;
    else if (am == "full_finetune")
        o.adapter_mode = AdapterMode::full_finetune;
    else
        throw usage_error("model.adapter_mode must be stage|single|full_finetune");
    o.lora_rank = to_int("model.lora_rank", get("model.lora_rank"));
    o.lora_alpha = to_double("model.lora_alpha", get("model.lora_alpha"));
    std::string p = get("model.pipeline");
    if (p == "double_forward")
        o.pipeline = Pipeline::double_forward;
    else if (p == "single_forward")
        o.pipeline = Pipeline::single_forward;
    else if (p == "uncompressed")
        o.pipeline = Pipeline::uncompressed;
    else
        throw usage_error("model.pipeline must be double_forward|single_forward|uncompressed");
    return o;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.steps = to_int("train.steps", get("train.steps"));
    t.ar_batch = to_int("train.ar_batch", get("train.ar_batch"));
    t.contrastive_batch = to_int("train.contrastive_batch", get("train.contrastive_batch"));
    t.lr = to_double("train.lr", get("train.lr"));
    t.lr_schedule = get("train.lr_schedule");
    t.warmup_steps = to_int("train.warmup_steps", get("train.warmup_steps"));
    t.weight_decay = to_double("train.weight_decay", get("train.weight_decay"));
    t.clip_norm = to_double("train.clip_norm", get("train.clip_norm"));
    t.seed = static_cast<uint64_t>(to_int("train.seed", get("train.seed")));
    t.loss_mode = get("train.loss_mode");
    std::string ratio = get("train.loss_ratio");
    size_t colon = ratio.find(':');
    if (colon == std::string::npos) throw usage_error("train.loss_ratio must look like 1:1");
    t.ratio_disc = to_int("train.loss_ratio", ratio.substr(0, colon));
    t.ratio_ar = to_int("train.loss_ratio", ratio.substr(colon + 1));
    t.temperature = to_double("train.temperature", get("train.temperature"));
    t.eval_every = to_int("train.eval_every", get("train.eval_every"));
    t.eval_qa = to_int("train.eval_qa", get("train.eval_qa"));
    t.eval_retrieval = to_int("train.eval_retrieval", get("train.eval_retrieval"));
    return t;
}

DataConfig RunConfig::data_config() const {
    DataConfig d;
    d.rows = to_int("data.rows", get("data.rows"));
    d.cols = to_int("data.cols", get("data.cols"));
    d.min_objects = to_int("data.min_objects", get("data.min_objects"));
    d.max_objects = to_int("data.max_objects", get("data.max_objects"));
    d.qa_only_rate = to_double("data.qa_only_rate", get("data.qa_only_rate"));
    d.caption_only_rate = to_double("data.caption_only_rate", get("data.caption_only_rate"));
    if (d.qa_only_rate < 0 || d.caption_only_rate < 0 || d.qa_only_rate + d.caption_only_rate > 1.0)
        throw usage_error("annotation rates must be nonnegative and sum to at most 1");
    return d;
}

StoreDtype RunConfig::store_dtype() const {
    std::string s = get("store.dtype");
    if (s == "half") return StoreDtype::half;
    if (s == "float32") return StoreDtype::float32;
    throw usage_error("store.dtype must be half|float32");
}

uint64_t RunConfig::seed() const { return static_cast<uint64_t>(to_int("train.seed", get("train.seed"))); }

void RunConfig::override_seed(uint64_t s) { values_["train.seed"] = std::to_string(s); }

int RunConfig::probe_mask_group() const { return to_int("probe.mask_group", get("probe.mask_group")); }

std::vector<int> RunConfig::probe_prefix_values() const {
    std::vector<int> out;
    std::string s = get("probe.prefix_values");
    std::istringstream iss(s);
    std::string part;
    while (std::getline(iss, part, ',')) out.push_back(to_int("probe.prefix_values", trim(part)));
    if (out.empty()) throw usage_error("probe.prefix_values is empty");
    return out;
}

int RunConfig::probe_eval_limit() const { return to_int("probe.eval_limit", get("probe.eval_limit")); }

uint64_t RunConfig::probe_flops_c() const { return static_cast<uint64_t>(to_int("probe.flops_c", get("probe.flops_c"))); }

std::string RunConfig::probe_flops_preset() const {
    std::string s = get("probe.flops_preset");
    if (s != "toy" && s != "full_scale") throw usage_error("probe.flops_preset must be toy|full_scale");
    return s;
}

std::string RunConfig::help_text() {
    std::string out = "Config keys (key = default): \n";
    for (const auto& d : key_docs()) {
        out += "  ";
        out += d.key;
        out += " = ";
        out += d.def;
        out += "  -- ";
        out += d.doc;
        out += "\n";
    }
    return out;
}

}  // namespace f2b
