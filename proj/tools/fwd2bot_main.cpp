// SPDX-License-Identifier: Apache-2.0
//
// Operator surface: dataset build, training, offline compression into the
// store, generation and retrieval from stored tokens, and the diagnostic
// probes. Every command is deterministic given its config and seed; flags
// carry only paths and seeds, everything affecting results sits in the
// key=value config file.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "f2b/checkpoint.hpp"
#include "f2b/data.hpp"
#include "f2b/inference.hpp"
#include "f2b/probes.hpp"
#include "f2b/runconfig.hpp"
#include "f2b/store.hpp"
#include "f2b/training.hpp"

namespace {

using namespace f2b;

RunConfig load_config(const std::string& path) {
    RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
    if (const char* env = std::getenv("FWD2BOT_SEED")) {
        try {
            cfg.override_seed(static_cast<uint64_t>(std::stoull(env)));
        } catch (const std::exception&) {
            throw usage_error("FWD2BOT_SEED is not an integer");
        }
    }
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw io_error("write failed: " + path);
}

std::vector<Scene> scenes_of(const std::vector<TrainSample>& samples) {
    std::vector<Scene> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.scene);
    return out;
}

int cmd_dataset(const std::string& config_path, uint64_t seed, int count, int holdout, const std::string& out_path,
                const std::string& holdout_path) {
    RunConfig cfg = load_config(config_path);
    if (const char* env = std::getenv("FWD2BOT_SEED")) seed = static_cast<uint64_t>(std::stoull(env));
    DataConfig dc = cfg.data_config();
    Corpus corpus = build_corpus(seed, count, holdout, dc);
    write_dataset(out_path, corpus.train);
    if (holdout > 0) {
        if (holdout_path.empty()) throw usage_error("--holdout-out required when --holdout > 0");
        write_dataset(holdout_path, corpus.heldout);
    }
    // corpus stats: caption uniqueness and attribute balance
    int64_t color_counts[kNumColors] = {0};
    int64_t objects = 0;
    auto tally = [&](const std::vector<TrainSample>& ss) {
        for (const auto& s : ss)
            for (const auto& o : scene_objects(s.scene)) {
                color_counts[static_cast<int>(o.color)]++;
                ++objects;
            }
    };
    tally(corpus.train);
    tally(corpus.heldout);
    std::cout << "samples train=" << corpus.train.size() << " heldout=" << corpus.heldout.size() << "\n";
    std::cout << "caption_uniqueness " << corpus.caption_uniqueness << "\n";
    std::cout << "color_balance";
    for (int c = 0; c < kNumColors; ++c)
        std::cout << " " << color_word(static_cast<Color>(c)) << "=" << (objects ? static_cast<double>(color_counts[c]) / objects : 0.0);
    std::cout << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_path, const std::string& heldout_path,
              const std::string& out_path, std::string metrics_path) {
    RunConfig cfg = load_config(config_path);
    std::vector<TrainSample> train_set = read_dataset(dataset_path);
    std::vector<TrainSample> heldout = read_dataset(heldout_path);
    ModelConfig mc = cfg.model_config();
    ModelOptions mo = cfg.model_options();
    TrainConfig tc = cfg.train_config();
    ModelState<float> model = init_model<float>(mc, mo, tc.seed);
    TrainResult result = train_model(model, train_set, heldout, tc);
    save_checkpoint(out_path, model);
    if (metrics_path.empty()) metrics_path = out_path + ".metrics.csv";
    write_text(metrics_path, metrics_csv(result.metrics));
    std::cout << "final qa_acc=" << result.final_qa << " r_at_1=" << result.final_r1 << "\n";
    return 0;
}

int cmd_compress(const std::string& config_path, const std::string& ckpt_path, const std::string& dataset_path,
                 const std::string& out_path) {
    RunConfig cfg = load_config(config_path);
    ModelState<float> model = load_checkpoint<float>(ckpt_path);
    std::vector<TrainSample> samples = read_dataset(dataset_path);
    ingest_scenes(model, scenes_of(samples), out_path, cfg.store_dtype());
    StoreReader reader(out_path);
    std::cout << "stored " << reader.header().count << " records, "
              << storage_bytes(reader.header().k_summary, reader.header().d, reader.header().dtype)
              << " payload bytes per image\n";
    return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& store_path, const std::string& image_id,
                 const std::string& question, int max_new_tokens) {
    ModelState<float> model = load_checkpoint<float>(ckpt_path);
    StoreReader store(store_path);
    check_store_matches(store.header(), model.cfg);
    Tensor<float> summary = store.read(image_id);
    std::vector<int> q = default_vocab().tokenize(question);
    GenerationParams params;
    params.max_new_tokens = max_new_tokens;
    std::vector<int> answer = generate_with_prefix(model, summary, q, params);
    std::cout << default_vocab().detokenize(answer) << "\n";
    return 0;
}

int cmd_retrieve(const std::string& ckpt_path, const std::string& store_path, const std::string& caption, int topk,
                 const std::string& query_id, const std::string& out_path) {
    ModelState<float> model = load_checkpoint<float>(ckpt_path);
    StoreReader store(store_path);
    check_store_matches(store.header(), model.cfg);
    std::vector<std::string> ids = store.ids();
    std::vector<std::vector<float>> vecs;
    for (const std::string& id : ids) {
        Tensor<float> rec = store.read(id);
        std::vector<float> pooled(static_cast<size_t>(rec.cols()), 0.0f);
        for (int r = 0; r < rec.rows(); ++r)
            for (int c = 0; c < rec.cols(); ++c) pooled[static_cast<size_t>(c)] += rec.at(r, c);
        for (float& v : pooled) v /= static_cast<float>(rec.rows());
        vecs.push_back(std::move(pooled));
    }
    RetrievalIndex index = build_index(std::move(ids), std::move(vecs));
    Tensor<float> et = embed_text(model, default_vocab().tokenize(caption));
    std::vector<float> qv(et.data.begin(), et.data.end());
    auto hits = retrieve(index, qv, topk);
    std::string csv = "query_id,rank,image_id,score\n";
    char buf[160];
    for (size_t i = 0; i < hits.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%s,%.6f\n", query_id.c_str(), i + 1, hits[i].id.c_str(), hits[i].score);
        csv += buf;
    }
    write_text(out_path, csv);
    return 0;
}

int cmd_probe(const std::string& config_path, const std::string& ckpt_path, const std::string& which,
              const std::string& dataset_path, int scene_index, const std::string& out_path,
              const std::string& plot_path) {
    RunConfig cfg = load_config(config_path);
    std::string csv;
    if (which == "flops" || which == "storage") {
        CostModel cost;
        if (cfg.probe_flops_preset() == "full_scale") {
            cost = full_scale_cost_model();
        } else {
            if (ckpt_path.empty()) throw usage_error("toy cost preset needs --ckpt");
            ModelState<float> model = load_checkpoint<float>(ckpt_path);
            cost = toy_cost_model(model);
        }
        cost.flops_c = cfg.probe_flops_c();
        if (which == "flops") {
            csv = flops_csv(cost);
        } else {
            csv = "K,d,dtype,bytes\n";
            char buf[96];
            std::snprintf(buf, sizeof buf, "%llu,%llu,half,%llu\n", static_cast<unsigned long long>(cost.k_summary),
                          static_cast<unsigned long long>(cost.d),
                          static_cast<unsigned long long>(storage_bytes(cost.k_summary, cost.d, StoreDtype::half)));
            csv += buf;
            std::snprintf(buf, sizeof buf, "%llu,%llu,float32,%llu\n", static_cast<unsigned long long>(cost.k_summary),
                          static_cast<unsigned long long>(cost.d),
                          static_cast<unsigned long long>(storage_bytes(cost.k_summary, cost.d, StoreDtype::float32)));
            csv += buf;
        }
    } else {
        if (ckpt_path.empty()) throw usage_error("probe '" + which + "' needs --ckpt");
        ModelState<float> model = load_checkpoint<float>(ckpt_path);
        if (which == "norms") {
            csv = adapter_norms_csv(adapter_delta_norms(model));
        } else {
            if (dataset_path.empty()) throw usage_error("probe '" + which + "' needs --dataset");
            std::vector<TrainSample> samples = read_dataset(dataset_path);
            if (samples.empty()) throw data_error("empty dataset");
            if (which == "attention") {
                if (scene_index < 0 || static_cast<size_t>(scene_index) >= samples.size())
                    throw usage_error("--scene-index out of range");
                csv = attention_csv(attention_map_compression(model, samples[static_cast<size_t>(scene_index)].scene));
            } else if (which == "mask") {
                csv = importance_csv(mask_importance(model, samples, cfg.probe_mask_group(), cfg.probe_eval_limit()));
            } else if (which == "prefix") {
                std::vector<int> mv = cfg.probe_prefix_values();
                std::vector<int> valid;
                for (int v : mv)
                    if (v >= 1 && v <= model.cfg.k_summary) valid.push_back(v);
                if (valid.empty()) throw usage_error("no prefix values within 1..k_summary");
                csv = prefix_csv(prefix_truncation_eval(model, samples, valid, cfg.probe_eval_limit()));
            } else {
                throw usage_error("unknown probe '" + which + "'");
            }
        }
    }
    write_text(out_path, csv);
    if (!plot_path.empty()) write_text(plot_path, csv_to_gnuplot(csv));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fwd2bot: double-forward summary-token compression for a toy vision-language decoder"};
    app.footer(RunConfig::help_text());
    app.require_subcommand(1);

    std::string config_path, dataset_path, heldout_path, out_path, metrics_path, ckpt_path, store_path;
    std::string image_id, question, caption, which, query_id = "query", plot_path, holdout_path;
    uint64_t seed = 1;
    int count = 2048, holdout = 256, max_new_tokens = 4, topk = 5, scene_index = 0;

    auto* dataset = app.add_subcommand("dataset", "generate a scene corpus with captions and QA");
    dataset->add_option("--config", config_path, "config file (data.* keys)");
    dataset->add_option("--seed", seed, "corpus seed")->capture_default_str();
    dataset->add_option("--count", count, "training samples")->capture_default_str();
    dataset->add_option("--holdout", holdout, "held-out samples")->capture_default_str();
    dataset->add_option("--out", out_path, "training dataset path")->required();
    dataset->add_option("--holdout-out", holdout_path, "held-out dataset path");

    auto* train = app.add_subcommand("train", "train a model; writes checkpoint and metrics CSV");
    train->add_option("--config", config_path, "config file");
    train->add_option("--dataset", dataset_path, "training dataset")->required();
    train->add_option("--heldout", heldout_path, "held-out dataset")->required();
    train->add_option("--out", out_path, "checkpoint path")->required();
    train->add_option("--metrics", metrics_path, "metrics CSV path (default: <out>.metrics.csv)");

    auto* compress = app.add_subcommand("compress", "compress every scene of a dataset into a store file");
    compress->add_option("--config", config_path, "config file (store.* keys)");
    compress->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    compress->add_option("--dataset", dataset_path, "dataset to ingest")->required();
    compress->add_option("--out", out_path, "store path")->required();

    auto* generate = app.add_subcommand("generate", "answer a question from stored tokens only");
    generate->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    generate->add_option("--store", store_path, "store file")->required();
    generate->add_option("--image-id", image_id, "record id")->required();
    generate->add_option("--question", question, "question text")->required();
    generate->add_option("--max-new-tokens", max_new_tokens, "decode budget")->capture_default_str();

    auto* retrieveCmd = app.add_subcommand("retrieve", "rank stored images against a caption");
    retrieveCmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    retrieveCmd->add_option("--store", store_path, "store file")->required();
    retrieveCmd->add_option("--caption", caption, "query caption text")->required();
    retrieveCmd->add_option("--topk", topk, "results to print")->capture_default_str();
    retrieveCmd->add_option("--query-id", query_id, "id column for the output CSV")->capture_default_str();
    retrieveCmd->add_option("--out", out_path, "output CSV (default stdout)");

    auto* probe = app.add_subcommand("probe", "diagnostics: attention | mask | prefix | norms | flops | storage");
    probe->add_option("--config", config_path, "config file (probe.* keys)");
    probe->add_option("--ckpt", ckpt_path, "checkpoint");
    probe->add_option("--which", which, "probe name")->required();
    probe->add_option("--dataset", dataset_path, "dataset for eval-based probes");
    probe->add_option("--scene-index", scene_index, "scene for the attention probe")->capture_default_str();
    probe->add_option("--out", out_path, "output CSV (default stdout)");
    probe->add_option("--plot-out", plot_path, "also write a gnuplot-compatible data file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (dataset->parsed()) return cmd_dataset(config_path, seed, count, holdout, out_path, holdout_path);
        if (train->parsed()) return cmd_train(config_path, dataset_path, heldout_path, out_path, metrics_path);
        if (compress->parsed()) return cmd_compress(config_path, ckpt_path, dataset_path, out_path);
        if (generate->parsed()) return cmd_generate(ckpt_path, store_path, image_id, question, max_new_tokens);
        if (retrieveCmd->parsed()) return cmd_retrieve(ckpt_path, store_path, caption, topk, query_id, out_path);
        if (probe->parsed()) return cmd_probe(config_path, ckpt_path, which, dataset_path, scene_index, out_path, plot_path);
    } catch (const f2b::error& e) {
        std::cerr << e.what() << "\n";
        return static_cast<int>(e.code);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 70;
    }
    return 2;
}
