// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "f2b/checkpoint.hpp"
#include "f2b/data.hpp"
#include "f2b/inference.hpp"
#include "f2b/probes.hpp"
#include "f2b/runconfig.hpp"
#include "f2b/store.hpp"
#include "f2b/training.hpp"

namespace py = pybind11;
using namespace f2b;

namespace {

py::dict build_dataset(const std::string& out_path, const std::string& holdout_path, uint64_t seed, int count,
                       int holdout, const std::string& config_text) {
    RunConfig cfg = config_text.empty() ? RunConfig() : RunConfig::from_string(config_text);
    Corpus corpus = build_corpus(seed, count, holdout, cfg.data_config());
    write_dataset(out_path, corpus.train);
    if (holdout > 0) write_dataset(holdout_path, corpus.heldout);
    py::dict d;
    d["train"] = corpus.train.size();
    d["heldout"] = corpus.heldout.size();
    d["caption_uniqueness"] = corpus.caption_uniqueness;
    return d;
}

py::dict train_from_files(const std::string& config_text, const std::string& dataset_path,
                          const std::string& heldout_path, const std::string& ckpt_out,
                          const std::string& metrics_out) {
    RunConfig cfg = RunConfig::from_string(config_text);
    auto train_set = read_dataset(dataset_path);
    auto heldout = read_dataset(heldout_path);
    TrainConfig tc = cfg.train_config();
    ModelState<float> model = init_model<float>(cfg.model_config(), cfg.model_options(), tc.seed);
    TrainResult res = train_model(model, train_set, heldout, tc);
    save_checkpoint(ckpt_out, model);
    if (!metrics_out.empty()) {
        std::ofstream out(metrics_out, std::ios::binary);
        out << metrics_csv(res.metrics);
    }
    py::dict d;
    d["qa_acc"] = res.final_qa;
    d["r_at_1"] = res.final_r1;
    return d;
}

void compress_to_store(const std::string& ckpt_path, const std::string& dataset_path, const std::string& store_out,
                       const std::string& dtype) {
    ModelState<float> model = load_checkpoint<float>(ckpt_path);
    auto samples = read_dataset(dataset_path);
    std::vector<Scene> scenes;
    for (const auto& s : samples) scenes.push_back(s.scene);
    StoreDtype sd = dtype == "float32" ? StoreDtype::float32 : StoreDtype::half;
    ingest_scenes(model, scenes, store_out, sd);
}

std::string generate_from_store(const std::string& ckpt_path, const std::string& store_path,
                                const std::string& image_id, const std::string& question, int max_new_tokens) {
    ModelState<float> model = load_checkpoint<float>(ckpt_path);
    StoreReader store(store_path);
    check_store_matches(store.header(), model.cfg);
    GenerationParams params;
    params.max_new_tokens = max_new_tokens;
    auto answer = generate_with_prefix(model, store.read(image_id), default_vocab().tokenize(question), params);
    return default_vocab().detokenize(answer);
}

std::vector<std::pair<std::string, double>> retrieve_from_store(const std::string& ckpt_path,
                                                                const std::string& store_path,
                                                                const std::string& caption, int topk) {
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
    std::vector<std::pair<std::string, double>> out;
    for (const auto& hit : retrieve(index, qv, topk)) out.emplace_back(hit.id, hit.score);
    return out;
}

double contrastive_loss_from_sims(const std::vector<std::vector<double>>& sims) {
    int b = static_cast<int>(sims.size());
    Tensor<double> m({b, b});
    for (int r = 0; r < b; ++r) {
        if (static_cast<int>(sims[r].size()) != b) throw dim_error("similarity matrix must be square");
        for (int c = 0; c < b; ++c) m.at(r, c) = sims[r][c];
    }
    Tape<double> tape;
    return tape.scalar(tape.sym_info_nce(tape.constant(std::move(m))));
}

py::dict flops(const std::string& preset, const std::string& mode, uint64_t c) {
    CostModel cost = full_scale_cost_model();
    if (preset != "full_scale") throw usage_error("python binding exposes the full_scale preset only");
    cost.flops_c = c;
    FlopsBreakdown b = flops_estimate(cost, flops_mode_from_name(mode));
    py::dict d;
    d["vision"] = b.vision_term;
    d["llm"] = b.llm_term;
    d["total"] = b.total;
    return d;
}

}  // namespace

PYBIND11_MODULE(_fwd2bot, m) {
    m.doc() = "summary-token compression trainer: dataset, training, store, generation, retrieval, probes";

    m.def("build_dataset", &build_dataset, py::arg("out_path"), py::arg("holdout_path"), py::arg("seed"),
          py::arg("count"), py::arg("holdout"), py::arg("config_text") = "");
    m.def("train", &train_from_files, py::arg("config_text"), py::arg("dataset_path"), py::arg("heldout_path"),
          py::arg("ckpt_out"), py::arg("metrics_out") = "");
    m.def("compress", &compress_to_store, py::arg("ckpt_path"), py::arg("dataset_path"), py::arg("store_out"),
          py::arg("dtype") = "half");
    m.def("generate", &generate_from_store, py::arg("ckpt_path"), py::arg("store_path"), py::arg("image_id"),
          py::arg("question"), py::arg("max_new_tokens") = 4);
    m.def("retrieve", &retrieve_from_store, py::arg("ckpt_path"), py::arg("store_path"), py::arg("caption"),
          py::arg("topk") = 5);
    m.def("contrastive_loss", &contrastive_loss_from_sims, py::arg("sims"),
          "symmetric contrastive loss of a BxB similarity matrix");
    m.def("flops_estimate", &flops, py::arg("preset"), py::arg("mode"), py::arg("c") = 2);
    m.def("storage_bytes",
          [](uint64_t k, uint64_t d, const std::string& dtype) {
              return storage_bytes(k, d, dtype == "float32" ? StoreDtype::float32 : StoreDtype::half);
          },
          py::arg("k"), py::arg("d"), py::arg("dtype") = "half");
    m.def("config_help", &RunConfig::help_text);
    m.attr("__version__") = "0.1.0";
}
