// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "f2b/checkpoint.hpp"
#include "f2b/model.hpp"
#include "test_util.hpp"

using namespace f2b;
using test::micro_config;
using test::micro_options;
using test::micro_scene;
using test::random_tensor;

namespace {

std::vector<float> row_of(const Tensor<float>& t, int r) {
    std::vector<float> out(static_cast<size_t>(t.cols()));
    for (int c = 0; c < t.cols(); ++c) out[static_cast<size_t>(c)] = t.at(r, c);
    return out;
}

}  // namespace

TEST_CASE("scene featurizer is cellwise") {
    ModelConfig cfg = micro_config();

    Scene empty = test::scene_from_cells(2, 2, {0, 0, 0, 0});
    Tensor<float> f = scene_features<float>(empty, cfg);
    for (int r = 1; r < 4; ++r) CHECK(row_of(f, r) == row_of(f, 0));  // identical empty-cell rows

    Scene one = test::scene_from_cells(2, 2, {1, 0, 0, 0});
    Tensor<float> f1 = scene_features<float>(one, cfg);
    CHECK(row_of(f1, 0) != row_of(f1, 1));
    CHECK(row_of(f1, 1) == row_of(f1, 2));
    CHECK(row_of(f1, 2) == row_of(f1, 3));

    // two scenes differing in exactly one cell differ in exactly one feature row
    Scene a = micro_scene();
    Scene b = a;
    b.cells[1] = 5;
    Tensor<float> fa = scene_features<float>(a, cfg);
    Tensor<float> fb = scene_features<float>(b, cfg);
    int differing = 0;
    for (int r = 0; r < 4; ++r) differing += (row_of(fa, r) != row_of(fb, r));
    CHECK(differing == 1);

    Scene wrong = test::scene_from_cells(3, 3, std::vector<uint8_t>(9, 0));
    CHECK_THROWS_AS(scene_features<float>(wrong, cfg), data_error);
    Scene bad_attr = test::scene_from_cells(2, 2, {13, 0, 0, 0});
    CHECK_THROWS_AS(scene_features<float>(bad_attr, cfg), data_error);
}

TEST_CASE("zero adapters are exactly the base model") {
    ModelConfig cfg = micro_config();
    ModelOptions with = micro_options();
    ModelOptions without = micro_options();
    without.adapter_mode = AdapterMode::full_finetune;
    ModelState<float> adapted = init_model<float>(cfg, with, 77);
    ModelState<float> base = init_model<float>(cfg, without, 77);

    auto rng = seeded_rng(100);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<float> rows = random_tensor<float>({5, cfg.d_model}, rng, 0.5);
        Stage stage = trial % 2 ? Stage::compression : Stage::generation;
        Tape<float> t1, t2;
        auto p1 = forward_rows(t1, adapted, t1.constant(rows), stage, AttnMode::causal);
        auto p2 = forward_rows(t2, base, t2.constant(rows), stage, AttnMode::causal);
        CHECK(t1.val(p1.logits).data == t2.val(p2.logits).data);  // bit-identical
    }
    // stage choice does not matter while deltas vanish
    Tensor<float> rows = random_tensor<float>({6, cfg.d_model}, rng, 0.5);
    Tape<float> t1, t2;
    auto pc = forward_rows(t1, adapted, t1.constant(rows), Stage::compression, AttnMode::causal);
    auto pg = forward_rows(t2, adapted, t2.constant(rows), Stage::generation, AttnMode::causal);
    CHECK(t1.val(pc.logits).data == t2.val(pg.logits).data);
}

TEST_CASE("causal masking: appending a token leaves earlier states bit-identical") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 5);
    auto rng = seeded_rng(6);
    Tensor<float> rows = random_tensor<float>({6, cfg.d_model}, rng, 0.5);
    Tensor<float> longer({7, cfg.d_model});
    std::copy(rows.data.begin(), rows.data.end(), longer.data.begin());
    for (int c = 0; c < cfg.d_model; ++c) longer.at(6, c) = 0.3f;

    Tape<float> t1, t2;
    auto p1 = forward_rows(t1, m, t1.constant(rows), Stage::generation, AttnMode::causal);
    auto p2 = forward_rows(t2, m, t2.constant(longer), Stage::generation, AttnMode::causal);
    for (int r = 0; r < 6; ++r) {
        CHECK(row_of(t1.val(p1.hidden), r) == row_of(t2.val(p2.hidden), r));
        CHECK(row_of(t1.val(p1.logits), r) == row_of(t2.val(p2.logits), r));
    }

    // bidirectional mode: earlier positions change
    Tape<float> t3, t4;
    auto p3 = forward_rows(t3, m, t3.constant(rows), Stage::generation, AttnMode::bidirectional);
    auto p4 = forward_rows(t4, m, t4.constant(longer), Stage::generation, AttnMode::bidirectional);
    CHECK(row_of(t3.val(p3.hidden), 0) != row_of(t4.val(p4.hidden), 0));
}

TEST_CASE("attention matrices: rows sum to one, causal zeros above diagonal") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 5);
    auto rng = seeded_rng(8);
    Tensor<float> rows = random_tensor<float>({6, cfg.d_model}, rng, 0.5);
    Tape<float> t;
    auto pass = forward_rows(t, m, t.constant(rows), Stage::compression, AttnMode::causal, true);
    REQUIRE(pass.attention.size() == static_cast<size_t>(cfg.n_layers));
    for (const auto& layer : pass.attention) {
        REQUIRE(layer.size() == static_cast<size_t>(cfg.n_heads));
        for (const Tensor<float>& head : layer) {
            for (int i = 0; i < 6; ++i) {
                double sum = 0;
                for (int j = 0; j < 6; ++j) {
                    sum += head.at(i, j);
                    if (j > i) CHECK(head.at(i, j) == 0.0f);
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("compress: shape contract, determinism, causal row dependencies") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 9);
    Scene s = micro_scene();

    Tape<float> t1;
    auto c1 = compress_scene(t1, m, s);
    CHECK(t1.val(c1.summary).rows() == cfg.k_summary);
    CHECK(t1.val(c1.summary).cols() == cfg.d_model);

    Tape<float> t2;
    auto c2 = compress_scene(t2, m, s);
    CHECK(t1.val(c1.summary).data == t2.val(c2.summary).data);  // pure function of (weights, scene)

    // causal mode: summary row j is unaffected by perturbing H_r row j+1
    Tensor<float> before = t1.val(c1.summary);
    float keep = m.h_r->value.at(1, 0);
    m.h_r->value.at(1, 0) = keep + 1.0f;
    Tape<float> t3;
    auto c3 = compress_scene(t3, m, s);
    m.h_r->value.at(1, 0) = keep;
    CHECK(row_of(t3.val(c3.summary), 0) == row_of(before, 0));
    CHECK(row_of(t3.val(c3.summary), 1) != row_of(before, 1));
}

TEST_CASE("compress_text mirrors compress and validates tokens") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 10);
    const Vocabulary& v = default_vocab();
    std::vector<int> cap = v.tokenize("a red circle");

    Tape<float> t1;
    auto c1 = compress_text(t1, m, cap);
    CHECK(t1.val(c1.summary).rows() == cfg.k_summary);
    CHECK(t1.val(c1.summary).cols() == cfg.d_model);

    Tape<float> t2;
    auto c2 = compress_text(t2, m, cap);
    CHECK(t1.val(c1.summary).data == t2.val(c2.summary).data);

    Tape<float> t3;
    auto c3 = compress_text(t3, m, v.tokenize("a blue circle"));
    CHECK(t1.val(c1.summary).data != t3.val(c3.summary).data);

    Tape<float> t4;
    CHECK_THROWS_AS(compress_text(t4, m, std::vector<int>{999}), vocab_error);
    Tape<float> t5;
    CHECK_THROWS_AS(compress_text(t5, m, std::vector<int>{}), contract_error);
}

TEST_CASE("last_token_embedding equals the final hidden row") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 11);
    auto rng = seeded_rng(12);
    Tensor<float> rows = random_tensor<float>({1, cfg.d_model}, rng, 0.5);

    Tape<float> t;
    auto emb = last_token_embedding(t, m, t.constant(rows), Stage::generation);
    CHECK(t.val(emb).rows() == 1);

    Tensor<float> rows5 = random_tensor<float>({5, cfg.d_model}, rng, 0.5);
    Tape<float> t2;
    auto pass = forward_rows(t2, m, t2.constant(rows5), Stage::generation, AttnMode::causal);
    Tape<float> t3;
    auto emb5 = last_token_embedding(t3, m, t3.constant(rows5), Stage::generation);
    CHECK(row_of(t3.val(emb5), 0) == row_of(t2.val(pass.hidden), 4));
}

TEST_CASE("overlong sequences raise a capacity error") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 13);
    Tape<float> t;
    auto rows = t.constant(Tensor<float>({cfg.max_seq_len + 1, cfg.d_model}));
    CHECK_THROWS_WITH_AS(forward_rows(t, m, rows, Stage::generation, AttnMode::causal),
                         doctest::Contains("capacity error"), contract_error);
}

TEST_CASE("shape discipline across the config matrix") {
    for (int k_summary : {2, 4, 8, 16}) {
        ModelConfig cfg;
        cfg.d_model = 32;
        cfg.n_layers = 2;
        cfg.n_heads = 4;
        cfg.ffn_width = 64;
        cfg.k_vision = 36;
        cfg.k_summary = k_summary;
        cfg.max_seq_len = 96;
        ModelState<float> m = init_model<float>(cfg, micro_options(), 14);
        Scene s;
        s.rows = 6;
        s.cols = 6;
        s.cells.assign(36, 0);
        s.cells[0] = 1;
        Tape<float> t;
        auto c = compress_scene(t, m, s);
        CHECK(t.val(c.summary).rows() == k_summary);
        CHECK(t.val(c.summary).cols() == 32);
        CHECK(t.val(c.pass.logits).rows() == 36 + Vocabulary::kPromptLen + k_summary);
        CHECK(t.val(c.pass.logits).cols() == cfg.vocab_size);
    }
}

TEST_CASE("config validation") {
    ModelConfig cfg = micro_config();
    cfg.n_heads = 3;  // does not divide d_model=4
    CHECK_THROWS_AS(cfg.validate(), usage_error);
    cfg = micro_config();
    cfg.k_summary = cfg.k_vision + 1;
    CHECK_THROWS_AS(cfg.validate(), usage_error);
    cfg = micro_config();
    cfg.max_seq_len = 8;
    CHECK_THROWS_AS(cfg.validate(), usage_error);
    cfg = micro_config();
    cfg.vocab_size = 10;
    CHECK_THROWS_AS(cfg.validate(), usage_error);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 15);
    std::string bytes = serialize_model(m);
    ModelState<float> back = deserialize_model<float>(bytes);
    CHECK(serialize_model(back) == bytes);

    // behavior preserved
    auto rng = seeded_rng(16);
    Tensor<float> rows = random_tensor<float>({4, cfg.d_model}, rng, 0.5);
    Tape<float> t1, t2;
    auto p1 = forward_rows(t1, m, t1.constant(rows), Stage::compression, AttnMode::causal);
    auto p2 = forward_rows(t2, back, t2.constant(rows), Stage::compression, AttnMode::causal);
    CHECK(t1.val(p1.logits).data == t2.val(p2.logits).data);

    // file round trip
    std::string path = (std::filesystem::temp_directory_path() / "f2b_ckpt_test.bin").string();
    save_checkpoint(path, m);
    ModelState<float> loaded = load_checkpoint<float>(path);
    CHECK(serialize_model(loaded) == bytes);
    std::filesystem::remove(path);

    // float64 load of a float32 checkpoint is refused
    CHECK_THROWS_AS(deserialize_model<double>(bytes), io_error);
    // truncation detected
    CHECK_THROWS_AS(deserialize_model<float>(bytes.substr(0, bytes.size() - 3)), io_error);
    // bad magic detected
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(deserialize_model<float>(corrupt), io_error);
}

TEST_CASE("adapter and pipeline options survive the checkpoint") {
    ModelConfig cfg = micro_config();
    ModelOptions opts = micro_options();
    opts.adapter_mode = AdapterMode::single;
    opts.lora_alpha = 0.5;
    opts.pipeline = Pipeline::single_forward;
    ModelState<float> m = init_model<float>(cfg, opts, 17);
    ModelState<float> back = deserialize_model<float>(serialize_model(m));
    CHECK(back.opts.adapter_mode == AdapterMode::single);
    CHECK(back.opts.lora_alpha == 0.5);
    CHECK(back.opts.pipeline == Pipeline::single_forward);
    CHECK(back.opts.lora_rank == opts.lora_rank);
    REQUIRE(back.input_compressor != nullptr);
    CHECK(back.input_compressor->value.data == m.input_compressor->value.data);
}
