// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "f2b/probes.hpp"
#include "test_util.hpp"

using namespace f2b;
using test::micro_config;
using test::micro_options;
using test::micro_scene;

namespace {

std::vector<TrainSample> micro_eval_set(int n, uint64_t seed) {
    DataConfig dc = test::small_data_config(2, 2);
    dc.qa_only_rate = 0.0;
    dc.caption_only_rate = 0.0;
    return build_corpus(seed, 0, n, dc).heldout;
}

}  // namespace

TEST_CASE("flops estimates reproduce the cost-model relationships exactly") {
    CostModel cost = full_scale_cost_model();
    CHECK(cost.v_tokens == 576);

    FlopsBreakdown baseline = flops_estimate(cost, FlopsMode::baseline);
    FlopsBreakdown offline = flops_estimate(cost, FlopsMode::offline_compress);
    FlopsBreakdown online = flops_estimate(cost, FlopsMode::online_query);
    FlopsBreakdown qdep = flops_estimate(cost, FlopsMode::query_dependent_online);

    // query-dependent minus ours-online is exactly c * N_LLM * Q
    CHECK(qdep.total - online.total == cost.flops_c * cost.n_llm * cost.q_tokens);
    // online/baseline LLM ratio for (V=576, K=16, Q=32, G=64) is exactly 1/6
    CHECK(online.llm_term * 6 == baseline.llm_term * 1);
    // offline pass has no query/generation terms
    CHECK(offline.llm_term == cost.flops_c * cost.n_llm * (cost.v_tokens + cost.k_summary));
    CHECK(offline.vision_term == baseline.vision_term);
    CHECK(online.vision_term == 0);

    // linearity in each parameter count and token count
    CostModel doubled = cost;
    doubled.n_llm *= 2;
    CHECK(flops_estimate(doubled, FlopsMode::online_query).llm_term == 2 * online.llm_term);
    CostModel more_q = cost;
    more_q.q_tokens *= 3;
    CHECK(flops_estimate(more_q, FlopsMode::online_query).llm_term - online.llm_term ==
          cost.flops_c * cost.n_llm * 2 * cost.q_tokens);

    CostModel bad = cost;
    bad.k_summary = bad.v_tokens + 1;
    CHECK_THROWS_AS(flops_estimate(bad, FlopsMode::baseline), usage_error);
}

TEST_CASE("storage bytes: 2Kd for half precision") {
    CHECK(storage_bytes(32, 64, StoreDtype::half) == 4096);
    CHECK(storage_bytes(0, 64, StoreDtype::half) == 0);
    CHECK(storage_bytes(32, 64, StoreDtype::float32) == 2 * storage_bytes(32, 64, StoreDtype::half));
}

TEST_CASE("attention maps have probe shapes and nonnegative weights") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 1);
    auto maps = attention_map_compression(m, micro_scene());
    REQUIRE(maps.size() == static_cast<size_t>(cfg.n_layers));
    for (const auto& map : maps) {
        CHECK(map.rows() == cfg.k_summary);
        CHECK(map.cols() == cfg.k_vision);
        for (float v : map.data) CHECK(v >= 0.0f);
    }
    auto eval = micro_eval_set(2, 2);
    auto gen_maps = attention_map_generation(m, eval[0].scene, eval[0].qa->question);
    REQUIRE(gen_maps.size() == static_cast<size_t>(cfg.n_layers));
    CHECK(gen_maps[0].cols() == cfg.k_summary);
    CHECK(gen_maps[0].rows() >= 1);

    double cov = attention_coverage(maps);
    CHECK(cov >= 0.0);
    CHECK(cov <= 1.0);
}

TEST_CASE("mask importance: empty mask equals standard eval, groups cover k'") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 3);
    auto eval = micro_eval_set(12, 4);
    double standard = qa_accuracy(m, eval);
    CHECK(qa_accuracy_masked(m, eval, -1, 0, 0) == standard);  // empty mask, exact equality

    ImportanceReport rep = mask_importance(m, eval, 1);
    CHECK(rep.group_size == 1);
    CHECK(rep.baseline_accuracy == standard);
    REQUIRE(rep.groups.size() == static_cast<size_t>(cfg.k_summary));
    for (const auto& g : rep.groups) CHECK(g.drop == doctest::Approx(rep.baseline_accuracy - g.accuracy));

    // group size that does not divide k' gets a shorter last group
    ImportanceReport rep3 = mask_importance(m, eval, 3);  // k' = 2 -> single group [0,2)
    REQUIRE(rep3.groups.size() == 1);
    CHECK(rep3.groups[0].end == cfg.k_summary);
}

TEST_CASE("prefix truncation: m = k' equals the standard evaluation") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 5);
    auto eval = micro_eval_set(12, 6);
    CHECK(qa_accuracy_prefix(m, eval, cfg.k_summary) == qa_accuracy(m, eval));
    CHECK_THROWS_AS(qa_accuracy_prefix(m, eval, cfg.k_summary + 1), contract_error);
    PrefixSweep sweep = prefix_truncation_eval(m, eval, {1, 2});
    CHECK(sweep.m_values == std::vector<int>{1, 2});
    CHECK(sweep.accuracies.size() == 2);
}

TEST_CASE("adapter delta norms are all zero before training") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 7);
    auto rows = adapter_delta_norms(m);
    REQUIRE(rows.size() == static_cast<size_t>(2 * cfg.n_layers * 6));
    for (const auto& r : rows) CHECK(r.frobenius == 0.0);

    // perturbing one stage shows in that stage only
    m.lora_compression[0].wq.B->value.at(0, 0) = 1.0f;
    rows = adapter_delta_norms(m);
    double comp = 0, gen = 0;
    for (const auto& r : rows) (r.stage == "compression" ? comp : gen) += r.frobenius;
    CHECK(comp > 0);
    CHECK(gen == 0);
}

TEST_CASE("probe outputs are pure functions of their inputs") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 8);
    auto eval = micro_eval_set(6, 9);
    CHECK(attention_csv(attention_map_compression(m, eval[0].scene)) ==
          attention_csv(attention_map_compression(m, eval[0].scene)));
    CHECK(importance_csv(mask_importance(m, eval, 1)) == importance_csv(mask_importance(m, eval, 1)));
    CHECK(adapter_norms_csv(adapter_delta_norms(m)) == adapter_norms_csv(adapter_delta_norms(m)));
    CHECK(flops_csv(full_scale_cost_model()) == flops_csv(full_scale_cost_model()));
}

TEST_CASE("gnuplot conversion comments the header and strips commas") {
    std::string csv = "a,b\n1,2\n";
    CHECK(csv_to_gnuplot(csv) == "# a b\n1 2\n");
}

TEST_CASE("toy cost model pulls counts from the model") {
    ModelConfig cfg = micro_config();
    ModelState<float> m = init_model<float>(cfg, micro_options(), 10);
    CostModel c = toy_cost_model(m);
    CHECK(c.n_vision == static_cast<uint64_t>(kCellFeatureDim * cfg.d_model));
    CHECK(c.v_tokens == static_cast<uint64_t>(cfg.k_vision));
    CHECK(c.k_summary == static_cast<uint64_t>(cfg.k_summary));
    CHECK(c.n_llm > 0);
    FlopsBreakdown b = flops_estimate(c, FlopsMode::online_query);
    CHECK(b.total == c.flops_c * c.n_llm * (c.k_summary + c.q_tokens + c.g_tokens));
}
