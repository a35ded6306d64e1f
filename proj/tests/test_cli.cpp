// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "f2b/runconfig.hpp"
#include "f2b/store.hpp"

using namespace f2b;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const fs::path& work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "f2b_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    fs::path out = work_dir() / ("out" + std::to_string(counter));
    fs::path err = work_dir() / ("err" + std::to_string(counter));
    ++counter;
    std::string cmd = env + " " + std::string(FWD2BOT_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// tiny-but-real configuration used by every CLI test
void write_tiny_config(const fs::path& p) {
    std::ofstream cfg(p);
    cfg << "model.d_model = 32\n"
        << "model.n_layers = 2\n"
        << "model.n_heads = 4\n"
        << "model.ffn_width = 64\n"
        << "model.k_vision = 16\n"
        << "model.k_summary = 4\n"
        << "model.max_seq_len = 48\n"
        << "data.rows = 4\n"
        << "data.cols = 4\n"
        << "train.steps = 30\n"
        << "train.warmup_steps = 5\n"
        << "train.contrastive_batch = 8\n"
        << "train.eval_every = 0\n"
        << "train.eval_qa = 16\n"
        << "train.eval_retrieval = 8\n"
        << "probe.eval_limit = 8\n"
        << "probe.prefix_values = 1,2,4\n";
}

struct Artifacts {
    fs::path cfg, train, eval, ckpt, store;
};

const Artifacts& artifacts() {
    static Artifacts a = [] {
        Artifacts art;
        const fs::path& d = work_dir();
        art.cfg = d / "tiny.cfg";
        art.train = d / "train.txt";
        art.eval = d / "eval.txt";
        art.ckpt = d / "model.ckpt";
        art.store = d / "store.f2b";
        write_tiny_config(art.cfg);
        RunResult ds = run("dataset --config " + art.cfg.string() + " --seed 3 --count 64 --holdout 16 --out " +
                           art.train.string() + " --holdout-out " + art.eval.string());
        REQUIRE(ds.exit_code == 0);
        RunResult tr = run("train --config " + art.cfg.string() + " --dataset " + art.train.string() + " --heldout " +
                           art.eval.string() + " --out " + art.ckpt.string());
        REQUIRE(tr.exit_code == 0);
        RunResult cp = run("compress --config " + art.cfg.string() + " --ckpt " + art.ckpt.string() + " --dataset " +
                           art.eval.string() + " --out " + art.store.string());
        REQUIRE(cp.exit_code == 0);
        return art;
    }();
    return a;
}

}  // namespace

TEST_CASE("dataset command reports stats and is seed-deterministic") {
    const fs::path& d = work_dir();
    fs::path cfg = d / "ds.cfg";
    write_tiny_config(cfg);
    auto cmd = [&](const std::string& out) {
        return "dataset --config " + cfg.string() + " --seed 7 --count 32 --holdout 8 --out " + out +
               " --holdout-out " + out + ".eval";
    };
    RunResult r1 = run(cmd((d / "d1.txt").string()));
    CHECK(r1.exit_code == 0);
    CHECK(r1.out.find("caption_uniqueness 1") != std::string::npos);
    CHECK(r1.out.find("color_balance") != std::string::npos);
    RunResult r2 = run(cmd((d / "d2.txt").string()));
    CHECK(slurp(d / "d1.txt") == slurp(d / "d2.txt"));
    CHECK(slurp(d / "d1.txt.eval") == slurp(d / "d2.txt.eval"));
    CHECK(!slurp(d / "d1.txt").empty());
}

TEST_CASE("train writes a checkpoint and a metrics CSV") {
    const Artifacts& a = artifacts();
    CHECK(fs::exists(a.ckpt));
    std::string metrics = slurp(a.ckpt.string() + ".metrics.csv");
    CHECK(metrics.rfind("step,L_AR,L_disc,qa_acc,r_at_1\n", 0) == 0);
    CHECK(metrics.find("\n30,") != std::string::npos);  // final-step row
}

TEST_CASE("compress then generate answers from stored tokens") {
    const Artifacts& a = artifacts();
    StoreReader store(a.store.string());
    CHECK(store.header().count == 16);

    RunResult gen = run("generate --ckpt " + a.ckpt.string() + " --store " + a.store.string() +
                        " --image-id img_00000 --question \"is there a circle\"");
    CHECK(gen.exit_code == 0);

    RunResult missing = run("generate --ckpt " + a.ckpt.string() + " --store " + a.store.string() +
                            " --image-id img_99999 --question \"is there a circle\"");
    CHECK(missing.exit_code == 3);
    CHECK(missing.err.find("lookup error") != std::string::npos);
}

TEST_CASE("retrieve emits the ranked CSV") {
    const Artifacts& a = artifacts();
    RunResult r = run("retrieve --ckpt " + a.ckpt.string() + " --store " + a.store.string() +
                      " --caption \"a red circle\" --topk 3 --query-id q0");
    CHECK(r.exit_code == 0);
    CHECK(r.out.rfind("query_id,rank,image_id,score\n", 0) == 0);
    CHECK(r.out.find("q0,1,img_") != std::string::npos);
    CHECK(r.out.find("q0,3,img_") != std::string::npos);
}

TEST_CASE("probe flops full-scale preset prints the V=576 baseline row") {
    const fs::path& d = work_dir();
    fs::path cfg = d / "fs.cfg";
    std::ofstream(cfg) << "probe.flops_preset = full_scale\n";
    RunResult r = run("probe --config " + cfg.string() + " --which flops");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("baseline,576,") != std::string::npos);
    CHECK(r.out.find("online_query") != std::string::npos);

    RunResult s = run("probe --config " + cfg.string() + " --which storage");
    CHECK(s.exit_code == 0);
    CHECK(s.out.find("16,4096,half,131072\n") != std::string::npos);  // 2Kd with K=16, d=4096
}

TEST_CASE("eval probes run against the trained checkpoint") {
    const Artifacts& a = artifacts();
    std::string base = " --config " + a.cfg.string() + " --ckpt " + a.ckpt.string() + " --dataset " + a.eval.string();
    for (const std::string which : {"mask", "prefix", "norms", "attention"}) {
        RunResult r = run("probe" + base + " --which " + which);
        CHECK(r.exit_code == 0);
        CHECK(!r.out.empty());
        RunResult again = run("probe" + base + " --which " + which);
        CHECK(again.out == r.out);  // probes are pure
    }
    // gnuplot companion
    fs::path plot = work_dir() / "norms.dat";
    RunResult r = run("probe" + base + " --which norms --plot-out " + plot.string());
    CHECK(r.exit_code == 0);
    CHECK(slurp(plot).rfind("# stage layer target frobenius\n", 0) == 0);
}

TEST_CASE("help enumerates every config key and its default") {
    RunResult r = run("--help");
    CHECK(r.exit_code == 0);
    for (const auto& doc : RunConfig::key_docs()) {
        CHECK(r.out.find(doc.key) != std::string::npos);
        CHECK(r.out.find(std::string(doc.key) + " = " + doc.def) != std::string::npos);
    }
}

TEST_CASE("exit codes: usage, data, io") {
    CHECK(run("").exit_code == 2);                       // missing subcommand
    CHECK(run("train --nope x").exit_code == 2);         // unknown flag
    const Artifacts& a = artifacts();
    CHECK(run("generate --ckpt /nonexistent.ckpt --store " + a.store.string() +
              " --image-id i --question q").exit_code == 5);
    RunResult oov = run("generate --ckpt " + a.ckpt.string() + " --store " + a.store.string() +
                        " --image-id img_00000 --question \"qqq zzz\"");
    CHECK(oov.exit_code == 3);  // out-of-vocabulary question

    // store built under a different (k', d) is rejected as a config mismatch
    const fs::path& d = work_dir();
    fs::path cfg2 = d / "other.cfg";
    std::ofstream(cfg2) << "model.d_model = 16\nmodel.n_heads = 2\nmodel.k_vision = 16\nmodel.k_summary = 2\n"
                        << "model.max_seq_len = 48\ndata.rows = 4\ndata.cols = 4\ntrain.steps = 2\n"
                        << "train.contrastive_batch = 8\ntrain.eval_every = 0\ntrain.eval_qa = 4\n"
                        << "train.eval_retrieval = 4\n";
    fs::path ckpt2 = d / "other.ckpt";
    RunResult tr = run("train --config " + cfg2.string() + " --dataset " + a.train.string() + " --heldout " +
                       a.eval.string() + " --out " + ckpt2.string());
    REQUIRE(tr.exit_code == 0);
    RunResult mm = run("generate --ckpt " + ckpt2.string() + " --store " + a.store.string() +
                       " --image-id img_00000 --question \"is there a circle\"");
    CHECK(mm.exit_code == 3);
    CHECK(mm.err.find("config mismatch") != std::string::npos);
}

TEST_CASE("FWD2BOT_SEED overrides the config seed") {
    const fs::path& d = work_dir();
    fs::path cfg = d / "seed.cfg";
    write_tiny_config(cfg);
    auto dataset_cmd = [&](const std::string& out) {
        return "dataset --config " + cfg.string() + " --seed 3 --count 16 --holdout 0 --out " + out;
    };
    run(dataset_cmd((d / "s_base.txt").string()));
    run(dataset_cmd((d / "s_env.txt").string()), "FWD2BOT_SEED=99");
    run("dataset --config " + cfg.string() + " --seed 99 --count 16 --holdout 0 --out " + (d / "s_99.txt").string());
    CHECK(slurp(d / "s_env.txt") == slurp(d / "s_99.txt"));
    CHECK(slurp(d / "s_env.txt") != slurp(d / "s_base.txt"));
}
