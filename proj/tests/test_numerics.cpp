// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "f2b/grad_check.hpp"
#include "f2b/tape.hpp"
#include "test_util.hpp"

using namespace f2b;
using test::random_tensor;
using test::scalarize;

TEST_CASE("matmul hand values") {
    Tape<double> t;
    auto I = t.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    auto A = t.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto IA = t.matmul(I, A);
    CHECK(t.val(IA).data == std::vector<double>{1, 2, 3, 4});

    auto x = t.constant(Tensor<double>({1, 1}, {2}));
    auto y = t.constant(Tensor<double>({1, 1}, {3}));
    CHECK(t.scalar(t.matmul(x, y)) == 6.0);

    auto B = t.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
    auto AB = t.matmul(A, B);
    CHECK(t.val(AB).data == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul shape and finiteness errors") {
    Tape<float> t;
    auto a = t.constant(Tensor<float>({2, 3}));
    auto b = t.constant(Tensor<float>({2, 3}));
    CHECK_THROWS_AS(t.matmul(a, b), dim_error);
    Tensor<float> bad({1, 2}, {1.0f, std::numeric_limits<float>::infinity()});
    auto c = t.constant(std::move(bad));
    auto d = t.constant(Tensor<float>({2, 1}, {1.0f, 1.0f}));
    CHECK_THROWS_AS(t.matmul(c, d), numeric_error);
}

TEST_CASE("softmax hand values and stabilization") {
    Tape<double> t;
    auto s1 = t.softmax(t.constant(Tensor<double>({2}, {0, 0})), 0);
    CHECK(t.val(s1).data[0] == doctest::Approx(0.5).epsilon(1e-12));

    auto s2 = t.softmax(t.constant(Tensor<double>({2}, {std::log(2.0), 0})), 0);
    CHECK(t.val(s2).data[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(t.val(s2).data[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto s3 = t.softmax(t.constant(Tensor<double>({2}, {1000, 0})), 0);
    CHECK(std::isfinite(t.val(s3).data[0]));
    CHECK(t.val(s3).data[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(t.val(s3).data[1] == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(t.softmax(t.constant(Tensor<double>({0})), 0), dim_error);
}

TEST_CASE("softmax rows sum to one for arbitrary finite input") {
    std::mt19937_64 rng = seeded_rng(3);
    Tape<float> t;
    auto x = t.constant(random_tensor<float>({7, 13}, rng, 5.0));
    auto s = t.softmax(x, 1);
    for (int r = 0; r < 7; ++r) {
        double sum = 0;
        for (int c = 0; c < 13; ++c) sum += t.val(s).at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // axis 0 as well
    auto s0 = t.softmax(x, 0);
    for (int c = 0; c < 13; ++c) {
        double sum = 0;
        for (int r = 0; r < 7; ++r) sum += t.val(s0).at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("cross entropy hand values") {
    Tape<double> t;
    Tensor<double> uniform({1, 8});
    auto ce = t.cross_entropy(t.constant(uniform), {3}, {0});
    CHECK(t.scalar(ce) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

    Tensor<double> dominant({1, 8});
    dominant.data[5] = 20.0;
    auto ce2 = t.cross_entropy(t.constant(dominant), {5}, {0});
    CHECK(t.scalar(ce2) < 1e-6);

    auto ce3 = t.cross_entropy(t.constant(Tensor<double>({1, 2}, {1, 0})), {0}, {0});
    CHECK(t.scalar(ce3) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

    CHECK_THROWS_AS(t.cross_entropy(t.constant(Tensor<double>({1, 2})), {2}, {0}), contract_error);
}

TEST_CASE("cosine similarity hand values") {
    Tape<double> t;
    auto u = t.constant(Tensor<double>({2}, {1, 0}));
    auto v = t.constant(Tensor<double>({2}, {0, 1}));
    auto w = t.constant(Tensor<double>({2}, {1, 1}));
    CHECK(t.scalar(t.cosine(u, u)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.scalar(t.cosine(u, v)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.scalar(t.cosine(u, w)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    auto z = t.constant(Tensor<double>({2}, {0, 0}));
    CHECK_THROWS_AS(t.cosine(u, z), numeric_error);
}

TEST_CASE("backward quadratic and matmul rules") {
    // loss = x^2 via matmul(x, x): both operand roles accumulate, grad = 2x
    Param<double> x("x", Tensor<double>({1, 1}, {3.0}));
    Tape<double> t;
    auto loss = t.matmul(t.param(x), t.param(x));
    t.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of sum(A*B) matches transposed-counterpart products") {
    std::mt19937_64 rng = seeded_rng(5);
    Param<double> A("A", random_tensor<double>({3, 4}, rng));
    Param<double> B("B", random_tensor<double>({4, 2}, rng));
    Tape<double> t;
    auto C = t.matmul(t.param(A), t.param(B));
    // sum of entries via all-ones contraction
    auto ones_l = t.constant(Tensor<double>({1, 3}, {1, 1, 1}));
    auto ones_r = t.constant(Tensor<double>({2, 1}, {1, 1}));
    t.backward(t.matmul(t.matmul(ones_l, C), ones_r));
    // dA = ones * B^T, dB = A^T * ones
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double expected = 0;
            for (int c = 0; c < 2; ++c) expected += B.value.at(j, c);
            CHECK(A.grad[static_cast<size_t>(i) * 4 + j] == doctest::Approx(expected).epsilon(1e-12));
        }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double expected = 0;
            for (int r = 0; r < 3; ++r) expected += A.value.at(r, i);
            CHECK(B.grad[static_cast<size_t>(i) * 2 + j] == doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("disconnected parameter keeps zero gradient") {
    std::mt19937_64 rng = seeded_rng(6);
    Param<double> used("used", random_tensor<double>({2, 2}, rng));
    Param<double> unused("unused", random_tensor<double>({2, 2}, rng));
    Tape<double> t;
    t.param(unused);
    auto loss = scalarize(t, t.param(used));
    t.backward(loss);
    bool any = false;
    for (double g : used.grad) any = any || g != 0.0;
    CHECK(any);
    for (double g : unused.grad) CHECK(g == 0.0);
}

TEST_CASE("backward requires scalar root and runs once") {
    Tape<double> t;
    auto m = t.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(t.backward(m), contract_error);
}

TEST_CASE("grad_check: every primitive in float64") {
    std::mt19937_64 rng = seeded_rng(11);

    SUBCASE("matmul") {
        Param<double> A("A", random_tensor<double>({3, 5}, rng));
        Param<double> B("B", random_tensor<double>({5, 4}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.matmul(t.param(A), t.param(B)));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&A, &B}) < 1e-6);
    }
    SUBCASE("matmul_nt") {
        Param<double> A("A", random_tensor<double>({3, 5}, rng));
        Param<double> B("B", random_tensor<double>({4, 5}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.matmul_nt(t.param(A), t.param(B)));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&A, &B}) < 1e-6);
    }
    SUBCASE("softmax both axes") {
        Param<double> X("X", random_tensor<double>({4, 6}, rng));
        for (int axis : {0, 1}) {
            auto eval = [&](bool grad) {
                Tape<double> t;
                auto loss = scalarize(t, t.softmax(t.param(X), axis));
                if (grad) t.backward(loss);
                return t.scalar(loss);
            };
            CHECK(grad_check(eval, {&X}) < 1e-6);
        }
    }
    SUBCASE("masked softmax rows") {
        Param<double> X("X", random_tensor<double>({4, 4}, rng));
        std::vector<int> visible{1, 2, 3, 4};  // causal pattern
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.masked_softmax_rows(t.param(X), visible));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&X}) < 1e-6);
    }
    SUBCASE("rmsnorm") {
        Param<double> X("X", random_tensor<double>({3, 6}, rng));
        Param<double> g("g", random_tensor<double>({6}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.rmsnorm(t.param(X), t.param(g), 1e-5));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&X, &g}) < 1e-6);
    }
    SUBCASE("gelu") {
        Param<double> X("X", random_tensor<double>({3, 4}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.gelu(t.param(X)));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&X}) < 1e-6);
    }
    SUBCASE("embedding lookup") {
        Param<double> table("tbl", random_tensor<double>({9, 5}, rng));
        std::vector<int> ids{3, 1, 3, 8};  // repeated id exercises scatter-add
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.embed(t.param(table), ids));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&table}) < 1e-6);
    }
    SUBCASE("cross entropy") {
        Param<double> logits("lg", random_tensor<double>({5, 7}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = t.cross_entropy(t.param(logits), {2, 6, 0}, {0, 2, 4});
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&logits}) < 1e-6);
    }
    SUBCASE("cosine similarity") {
        Param<double> u("u", random_tensor<double>({6}, rng));
        Param<double> v("v", random_tensor<double>({6}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = t.cosine(t.param(u), t.param(v));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&u, &v}) < 1e-6);
    }
    SUBCASE("row normalization and pooling") {
        Param<double> X("X", random_tensor<double>({4, 5}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = scalarize(t, t.rows_unit(t.mean_rows(t.param(X))));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&X}) < 1e-6);
    }
    SUBCASE("symmetric contrastive loss") {
        Param<double> S("S", random_tensor<double>({5, 5}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto loss = t.sym_info_nce(t.param(S));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&S}) < 1e-6);
    }
    SUBCASE("slices and concatenation") {
        Param<double> X("X", random_tensor<double>({6, 6}, rng));
        auto eval = [&](bool grad) {
            Tape<double> t;
            auto x = t.param(X);
            auto top = t.rows_slice(x, 0, 3);
            auto bottom = t.rows_slice(x, 3, 6);
            auto left = t.cols_slice(t.rows_concat({bottom, top}), 0, 4);
            auto right = t.cols_slice(t.rows_concat({bottom, top}), 4, 6);
            auto loss = scalarize(t, t.cols_concat({right, left}));
            if (grad) t.backward(loss);
            return t.scalar(loss);
        };
        CHECK(grad_check(eval, {&X}) < 1e-6);
    }
}

TEST_CASE("grad_check quadratic is near-exact") {
    Param<double> x("x", Tensor<double>({1, 1}, {3.0}));
    auto eval = [&](bool grad) {
        Tape<double> t;
        auto loss = t.matmul(t.param(x), t.param(x));
        if (grad) t.backward(loss);
        return t.scalar(loss);
    };
    CHECK(grad_check(eval, {&x}, 1e-5) < 1e-8);
}

TEST_CASE("grad_check random 3-layer MLP in float64") {
    std::mt19937_64 rng = seeded_rng(21);
    Param<double> w1("w1", random_tensor<double>({6, 8}, rng, 0.5));
    Param<double> g1("g1", random_tensor<double>({8}, rng, 0.5));
    Param<double> w2("w2", random_tensor<double>({8, 8}, rng, 0.5));
    Param<double> w3("w3", random_tensor<double>({8, 3}, rng, 0.5));
    Tensor<double> input = random_tensor<double>({4, 6}, rng);
    auto eval = [&](bool grad) {
        Tape<double> t;
        auto h1 = t.gelu(t.matmul(t.constant(input), t.param(w1)));
        auto h2 = t.gelu(t.rmsnorm(t.matmul(h1, t.param(w2)), t.param(g1), 1e-5));
        auto logits = t.matmul(h2, t.param(w3));
        auto loss = t.cross_entropy(logits, {0, 2, 1, 2}, {0, 1, 2, 3});
        if (grad) t.backward(loss);
        return t.scalar(loss);
    };
    CHECK(grad_check(eval, {&w1, &g1, &w2, &w3}) < 1e-6);
}

TEST_CASE("determinism: identical inputs produce bit-identical outputs") {
    std::mt19937_64 rng = seeded_rng(31);
    Tensor<float> a = random_tensor<float>({5, 5}, rng);
    Tensor<float> b = random_tensor<float>({5, 5}, rng);
    auto run = [&]() {
        Tape<float> t;
        auto x = t.softmax(t.matmul(t.constant(a), t.constant(b)), 1);
        return t.val(t.gelu(x)).data;
    };
    CHECK(run() == run());
}
