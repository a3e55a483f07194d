#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "emhrnn/grad_check.hpp"
#include "emhrnn/graph.hpp"
#include "emhrnn/layers.hpp"
#include "emhrnn/rng.hpp"

using namespace emhrnn;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor t(s);
    for (double& x : t.v) x = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("affine identity and zero-weight cases") {
    Graph g;
    Tensor eye(Shape::mat(2, 2), {1.0, 0.0, 0.0, 1.0});
    Var y = g.affine(g.constant(eye), g.constant(Tensor::vec({3.0, -1.0})),
                     g.constant(Tensor::vec({0.0, 0.0})));
    CHECK(g.value(y)[0] == doctest::Approx(3.0));
    CHECK(g.value(y)[1] == doctest::Approx(-1.0));

    Tensor zeros(Shape::mat(2, 2));
    Var z = g.affine(g.constant(zeros), g.constant(Tensor::vec({7.0, 9.0})),
                     g.constant(Tensor::vec({1.0, 2.0})));
    CHECK(g.value(z)[0] == doctest::Approx(1.0));
    CHECK(g.value(z)[1] == doctest::Approx(2.0));
}

TEST_CASE("affine matches scalar loop oracle") {
    Rng rng(11);
    Tensor W = random_tensor(Shape::mat(3, 4), rng);
    Tensor x = random_tensor(Shape::vec(4), rng);
    Tensor b = random_tensor(Shape::vec(3), rng);
    Graph g;
    Var y = g.affine(g.constant(W), g.constant(x), g.constant(b));
    for (std::size_t r = 0; r < 3; ++r) {
        double expect = b[r];
        for (std::size_t c = 0; c < 4; ++c) expect += W.at(r, c) * x[c];
        CHECK(std::abs(g.value(y)[r] - expect) < 1e-12);
    }
}

TEST_CASE("affine rejects dimension mismatch naming both shapes") {
    Graph g;
    Var W = g.constant(Tensor(Shape::mat(2, 3)));
    Var x = g.constant(Tensor(Shape::vec(4)));
    Var b = g.constant(Tensor(Shape::vec(2)));
    CHECK_THROWS_WITH_AS(g.affine(W, x, b),
                         doctest::Contains("{2x3}"), std::invalid_argument);
    try {
        g.affine(W, x, b);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("{4}") != std::string::npos);
    }
}

TEST_CASE("elementwise ops") {
    Graph g;
    Var s = g.sigmoid(g.constant(Tensor::vec({0.0})));
    CHECK(g.scalar(s) == doctest::Approx(0.5));
    Var t = g.tanh(g.constant(Tensor::vec({0.0})));
    CHECK(g.scalar(t) == doctest::Approx(0.0));
    Var h = g.hadamard(g.constant(Tensor::vec({2.0, 3.0})),
                       g.constant(Tensor::vec({4.0, 5.0})));
    CHECK(g.value(h)[0] == doctest::Approx(8.0));
    CHECK(g.value(h)[1] == doctest::Approx(15.0));
    CHECK_THROWS_AS(g.hadamard(g.constant(Tensor::vec({1.0})),
                               g.constant(Tensor::vec({1.0, 2.0}))),
                    std::invalid_argument);
}

TEST_CASE("softmax basics") {
    Graph g;
    Var y = g.softmax(g.constant(Tensor::vec({0.0, 0.0})));
    CHECK(g.value(y)[0] == doctest::Approx(0.5));

    // max-subtraction prevents overflow
    Var big = g.softmax(g.constant(Tensor::vec({1000.0, 1000.0, 1000.0})));
    for (double v : g.value(big)) {
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(1.0 / 3.0));
    }
}

TEST_CASE("softmax matches naive oracle and is a shift-invariant probability vector") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor(Shape::vec(5), rng);
        Graph g;
        auto y = g.value_copy(g.softmax(g.constant(x)));

        // naive exp/sum at small magnitudes
        double total = 0.0;
        std::vector<double> naive(5);
        for (int k = 0; k < 5; ++k) total += (naive[k] = std::exp(x[k]));
        double sum = 0.0;
        for (int k = 0; k < 5; ++k) {
            CHECK(std::abs(y[k] - naive[k] / total) < 1e-12);
            CHECK(y[k] >= 0.0);
            sum += y[k];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);

        // invariance to adding a constant
        Tensor shifted = x;
        for (double& v : shifted.v) v += 123.456;
        auto y2 = g.value_copy(g.softmax(g.constant(shifted)));
        for (int k = 0; k < 5; ++k) CHECK(std::abs(y[k] - y2[k]) < 1e-12);
    }
}

TEST_CASE("softmax rejects empty input") {
    Graph g;
    CHECK_THROWS_AS(g.softmax(g.constant(Tensor(Shape::vec(0)))), std::invalid_argument);
}

TEST_CASE("backward: d(sum x*x)/dx = 2x") {
    Graph g;
    Param x(Shape::vec(2));
    x.value.v = {1.0, 2.0};
    Var loss = g.sum(g.hadamard(g.param(x), g.param(x)));
    g.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(2.0));
    CHECK(x.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("backward: sigmoid'(0) = 0.25") {
    Graph g;
    Param w(Shape::vec(1));
    Var loss = g.sum(g.sigmoid(g.param(w)));
    g.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(0.25));
}

TEST_CASE("backward accumulates across repeated calls") {
    Graph g;
    Param x(Shape::vec(1));
    x.value.v = {3.0};
    Var loss = g.sum(g.hadamard(g.param(x), g.param(x)));
    g.backward(loss);
    g.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(12.0));  // 2 * (2x)
}

TEST_CASE("backward rejects losses from another graph or generation") {
    Graph g;
    Param x(Shape::vec(1));
    Var loss = g.sum(g.param(x));
    g.clear();
    CHECK_THROWS_AS(g.backward(loss), std::invalid_argument);

    Graph g2;
    Var loss2 = g2.sum(g2.param(x));
    CHECK_THROWS_AS(g.backward(loss2), std::invalid_argument);
}

TEST_CASE("graph replay determinism: bit-identical gradients") {
    Rng rng(31);
    Param W(Shape::mat(4, 4));
    Param b(Shape::vec(4));
    W.value = random_tensor(Shape::mat(4, 4), rng);
    b.value = random_tensor(Shape::vec(4), rng);
    Tensor x = random_tensor(Shape::vec(4), rng);

    auto run = [&]() {
        W.zero_grad();
        b.zero_grad();
        Graph g;
        Var y = g.tanh(g.affine(g.param(W), g.constant(x), g.param(b)));
        g.backward(g.sum(g.hadamard(y, y)));
        std::vector<double> out = W.grad.v;
        out.insert(out.end(), b.grad.v.begin(), b.grad.v.end());
        return out;
    };
    auto a = run();
    auto bgrads = run();
    CHECK(a == bgrads);  // exact equality
}

TEST_CASE("finite differences: quadratic and constant") {
    Param x(Shape::vec(1));
    x.value.v = {3.0};
    std::vector<std::pair<std::string, Param*>> params{{"x", &x}};

    auto build = [&](Graph& g) { return g.sum(g.hadamard(g.param(x), g.param(x))); };
    auto report = finite_difference_check(build, params, 1e-4);
    REQUIRE(report.entries.size() == 1);
    CHECK(report.pass(1e-7, 1e-7));
    CHECK(x.grad[0] == doctest::Approx(6.0));

    auto build_const = [&](Graph& g) {
        (void)g.param(x);
        return g.scalar_const(5.0);
    };
    auto report2 = finite_difference_check(build_const, params, 1e-4);
    CHECK(report2.entries[0].max_rel_err == 0.0);
    CHECK(report2.entries[0].max_abs_err == 0.0);
}

TEST_CASE("finite differences: attention pool over random states") {
    Rng rng(77);
    AttentionParams attn(6, 4);
    attn.init(rng);
    std::vector<Tensor> states;
    for (int t = 0; t < 3; ++t) states.push_back(random_tensor(Shape::vec(6), rng));

    auto build = [&](Graph& g) {
        std::vector<Var> sv;
        for (const auto& s : states) sv.push_back(g.constant(s));
        auto res = attention_pool(g, attn, sv);
        return g.sum(g.hadamard(res.pooled, res.pooled));
    };
    auto params = attn.named("attn");
    auto report = finite_difference_check(build, params, 1e-4);
    CHECK(report.pass(1e-3, 1e-6));
}

TEST_CASE("pick_nll clamps and counts zero probabilities") {
    Graph g;
    Var p = g.constant(Tensor::vec({0.0, 1.0}));
    Var loss = g.pick_nll(p, 0);
    CHECK(g.scalar(loss) > 600.0);  // -log(1e-300)
    CHECK(g.clamp_events() == 1);
    CHECK_THROWS_AS(g.pick_nll(p, 7), std::out_of_range);
}

TEST_CASE("affine2 equals affine composition") {
    Rng rng(13);
    Tensor W = random_tensor(Shape::mat(3, 3), rng);
    Tensor U = random_tensor(Shape::mat(3, 2), rng);
    Tensor h = random_tensor(Shape::vec(3), rng);
    Tensor x = random_tensor(Shape::vec(2), rng);
    Tensor b = random_tensor(Shape::vec(3), rng);
    Graph g;
    Var fused = g.affine2(g.constant(W), g.constant(h), g.constant(U), g.constant(x),
                          g.constant(b));
    Var split = g.add(g.affine(g.constant(W), g.constant(h), g.constant(b)),
                      g.affine(g.constant(U), g.constant(x),
                               g.zeros(Shape::vec(3))));
    for (int k = 0; k < 3; ++k)
        CHECK(g.value(fused)[k] == doctest::Approx(g.value(split)[k]).epsilon(1e-14));
}

TEST_CASE("composite gradient matches finite differences") {
    Rng rng(99);
    Param W(Shape::mat(3, 5));
    Param b(Shape::vec(3));
    W.value = random_tensor(Shape::mat(3, 5), rng, 0.5);
    b.value = random_tensor(Shape::vec(3), rng, 0.5);
    Tensor x = random_tensor(Shape::vec(5), rng);

    auto build = [&](Graph& g) {
        Var y = g.softmax(g.affine(g.param(W), g.constant(x), g.param(b)));
        return g.pick_nll(y, 1);
    };
    std::vector<std::pair<std::string, Param*>> params{{"W", &W}, {"b", &b}};
    auto report = finite_difference_check(build, params, 1e-4);
    CHECK(report.pass(1e-3, 1e-6));
}
