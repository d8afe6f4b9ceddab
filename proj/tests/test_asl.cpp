#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "forge/asl.hpp"
#include "forge/rng.hpp"

using namespace forge;

TEST_CASE("asl matches the hand-evaluated symmetric case") {
    AslParams params{0.0, 0.0, 0.0};
    double loss = asl_loss({0.5}, {0.5}, params);
    CHECK(loss == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("asl vanishes in the perfect-prediction limit") {
    AslParams params{0.0, 4.0, 0.0};
    double eps = 1e-7;
    double loss = asl_loss({1.0 - eps}, {eps}, params);
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-5);
}

TEST_CASE("gamma-minus focusing shrinks easy negative terms") {
    // reference setting gamma-=4: a 0.1 negative contributes ~1.05e-5
    AslParams paper{0.0, 4.0, 0.0};
    double term = asl_loss({}, {0.1}, paper);
    CHECK(term == Catch::Approx(std::pow(0.1, 4) * -std::log(0.9)).epsilon(1e-12));
    CHECK(term == Catch::Approx(1.05e-5).margin(2e-7));

    // any gamma- > 0 strictly reduces the term for p < 1
    AslParams flat{0.0, 0.0, 0.0};
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        double p = rng.uniform(0.01, 0.95);
        double g = rng.uniform(0.1, 6.0);
        AslParams focused{0.0, g, 0.0};
        CHECK(asl_loss({}, {p}, focused) < asl_loss({}, {p}, flat));
    }
}

TEST_CASE("asl is non-negative and rejects empty input") {
    AslParams params{2.0, 3.0, 0.05};
    Rng rng(17);
    for (int i = 0; i < 300; ++i) {
        std::vector<double> vp(1 + rng.below(4)), vn(rng.below(6));
        for (auto& v : vp) v = rng.unit();
        for (auto& v : vn) v = rng.unit();
        CHECK(asl_loss(vp, vn, params) >= 0.0);
    }
    CHECK_THROWS_AS(asl_loss({}, {}, params), ValidationError);
}

TEST_CASE("margin removes low negatives entirely") {
    AslParams params{0.0, 2.0, 0.2};
    CHECK(asl_loss({}, {0.15}, params) == 0.0);
    CHECK(asl_loss({}, {0.35}, params) > 0.0);
}

TEST_CASE("invalid parameters are rejected") {
    CHECK_THROWS_AS(asl_loss({0.5}, {}, AslParams{-1.0, 0.0, 0.0}), ValidationError);
    CHECK_THROWS_AS(asl_loss({0.5}, {}, AslParams{0.0, 0.0, 1.0}), ValidationError);
}

TEST_CASE("analytic gradient matches central finite differences") {
    Rng rng(2718);
    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        AslParams params;
        params.gamma_plus = rng.uniform(0.0, 4.0);
        params.gamma_minus = rng.uniform(0.0, 5.0);
        params.margin = (trial % 3 == 0) ? rng.uniform(0.0, 0.2) : 0.0;
        std::vector<double> vp(1 + rng.below(3)), vn(1 + rng.below(4));
        // keep away from the clamp boundary and the margin kink where the
        // derivative genuinely jumps
        for (auto& v : vp) v = rng.uniform(0.05, 0.95);
        for (auto& v : vn) v = rng.uniform(params.margin + 0.05, 0.95);

        auto [gp, gn] = asl_loss_backward(vp, vn, params);
        auto probe = [&](std::vector<double>& vec, std::size_t i, double delta) {
            double keep = vec[i];
            vec[i] = keep + delta;
            double val = asl_loss(vp, vn, params);
            vec[i] = keep;
            return val;
        };
        for (std::size_t i = 0; i < vp.size(); ++i) {
            double fd = (probe(vp, i, h) - probe(vp, i, -h)) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(gp[i]), 1e-8});
            CHECK(std::abs(gp[i] - fd) / denom < 1e-4);
            ++checked;
        }
        for (std::size_t i = 0; i < vn.size(); ++i) {
            double fd = (probe(vn, i, h) - probe(vn, i, -h)) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(gn[i]), 1e-8});
            CHECK(std::abs(gn[i] - fd) / denom < 1e-4);
            ++checked;
        }
    }
    CHECK(checked >= 100);
}

TEST_CASE("autograd asl node routes gradients to both inputs") {
    AslParams params{1.0, 2.0, 0.0};
    grad::Graph g;
    grad::Var vp = g.leaf(Tensor::vector({0.6, 0.7}), true);
    grad::Var vn = g.leaf(Tensor::vector({0.2, 0.3, 0.1}), true);
    grad::Var loss = grad::asl(vp, vn, params);
    g.backward(loss);

    auto [gp, gn] = asl_loss_backward(vp.val().data, vn.val().data, params);
    for (std::size_t i = 0; i < gp.size(); ++i) CHECK(g.grad(vp).data[i] == Catch::Approx(gp[i]));
    for (std::size_t i = 0; i < gn.size(); ++i) CHECK(g.grad(vn).data[i] == Catch::Approx(gn[i]));
}

TEST_CASE("grouping softmax node backpropagates into similarities") {
    grad::Graph g;
    Tensor u = Tensor::vector({1.2, 0.4, -0.3, 0.8});
    std::vector<std::size_t> pos = {0, 3};
    grad::Var vu = g.leaf(u, true);
    grad::Var v = grad::grouping_softmax_node(vu, pos);
    grad::Var vp = grad::slice(v, 0, 2);
    grad::Var vn = grad::slice(v, 2, 2);
    grad::Var loss = grad::asl(vp, vn, AslParams{0.0, 4.0, 0.0});
    g.backward(loss);

    const double h = 1e-6;
    for (std::size_t i = 0; i < u.size(); ++i) {
        auto eval = [&](double delta) {
            std::vector<double> uv = u.data;
            uv[i] += delta;
            auto [p, n] = grouping_softmax(uv, pos);
            return asl_loss(p, n, AslParams{0.0, 4.0, 0.0});
        };
        double fd = (eval(h) - eval(-h)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(g.grad(vu).data[i]), 1e-8});
        CHECK(std::abs(g.grad(vu).data[i] - fd) / denom < 1e-4);
    }
}
