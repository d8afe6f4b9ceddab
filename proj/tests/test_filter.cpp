#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "forge/filter.hpp"
#include "forge/rng.hpp"

using namespace forge;

namespace {

// Literal Grouping Softmax reference: build each group's similarity list
// and run a plain softmax over it. Kept deliberately naive so it stays an
// independent check on the production implementation.
std::pair<std::vector<double>, std::vector<double>> grouping_softmax_bruteforce(
    const std::vector<double>& u, const std::vector<std::size_t>& pos) {
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (std::find(pos.begin(), pos.end(), i) == pos.end()) neg.push_back(i);
    std::vector<double> v_p(pos.size());
    std::vector<double> v_n(neg.size(), 0.0);
    for (std::size_t gi = 0; gi < pos.size(); ++gi) {
        std::vector<double> group;
        group.push_back(u[pos[gi]]);
        for (auto n : neg) group.push_back(u[n]);
        double z = 0.0;
        std::vector<double> e(group.size());
        for (std::size_t t = 0; t < group.size(); ++t) {
            e[t] = std::exp(group[t]);
            z += e[t];
        }
        v_p[gi] = e[0] / z;
        for (std::size_t t = 0; t < neg.size(); ++t) v_n[t] += e[t + 1] / z;
    }
    for (auto& v : v_n) v /= static_cast<double>(pos.size());
    return {v_p, v_n};
}

std::pair<std::vector<double>, std::vector<std::size_t>> random_instance(Rng& rng, std::size_t max_m = 20,
                                                                         std::size_t max_j = 5) {
    std::size_t m = 2 + rng.below(max_m - 1);
    std::size_t j = 1 + rng.below(std::min(max_j, m));
    std::vector<double> u(m);
    for (auto& v : u) v = rng.uniform(-3.0, 3.0);
    std::vector<std::size_t> all(m);
    for (std::size_t i = 0; i < m; ++i) all[i] = i;
    // Fisher-Yates prefix as the positive set
    for (std::size_t i = 0; i < j; ++i) std::swap(all[i], all[i + rng.below(m - i)]);
    return {u, std::vector<std::size_t>(all.begin(), all.begin() + static_cast<long>(j))};
}

}  // namespace

TEST_CASE("grouping softmax matches hand-evaluated example") {
    // u_p=[2.0], u_n=[0,0]
    auto [v_p, v_n] = grouping_softmax({2.0, 0.0, 0.0}, {0});
    double e2 = std::exp(2.0);
    CHECK(v_p[0] == Catch::Approx(e2 / (e2 + 2.0)).epsilon(1e-12));
    CHECK(v_p[0] == Catch::Approx(0.78699).margin(1e-5));
    CHECK(v_n[0] == Catch::Approx(0.10650).margin(1e-5));
    CHECK(v_n[1] == Catch::Approx(0.10650).margin(1e-5));
}

TEST_CASE("grouping softmax trivial cases") {
    SECTION("j=1, k=1, equal similarities give 0.5 / 0.5") {
        auto [v_p, v_n] = grouping_softmax({1.3, 1.3}, {0});
        CHECK(v_p[0] == Catch::Approx(0.5).epsilon(1e-15));
        CHECK(v_n[0] == Catch::Approx(0.5).epsilon(1e-15));
    }
    SECTION("k=0 gives exact ones and empty negatives") {
        auto [v_p, v_n] = grouping_softmax({0.4, -1.0}, {0, 1});
        CHECK(v_p[0] == 1.0);
        CHECK(v_p[1] == 1.0);
        CHECK(v_n.empty());
    }
}

TEST_CASE("grouping softmax rejects bad positive sets") {
    CHECK_THROWS_AS(grouping_softmax({1.0, 2.0}, {}), ValidationError);
    CHECK_THROWS_AS(grouping_softmax({1.0, 2.0}, {5}), ValidationError);
    CHECK_THROWS_AS(grouping_softmax({1.0, 2.0}, {1, 1}), ValidationError);
}

TEST_CASE("grouping softmax equals brute-force reference on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 1200; ++trial) {
        auto [u, pos] = random_instance(rng);
        auto [v_p, v_n] = grouping_softmax(u, pos);
        auto [b_p, b_n] = grouping_softmax_bruteforce(u, pos);
        for (std::size_t i = 0; i < v_p.size(); ++i) CHECK(std::abs(v_p[i] - b_p[i]) < 1e-12);
        for (std::size_t i = 0; i < v_n.size(); ++i) CHECK(std::abs(v_n[i] - b_n[i]) < 1e-12);
    }
}

TEST_CASE("positive independence: one positive's probability ignores the others") {
    Rng rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        auto [u, pos] = random_instance(rng);
        if (pos.size() < 2) continue;
        auto [v_p, v_n] = grouping_softmax(u, pos);
        std::vector<double> u2 = u;
        u2[pos[1]] = rng.uniform(-5.0, 5.0);  // perturb a different positive
        auto [v_p2, v_n2] = grouping_softmax(u2, pos);
        CHECK(std::abs(v_p[0] - v_p2[0]) < 1e-15);
    }
}

TEST_CASE("shift invariance of grouping softmax") {
    Rng rng(123);
    for (int trial = 0; trial < 300; ++trial) {
        auto [u, pos] = random_instance(rng);
        double shift = rng.uniform(-10.0, 10.0);
        std::vector<double> u2 = u;
        for (auto& v : u2) v += shift;
        auto [v_p, v_n] = grouping_softmax(u, pos);
        auto [v_p2, v_n2] = grouping_softmax(u2, pos);
        for (std::size_t i = 0; i < v_p.size(); ++i) CHECK(std::abs(v_p[i] - v_p2[i]) < 1e-12);
        for (std::size_t i = 0; i < v_n.size(); ++i) CHECK(std::abs(v_n[i] - v_n2[i]) < 1e-12);
    }
}

TEST_CASE("monotonicity in own similarity and in negatives") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        auto [u, pos] = random_instance(rng);
        std::vector<std::size_t> neg;
        for (std::size_t i = 0; i < u.size(); ++i)
            if (std::find(pos.begin(), pos.end(), i) == pos.end()) neg.push_back(i);
        if (neg.empty()) continue;  // without negatives v_p is constant 1

        auto [v_p, v_n] = grouping_softmax(u, pos);
        std::vector<double> up = u;
        up[pos[0]] += 0.25;
        auto [v_p_up, ignored] = grouping_softmax(up, pos);
        CHECK(v_p_up[0] > v_p[0]);

        // raising any negative lowers every positive probability
        std::vector<double> un = u;
        un[neg[rng.below(neg.size())]] += 0.25;
        auto [v_p_dn, ignored2] = grouping_softmax(un, pos);
        for (std::size_t i = 0; i < v_p.size(); ++i) CHECK(v_p_dn[i] < v_p[i]);
    }
}

TEST_CASE("suppression contrast against plain softmax") {
    // two equal positives dominating all negatives: plain softmax halves
    // their probabilities, grouping softmax does not
    Rng rng(55);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t k = 1 + rng.below(10);
        double hi = rng.uniform(1.0, 3.0);
        std::vector<double> u(2 + k);
        u[0] = u[1] = hi;
        for (std::size_t i = 0; i < k; ++i) u[2 + i] = rng.uniform(-2.0, hi - 0.5);
        auto [v_p, v_n] = grouping_softmax(u, {0, 1});

        double z = 0.0;
        for (double v : u) z += std::exp(v);
        double plain0 = std::exp(u[0]) / z;
        CHECK(plain0 < v_p[0]);
        CHECK(plain0 < v_p[1]);
    }
}

TEST_CASE("grouping softmax backward matches finite differences") {
    Rng rng(404);
    for (int trial = 0; trial < 40; ++trial) {
        auto [u, pos] = random_instance(rng, 8, 3);
        std::size_t j = pos.size(), k = u.size() - j;
        std::vector<double> gp(j), gn(k);
        for (auto& v : gp) v = rng.uniform(-1.0, 1.0);
        for (auto& v : gn) v = rng.uniform(-1.0, 1.0);
        std::vector<double> grad = grouping_softmax_backward(u, pos, gp, gn);

        const double h = 1e-6;
        for (std::size_t i = 0; i < u.size(); ++i) {
            auto scalarized = [&](const std::vector<double>& uv) {
                auto [vp, vn] = grouping_softmax(uv, pos);
                double s = 0.0;
                for (std::size_t t = 0; t < j; ++t) s += gp[t] * vp[t];
                for (std::size_t t = 0; t < k; ++t) s += gn[t] * vn[t];
                return s;
            };
            std::vector<double> up = u, dn = u;
            up[i] += h;
            dn[i] -= h;
            double fd = (scalarized(up) - scalarized(dn)) / (2 * h);
            CHECK(std::abs(grad[i] - fd) < 1e-6);
        }
    }
}

TEST_CASE("qualify strict mode") {
    QualificationPolicy policy;
    policy.lambda_threshold = 0.5;

    SECTION("clean acceptance") {
        SimilarityReport rep;
        rep.u = {1.0, 1.2, -0.5, -0.2};
        rep.positives_idx = {0, 1};
        rep.v_p = {0.6, 0.7};
        rep.v_n = {0.2, 0.25};
        auto res = qualify(rep, policy);
        CHECK(res.accepted);
        CHECK(res.final_positives == std::vector<std::size_t>{0, 1});
    }
    SECTION("threshold violation rejects") {
        SimilarityReport rep;
        rep.u = {1.0, 0.2, -0.5};
        rep.positives_idx = {0, 1};
        rep.v_p = {0.6, 0.4};
        rep.v_n = {0.2};
        CHECK_FALSE(qualify(rep, policy).accepted);
    }
    SECTION("rank failure rejects even above threshold") {
        SimilarityReport rep;
        rep.u = {1.0, 0.9, 1.4};
        rep.positives_idx = {0, 1};
        rep.v_p = {0.55, 0.52};
        rep.v_n = {0.60};
        CHECK_FALSE(qualify(rep, policy).accepted);
    }
    SECTION("exact tie at the boundary rejects") {
        SimilarityReport rep;
        rep.u = {1.0, 1.0, 1.0};
        rep.positives_idx = {0, 1};
        rep.v_p = {0.55, 0.55};
        rep.v_n = {0.55};
        CHECK_FALSE(qualify(rep, policy).accepted);
    }
}

TEST_CASE("qualify fine-grained mode promotes strong extra categories") {
    QualificationPolicy policy;
    policy.lambda_threshold = 0.1;
    policy.mode = QualificationPolicy::Mode::fine_grained_topk;
    policy.topk = 7;

    SimilarityReport rep;
    rep.u.assign(10, 0.0);
    rep.positives_idx = {0, 1};
    rep.v_p = {0.30, 0.20};
    rep.v_n = {0.15, 0.05, 0.04, 0.03, 0.02, 0.01, 0.005, 0.001};
    auto res = qualify(rep, policy);
    CHECK(res.accepted);
    // the 0.15 negative (category 2) exceeds lambda inside the top-7
    CHECK(res.final_positives == std::vector<std::size_t>{0, 1, 2});

    SECTION("positives pushed out of the top-k reject") {
        policy.topk = 2;
        SimilarityReport rep2 = rep;
        rep2.v_n[0] = 0.25;  // now ranks above the weakest positive
        CHECK_FALSE(qualify(rep2, policy).accepted);
    }
    SECTION("fine-grained policy requires topk") {
        QualificationPolicy bad;
        bad.mode = QualificationPolicy::Mode::fine_grained_topk;
        CHECK_THROWS_AS(qualify(rep, bad), ValidationError);
    }
}

TEST_CASE("cosine similarities: self, orthogonal, and zero-norm") {
    std::vector<double> img = {1.0, 0.0, 0.0};
    std::vector<std::vector<double>> texts = {{1.0, 0.0, 0.0}, {0.0, 2.0, 0.0}};
    auto u = cosine_from_embeddings(img, texts);
    CHECK(u[0] == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(u[1] == Catch::Approx(0.0).margin(1e-15));

    CHECK_THROWS_AS(cosine_from_embeddings({0.0, 0.0, 0.0}, texts), ValidationError);
    CHECK_THROWS_AS(cosine_from_embeddings(img, {{0.0, 0.0, 0.0}}), ValidationError);
}
