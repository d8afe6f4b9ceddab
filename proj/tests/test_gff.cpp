#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "forge/gff.hpp"

using namespace forge;

namespace {

// Literal step-by-step reference: plain loops, no shared code with the
// production path beyond the parameter struct.
Tensor gff_reference(const Tensor& F, const GffParams& p) {
    std::size_t C = F.dim(0), H = F.dim(1), W = F.dim(2), P = H * W, h = p.heads;

    // (1) global mean per channel
    std::vector<double> g(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) g[c] += F.data[c * P + i] / static_cast<double>(P);

    // (2) hidden = [F ; g] per pixel, (3) attention logits + softmax over P
    std::vector<std::vector<double>> attn(h, std::vector<double>(P, 0.0));
    std::vector<std::vector<double>> gate(h, std::vector<double>(P, 0.0));
    for (std::size_t t = 0; t < h; ++t) {
        for (std::size_t i = 0; i < P; ++i) {
            double la = p.attn_b.data[t], lg = p.gate_b.data[t];
            for (std::size_t c = 0; c < C; ++c) {
                la += p.attn_w.at(t, c) * F.data[c * P + i] + p.attn_w.at(t, C + c) * g[c];
                lg += p.gate_w.at(t, c) * F.data[c * P + i] + p.gate_w.at(t, C + c) * g[c];
            }
            attn[t][i] = la;
            gate[t][i] = 1.0 / (1.0 + std::exp(-lg));
        }
        double mx = attn[t][0];
        for (double v : attn[t]) mx = std::max(mx, v);
        double z = 0.0;
        for (auto& v : attn[t]) {
            v = std::exp(v - mx);
            z += v;
        }
        for (auto& v : attn[t]) v /= z;
    }

    // (5) head contexts
    std::vector<std::vector<double>> ctx(h, std::vector<double>(C, 0.0));
    for (std::size_t t = 0; t < h; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < P; ++i) ctx[t][c] += attn[t][i] * F.data[c * P + i];

    // (6) broadcast through gates, summed over heads
    Tensor O({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) {
            double s = 0.0;
            for (std::size_t t = 0; t < h; ++t) s += gate[t][i] * ctx[t][c];
            if (p.head_mode == GffParams::HeadMode::mean) s /= static_cast<double>(h);
            O.data[c * P + i] = s;
        }

    // (7) per-channel standardization + affine
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        double mu = 0.0;
        for (std::size_t i = 0; i < P; ++i) mu += O.data[c * P + i] / static_cast<double>(P);
        double var = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
            double d = O.data[c * P + i] - mu;
            var += d * d / static_cast<double>(P);
        }
        double denom = std::sqrt(var + 1e-5);
        for (std::size_t i = 0; i < P; ++i)
            out.data[c * P + i] =
                p.norm_scale.data[c] * (O.data[c * P + i] - mu) / denom + p.norm_shift.data[c];
    }
    return out;
}

GffParams random_params(std::size_t C, std::size_t h, std::uint64_t seed,
                        GffParams::HeadMode mode = GffParams::HeadMode::sum) {
    Rng rng(seed);
    GffParams p(C, h, rng, mode);
    // give the normalization something to do
    for (auto& v : p.norm_scale.data) v = rng.uniform(0.5, 1.5);
    for (auto& v : p.norm_shift.data) v = rng.uniform(-0.3, 0.3);
    return p;
}

}  // namespace

TEST_CASE("zero-initialized GFF contributes an all-zero map") {
    Rng rng(7);
    GffParams p(4, 2, rng);  // norm scale/shift stay zero
    Tensor F = Tensor::randn({4, 5, 5}, rng);
    Tensor out = gff_forward_plain(F, p);
    for (double v : out.data) {
        CHECK(v == 0.0);
        CHECK(!std::signbit(v));
    }
}

TEST_CASE("constant input gives uniform attention") {
    Rng rng(11);
    GffParams p = random_params(3, 2, 21);
    Tensor F = Tensor::full({3, 4, 4}, 0.7);

    // with constant F every position has the same logits, so the softmax
    // must be uniform; contexts then equal the constant channel values and
    // standardization maps the constant O to shift
    Tensor out = gff_forward_plain(F, p);
    Tensor ref = gff_reference(F, p);
    CHECK(max_abs_diff(out, ref) < 1e-9);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(out.data[c * 16 + i] == Catch::Approx(p.norm_shift.data[c]).margin(1e-9));
}

TEST_CASE("production GFF matches the straight-line reference") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t C = 2 + rng.below(7);
        std::size_t h = 1 + rng.below(4);
        std::size_t H = 2 + rng.below(5), W = 2 + rng.below(5);
        auto mode = (trial % 2 == 0) ? GffParams::HeadMode::sum : GffParams::HeadMode::mean;
        GffParams p = random_params(C, h, 100 + static_cast<std::uint64_t>(trial), mode);
        Tensor F = Tensor::randn({C, H, W}, rng);
        Tensor out = gff_forward_plain(F, p);
        Tensor ref = gff_reference(F, p);
        CHECK(max_abs_diff(out, ref) < 1e-6);
    }
}

TEST_CASE("random 8x5x5 two-head case: attention sums to one, matches reference") {
    Rng rng(77);
    GffParams p = random_params(8, 2, 777);
    Tensor F = Tensor::randn({8, 5, 5}, rng);

    // recompute the attention exactly as the module does and check the sums
    grad::Graph g;
    grad::Var vf = g.constant(F);
    grad::Var global = grad::broadcast_spatial(grad::spatial_mean(vf), 5, 5);
    grad::Var hidden = grad::concat_channels(vf, global);
    grad::GffVars vars = grad::GffVars::leaves(g, p, false);
    grad::Var attn = grad::softmax_rows(grad::reshape(grad::conv1x1(hidden, vars.attn_w, vars.attn_b), {2, 25}));
    for (std::size_t t = 0; t < 2; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < 25; ++i) s += attn.val().at(t, i);
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    CHECK(max_abs_diff(gff_forward_plain(F, p), gff_reference(F, p)) < 1e-6);
}

TEST_CASE("single-position maps standardize to the shift without NaNs") {
    GffParams p = random_params(3, 2, 5);
    Rng rng(6);
    Tensor F = Tensor::randn({3, 1, 1}, rng);
    Tensor out = gff_forward_plain(F, p);
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.data[c] == Catch::Approx(p.norm_shift.data[c]).margin(1e-9));
}

TEST_CASE("channel mismatch is rejected") {
    GffParams p = random_params(4, 2, 9);
    Rng rng(10);
    Tensor F = Tensor::randn({3, 4, 4}, rng);
    CHECK_THROWS_AS(gff_forward_plain(F, p), ValidationError);
}

TEST_CASE("gff gradients pass the finite-difference check") {
    Rng rng(13);
    GffParams p = random_params(3, 2, 1234);
    Tensor F = Tensor::randn({3, 3, 3}, rng);
    Tensor probe = Tensor::randn({3, 3, 3}, rng);  // fixed projection of the output

    auto loss_with = [&](const GffParams& params, const Tensor& input) {
        Tensor out = gff_forward_plain(input, params);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * probe.data[i];
        return s;
    };

    grad::Graph g;
    grad::GffVars vars = grad::GffVars::leaves(g, p, true);
    grad::Var vf = g.leaf(F, true);
    grad::Var out = grad::gff_forward(g, vf, vars, p);
    grad::Var loss = grad::dot(grad::reshape(out, {27}), g.constant(Tensor({27}, probe.data)));
    g.backward(loss);

    auto check = [&](const Tensor& analytic, Tensor& target) {
        Tensor fd = grad::finite_difference(
            [&](const Tensor& t) {
                Tensor keep = target;
                target = t;
                double v = loss_with(p, F);
                target = keep;
                return v;
            },
            target, 1e-5);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            double denom = std::max({std::abs(fd.data[i]), std::abs(analytic.data[i]), 1e-5});
            CHECK(std::abs(fd.data[i] - analytic.data[i]) / denom < 1e-4);
        }
    };

    check(g.grad(vars.gate_w), p.gate_w);
    check(g.grad(vars.attn_w), p.attn_w);
    check(g.grad(vars.norm_scale), p.norm_scale);
    check(g.grad(vars.norm_shift), p.norm_shift);

    // input gradient via a fresh forward
    Tensor fd_input = grad::finite_difference([&](const Tensor& t) { return loss_with(p, t); }, F, 1e-5);
    for (std::size_t i = 0; i < fd_input.size(); ++i) {
        double denom = std::max({std::abs(fd_input.data[i]), std::abs(g.grad(vf).data[i]), 1e-5});
        CHECK(std::abs(fd_input.data[i] - g.grad(vf).data[i]) / denom < 1e-4);
    }
}

TEST_CASE("fuse_layer adds the GFF branch onto the convolution") {
    Rng rng(21);
    std::size_t C = 4;
    Tensor F = Tensor::randn({C, 4, 4}, rng);
    Tensor w = Tensor::randn({C, C, 3, 3}, rng, 0.3);
    Tensor b = Tensor::randn({C}, rng, 0.1);

    SECTION("zero-init GFF leaves the conv output bitwise intact") {
        Rng r2(2);
        GffParams p(C, 2, r2);
        grad::Graph g;
        grad::Var conv_only = grad::conv3x3(g.constant(F), g.constant(w), g.constant(b));
        grad::GffVars vars = grad::GffVars::leaves(g, p, false);
        grad::Var fused = grad::fuse_layer(g, g.constant(F), g.constant(w), g.constant(b), vars, p);
        REQUIRE(fused.val().size() == conv_only.val().size());
        for (std::size_t i = 0; i < fused.val().size(); ++i)
            CHECK(fused.val().data[i] == conv_only.val().data[i]);
    }

    SECTION("active GFF adds exactly the normalization output") {
        GffParams p = random_params(C, 2, 31);
        grad::Graph g;
        grad::Var conv_only = grad::conv3x3(g.constant(F), g.constant(w), g.constant(b));
        Tensor branch = gff_forward_plain(F, p);
        grad::GffVars vars = grad::GffVars::leaves(g, p, false);
        grad::Var fused = grad::fuse_layer(g, g.constant(F), g.constant(w), g.constant(b), vars, p);
        for (std::size_t i = 0; i < fused.val().size(); ++i)
            CHECK(fused.val().data[i] ==
                  Catch::Approx(conv_only.val().data[i] + branch.data[i]).margin(1e-12));
    }
}
