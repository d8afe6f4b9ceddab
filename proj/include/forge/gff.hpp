#pragma once

#include <cmath>
#include <vector>

#include "forge/autograd.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Global Feature Fusion: a plug-in branch beside a frozen 3x3 convolution.
// The input map is pooled into a global vector, concatenated back per
// pixel, and two 1x1 transforms produce spatial attention (softmax over
// positions, per head) and per-pixel gates (sigmoid). Attended head
// contexts are broadcast back through the gates and standardized per
// channel with a zero-initialized scale, so an untrained GFF contributes
// exactly nothing.
struct GffParams {
    enum class HeadMode { sum, mean };

    std::size_t channels = 0;
    std::size_t heads = 1;
    HeadMode head_mode = HeadMode::sum;
    Tensor attn_w, attn_b;      // [h, 2C], [h]
    Tensor gate_w, gate_b;      // [h, 2C], [h]
    Tensor norm_scale;          // [C], zero-initialized
    Tensor norm_shift;          // [C]

    GffParams() = default;

    GffParams(std::size_t C, std::size_t h, Rng& rng, HeadMode mode = HeadMode::sum)
        : channels(C), heads(h), head_mode(mode) {
        if (h < 1) throw ValidationError("GFF needs at least one head");
        double s = 1.0 / std::sqrt(static_cast<double>(2 * C));
        attn_w = Tensor::randn({h, 2 * C}, rng, s);
        attn_b = Tensor::zeros({h});
        gate_w = Tensor::randn({h, 2 * C}, rng, s);
        gate_b = Tensor::zeros({h});
        norm_scale = Tensor::zeros({C});
        norm_shift = Tensor::zeros({C});
    }

    std::vector<Tensor*> params() { return {&attn_w, &attn_b, &gate_w, &gate_b, &norm_scale, &norm_shift}; }
    std::vector<const Tensor*> params() const {
        return {&attn_w, &attn_b, &gate_w, &gate_b, &norm_scale, &norm_shift};
    }
};

namespace grad {

struct GffVars {
    Var attn_w, attn_b, gate_w, gate_b, norm_scale, norm_shift;

    static GffVars leaves(Graph& g, const GffParams& p, bool trainable) {
        return {g.leaf(p.attn_w, trainable),     g.leaf(p.attn_b, trainable), g.leaf(p.gate_w, trainable),
                g.leaf(p.gate_b, trainable),     g.leaf(p.norm_scale, trainable),
                g.leaf(p.norm_shift, trainable)};
    }

    std::vector<Var> all() const { return {attn_w, attn_b, gate_w, gate_b, norm_scale, norm_shift}; }
};

inline Var gff_forward(Graph& g, Var F, const GffVars& v, const GffParams& meta) {
    const Tensor& fv = F.val();
    if (fv.rank() != 3) throw ValidationError("gff_forward expects [C,H,W]");
    std::size_t C = fv.dim(0), H = fv.dim(1), W = fv.dim(2), P = H * W;
    if (C != meta.channels) throw ValidationError("gff_forward: channel mismatch");
    std::size_t h = meta.heads;

    Var global = broadcast_spatial(spatial_mean(F), H, W);
    Var hidden = concat_channels(F, global);                                   // [2C,H,W]
    Var attn = softmax_rows(reshape(conv1x1(hidden, v.attn_w, v.attn_b), {h, P}));  // [h,P]
    Var gates = sigmoid(reshape(conv1x1(hidden, v.gate_w, v.gate_b), {h, P}));      // [h,P]

    Var fmat = reshape(F, {C, P});
    Var contexts = matmul(fmat, attn, false, true);  // [C,h]
    Var mixed = matmul(contexts, gates);             // [C,P]
    if (meta.head_mode == GffParams::HeadMode::mean) mixed = smul(mixed, 1.0 / static_cast<double>(h));

    // per-channel standardization, then the zero-initialized affine
    Var o3 = reshape(mixed, {C, H, W});
    Var mu = spatial_mean(o3);
    Var centered = sub(o3, broadcast_spatial(mu, H, W));
    Var variance = spatial_mean(mul(centered, centered));
    Var denom = broadcast_spatial(vsqrt(sadd(variance, 1e-5)), H, W);
    Var standardized = div(centered, denom);
    return add(mul(standardized, broadcast_spatial(v.norm_scale, H, W)),
               broadcast_spatial(v.norm_shift, H, W));
}

// conv3x3(F) + gff(F); the shapes must already agree (fusion sites are
// channel-preserving convolutions)
inline Var fuse_layer(Graph& g, Var F, Var conv_w, Var conv_b, const GffVars& v, const GffParams& meta) {
    Var local = conv3x3(F, conv_w, conv_b);
    Var fused = gff_forward(g, F, v, meta);
    if (!local.val().same_shape(fused.val())) throw ValidationError("fuse_layer: shape mismatch");
    return add(local, fused);
}

}  // namespace grad

// Plain-double forward used by tests as the straight-line reference and by
// callers that need values without a tape.
inline Tensor gff_forward_plain(const Tensor& F, const GffParams& p) {
    grad::Graph g;
    grad::GffVars v = grad::GffVars::leaves(g, p, false);
    return grad::gff_forward(g, g.constant(F), v, p).val();
}

}  // namespace forge
