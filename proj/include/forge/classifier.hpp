#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/asl.hpp"
#include "forge/autograd.hpp"
#include "forge/config.hpp"
#include "forge/gff.hpp"
#include "forge/manifest.hpp"
#include "forge/optim.hpp"
#include "forge/png_io.hpp"

namespace forge {

// ---- pure per-operation math, shared with the unit tests ----

// cosine similarities between L2-normalized region features [P,d] and
// class text features [Q,d]: S[p][q]
inline Tensor region_similarities_plain(const Tensor& regions, const Tensor& text_feats) {
    if (regions.rank() != 2 || text_feats.rank() != 2 || regions.dim(1) != text_feats.dim(1))
        throw ValidationError("region_similarities: dimension mismatch");
    std::size_t P = regions.dim(0), Q = text_feats.dim(0), d = regions.dim(1);
    auto norm_row = [&](const Tensor& t, std::size_t r) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += t.at(r, i) * t.at(r, i);
        if (s == 0.0) throw ValidationError("zero-norm feature");
        return std::sqrt(s);
    };
    Tensor out({P, Q});
    for (std::size_t p = 0; p < P; ++p) {
        double np = norm_row(regions, p);
        for (std::size_t q = 0; q < Q; ++q) {
            double dotv = 0.0;
            for (std::size_t i = 0; i < d; ++i) dotv += regions.at(p, i) * text_feats.at(q, i);
            out.at(p, q) = dotv / (np * norm_row(text_feats, q));
        }
    }
    return out;
}

// softmax-weighted aggregation over regions; the positive similarity
// provides the weights for both channels
inline std::pair<std::vector<double>, std::vector<double>> aggregate_regions_plain(const Tensor& s_plus,
                                                                                   const Tensor& s_minus) {
    if (!s_plus.same_shape(s_minus) || s_plus.rank() != 2)
        throw ValidationError("aggregate_regions: shape mismatch");
    std::size_t P = s_plus.dim(0), Q = s_plus.dim(1);
    std::vector<double> agg_p(Q, 0.0), agg_m(Q, 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
        double mx = s_plus.at(0, q);
        for (std::size_t p = 1; p < P; ++p) mx = std::max(mx, s_plus.at(p, q));
        double z = 0.0;
        for (std::size_t p = 0; p < P; ++p) z += std::exp(s_plus.at(p, q) - mx);
        for (std::size_t p = 0; p < P; ++p) {
            double w = std::exp(s_plus.at(p, q) - mx) / z;
            agg_p[q] += w * s_plus.at(p, q);
            agg_m[q] += w * s_minus.at(p, q);
        }
    }
    return {std::move(agg_p), std::move(agg_m)};
}

inline double binary_probability(double s_plus, double s_minus, double tau) {
    if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
    // exp(S+/t) / (exp(S+/t) + exp(S-/t)), computed in sigmoid form
    return 1.0 / (1.0 + std::exp(-(s_plus - s_minus) / tau));
}

// ---- model configuration ----

struct ClassifierConfig {
    int context_length = 16;   // learnable tokens per prompt
    int token_dim = 12;
    int embed_dim = 16;        // joint image/text space
    std::vector<int> channels = {6, 10, 14};
    std::vector<int> gff_sites = {1, 2};  // block indices carrying a GFF branch
    int gff_heads = 2;
    GffParams::HeadMode gff_head_mode = GffParams::HeadMode::sum;
    double tau = 0.07;
    int input_resolution = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (context_length < 1 || token_dim < 1 || embed_dim < 1) throw ConfigError("bad classifier dims");
        if (channels.size() != 3) throw ConfigError("toy encoder expects three blocks");
        for (int s : gff_sites)
            if (s < 0 || s > 2) throw ConfigError("gff site out of range");
        if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
        if (input_resolution % 8 != 0) throw ConfigError("input resolution must be divisible by 8");
    }
};

// Per-class pair of learnable contexts plus the frozen class-name token.
struct DualPromptBank {
    int context_length = 0;
    int token_dim = 0;
    std::vector<Tensor> positive_ctx;  // per class [M, token_dim]
    std::vector<Tensor> negative_ctx;
    std::vector<Tensor> class_tokens;  // frozen [token_dim]

    DualPromptBank() = default;

    DualPromptBank(const LabelSpace& ls, int M, int d_tok, Rng& rng) : context_length(M), token_dim(d_tok) {
        for (std::size_t c = 0; c < ls.size(); ++c) {
            positive_ctx.push_back(Tensor::randn({static_cast<std::size_t>(M), static_cast<std::size_t>(d_tok)}, rng, 0.05));
            negative_ctx.push_back(Tensor::randn({static_cast<std::size_t>(M), static_cast<std::size_t>(d_tok)}, rng, 0.05));
            Rng tok(derive_seed(0xc1a55, hash_str(ls.name(c))));
            class_tokens.push_back(Tensor::randn({static_cast<std::size_t>(d_tok)}, tok, 1.0));
        }
    }

    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out;
        for (auto& t : positive_ctx) out.push_back(&t);
        for (auto& t : negative_ctx) out.push_back(&t);
        return out;
    }
    std::vector<const Tensor*> trainable() const {
        std::vector<const Tensor*> out;
        for (const auto& t : positive_ctx) out.push_back(&t);
        for (const auto& t : negative_ctx) out.push_back(&t);
        return out;
    }
};

// Three-block toy CNN with channel-preserving fusion sites.
struct ToyVisualEncoder {
    // block b: convA (C_{b-1} -> C_b), relu, then for blocks with a second
    // conv: convB (C_b -> C_b, the fusion site), relu; avgpool after each
    std::vector<Tensor> conv_a_w, conv_a_b;
    std::vector<Tensor> conv_b_w, conv_b_b;  // empty tensors where absent
    Tensor proj_w;                           // [embed_dim, C_3], frozen projection
    std::vector<int> channels;

    ToyVisualEncoder() = default;

    ToyVisualEncoder(const ClassifierConfig& cfg, Rng& rng) : channels(cfg.channels) {
        int prev = 3;
        for (int b = 0; b < 3; ++b) {
            int ch = cfg.channels[static_cast<std::size_t>(b)];
            double s = 1.0 / std::sqrt(9.0 * prev);
            conv_a_w.push_back(Tensor::randn({static_cast<std::size_t>(ch), static_cast<std::size_t>(prev), 3, 3}, rng, s));
            conv_a_b.push_back(Tensor::randn({static_cast<std::size_t>(ch)}, rng, 0.05));
            if (b > 0) {
                double s2 = 1.0 / std::sqrt(9.0 * ch);
                conv_b_w.push_back(Tensor::randn({static_cast<std::size_t>(ch), static_cast<std::size_t>(ch), 3, 3}, rng, s2));
                conv_b_b.push_back(Tensor::randn({static_cast<std::size_t>(ch)}, rng, 0.05));
            } else {
                conv_b_w.push_back(Tensor());
                conv_b_b.push_back(Tensor());
            }
            prev = ch;
        }
        proj_w = Tensor::randn({static_cast<std::size_t>(cfg.embed_dim), static_cast<std::size_t>(cfg.channels[2])},
                               rng, 1.0 / std::sqrt(static_cast<double>(cfg.channels[2])));
    }

    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out;
        for (int b = 0; b < 3; ++b) {
            out.push_back(&conv_a_w[static_cast<std::size_t>(b)]);
            out.push_back(&conv_a_b[static_cast<std::size_t>(b)]);
            if (conv_b_w[static_cast<std::size_t>(b)].size() > 0) {
                out.push_back(&conv_b_w[static_cast<std::size_t>(b)]);
                out.push_back(&conv_b_b[static_cast<std::size_t>(b)]);
            }
        }
        return out;
    }
    std::vector<const Tensor*> trainable() const {
        std::vector<const Tensor*> out;
        for (const auto* t : const_cast<ToyVisualEncoder*>(this)->trainable()) out.push_back(t);
        return out;
    }
};

// Everything the classifier trains or loads: prompts, GFFs, encoder,
// frozen text tower, plus the strategy that decides who gets gradients.
struct ClassifierState {
    ClassifierConfig config;
    LabelSpace labels;
    DualPromptBank prompts;
    ToyVisualEncoder encoder;
    std::vector<GffParams> gffs;  // aligned with config.gff_sites
    Tensor text_w;                // frozen text tower [embed_dim, token_dim]
    Tensor text_b;                // [embed_dim]
    Strategy strategy = Strategy::sync_prompts_gff;

    ClassifierState() = default;

    ClassifierState(const LabelSpace& ls, const ClassifierConfig& cfg, Strategy strat)
        : config(cfg), labels(ls), strategy(strat) {
        cfg.validate();
        Rng rng(derive_seed(cfg.seed, 0xc0de));
        prompts = DualPromptBank(ls, cfg.context_length, cfg.token_dim, rng);
        encoder = ToyVisualEncoder(cfg, rng);
        text_w = Tensor::randn({static_cast<std::size_t>(cfg.embed_dim), static_cast<std::size_t>(cfg.token_dim)},
                               rng, 1.0 / std::sqrt(static_cast<double>(cfg.token_dim)));
        text_b = Tensor::randn({static_cast<std::size_t>(cfg.embed_dim)}, rng, 0.05);
        // GFF parameters draw last so a GFF-free twin shares every other
        // parameter under the same seed
        for (int site : cfg.gff_sites) {
            std::size_t ch = static_cast<std::size_t>(cfg.channels[static_cast<std::size_t>(site)]);
            gffs.emplace_back(ch, static_cast<std::size_t>(cfg.gff_heads), rng, cfg.gff_head_mode);
        }
    }

    std::vector<Tensor*> gff_trainable() {
        std::vector<Tensor*> out;
        for (auto& g : gffs)
            for (auto* t : g.params()) out.push_back(t);
        return out;
    }

    std::uint64_t prompts_fingerprint() const { return fingerprint_tensors(prompts.trainable()); }
    std::uint64_t encoder_fingerprint() const { return fingerprint_tensors(encoder.trainable()); }
    std::uint64_t gff_fingerprint() const {
        std::vector<const Tensor*> all;
        for (const auto& g : gffs)
            for (const auto* t : g.params()) all.push_back(t);
        return fingerprint_tensors(all);
    }
    std::uint64_t frozen_fingerprint() const {
        return fingerprint_tensors({&encoder.proj_w, &text_w, &text_b});
    }
};

namespace classifier_detail {

struct ForwardVars {
    std::vector<grad::Var> pos_ctx, neg_ctx;
    std::vector<grad::Var> enc_params;  // in ToyVisualEncoder::trainable order
    std::vector<grad::GffVars> gff_vars;
};

struct TrainFlags {
    bool prompts = false;
    bool gff = false;
    bool encoder = false;
};

inline Tensor image_to_tensor(const Image& img) {
    Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    img.at(y, x, c);
    return t;
}

inline ForwardVars make_vars(grad::Graph& g, ClassifierState& state, const TrainFlags& flags) {
    ForwardVars v;
    for (std::size_t c = 0; c < state.labels.size(); ++c) {
        v.pos_ctx.push_back(g.leaf(state.prompts.positive_ctx[c], flags.prompts));
        v.neg_ctx.push_back(g.leaf(state.prompts.negative_ctx[c], flags.prompts));
    }
    for (Tensor* t : state.encoder.trainable()) v.enc_params.push_back(g.leaf(*t, flags.encoder));
    for (auto& gp : state.gffs) v.gff_vars.push_back(grad::GffVars::leaves(g, gp, flags.gff));
    return v;
}

// context tokens + class token -> mean -> frozen linear -> tanh
inline grad::Var encode_prompt(grad::Graph& g, const ClassifierState& state, grad::Var ctx, std::size_t cls) {
    std::size_t M = static_cast<std::size_t>(state.prompts.context_length);
    std::size_t d_tok = static_cast<std::size_t>(state.prompts.token_dim);
    grad::Var ones = g.constant(Tensor::full({1, M}, 1.0));
    grad::Var ctx_sum = grad::matmul(ones, ctx);  // [1, d_tok]
    grad::Var cls_tok = g.constant(Tensor({1, d_tok}, state.prompts.class_tokens[cls].data));
    grad::Var mean_tok = grad::smul(grad::add(ctx_sum, cls_tok), 1.0 / static_cast<double>(M + 1));
    grad::Var w = g.constant(state.text_w);
    grad::Var b = g.constant(Tensor({1, static_cast<std::size_t>(state.config.embed_dim)}, state.text_b.data));
    return grad::vtanh(grad::add(grad::matmul(mean_tok, w, false, true), b));  // [1, embed_dim]
}

// visual tower: [3,H,W] -> projected region features [embed_dim, P]
inline grad::Var encode_image(grad::Graph& g, ClassifierState& state, const ForwardVars& v, const Tensor& image) {
    grad::Var x = g.constant(image);
    std::size_t enc_i = 0;
    std::size_t gff_i = 0;
    for (int b = 0; b < 3; ++b) {
        grad::Var wa = v.enc_params[enc_i++];
        grad::Var ba = v.enc_params[enc_i++];
        x = grad::relu(grad::conv3x3(x, wa, ba));
        if (state.encoder.conv_b_w[static_cast<std::size_t>(b)].size() > 0) {
            grad::Var wb = v.enc_params[enc_i++];
            grad::Var bb = v.enc_params[enc_i++];
            bool fused = std::find(state.config.gff_sites.begin(), state.config.gff_sites.end(), b) !=
                         state.config.gff_sites.end();
            if (fused) {
                x = grad::relu(grad::fuse_layer(g, x, wb, bb, v.gff_vars[gff_i], state.gffs[gff_i]));
                ++gff_i;
            } else {
                x = grad::relu(grad::conv3x3(x, wb, bb));
            }
        }
        x = grad::avgpool2(x);
    }
    std::size_t C = x.val().dim(0), P = x.val().dim(1) * x.val().dim(2);
    grad::Var flat = grad::reshape(x, {C, P});
    grad::Var proj = g.constant(state.encoder.proj_w);
    return grad::matmul(proj, flat);  // [embed_dim, P]
}

inline grad::Var rows_l2_normalize(grad::Graph& g, grad::Var m) {
    std::size_t n = m.val().dim(0), d = m.val().dim(1);
    grad::Var ones = g.constant(Tensor::full({d, 1}, 1.0));
    grad::Var norms = grad::vsqrt(grad::sadd(grad::matmul(grad::mul(m, m), ones), 1e-12));  // [n,1]
    grad::Var bcast = grad::matmul(norms, g.constant(Tensor::full({1, d}, 1.0)));
    return grad::div(m, bcast);
}

inline grad::Var cols_l2_normalize(grad::Graph& g, grad::Var m) {
    std::size_t n = m.val().dim(0), d = m.val().dim(1);
    grad::Var ones = g.constant(Tensor::full({1, n}, 1.0));
    grad::Var norms = grad::vsqrt(grad::sadd(grad::matmul(ones, grad::mul(m, m)), 1e-12));  // [1,d]
    grad::Var bcast = grad::matmul(g.constant(Tensor::full({n, 1}, 1.0)), norms);
    return grad::div(m, bcast);
}

// full head: per-class probability vector [Q] for the classes in `subset`
inline grad::Var class_probabilities(grad::Graph& g, ClassifierState& state, const ForwardVars& v,
                                     const Tensor& image, const std::vector<std::size_t>& subset) {
    grad::Var regions = cols_l2_normalize(g, encode_image(g, state, v, image));  // [d, P]

    std::vector<grad::Var> pos_rows, neg_rows;
    for (auto cls : subset) {
        pos_rows.push_back(grad::reshape(encode_prompt(g, state, v.pos_ctx[cls], cls),
                                         {static_cast<std::size_t>(state.config.embed_dim)}));
        neg_rows.push_back(grad::reshape(encode_prompt(g, state, v.neg_ctx[cls], cls),
                                         {static_cast<std::size_t>(state.config.embed_dim)}));
    }
    grad::Var tpos = rows_l2_normalize(g, grad::stack_rows(pos_rows));  // [Q, d]
    grad::Var tneg = rows_l2_normalize(g, grad::stack_rows(neg_rows));

    grad::Var s_plus = grad::matmul(tpos, regions);   // [Q, P]
    grad::Var s_minus = grad::matmul(tneg, regions);  // [Q, P]

    // Eq.-7 style aggregation: weights from the positive map
    grad::Var w = grad::softmax_rows(s_plus);
    std::size_t P = s_plus.val().dim(1);
    grad::Var ones = g.constant(Tensor::full({P, 1}, 1.0));
    grad::Var agg_p = grad::matmul(grad::mul(w, s_plus), ones);   // [Q,1]
    grad::Var agg_m = grad::matmul(grad::mul(w, s_minus), ones);  // [Q,1]

    grad::Var logits = grad::smul(grad::sub(agg_p, agg_m), 1.0 / state.config.tau);
    return grad::sigmoid(grad::reshape(logits, {subset.size()}));
}

}  // namespace classifier_detail

// ---- training ----

struct StageReport {
    std::string name;
    std::vector<double> epoch_losses;
    bool prompts_changed = false;
    bool gff_changed = false;
    bool encoder_changed = false;
};

struct TrainReport {
    std::vector<StageReport> stages;
    std::uint64_t frozen_before = 0, frozen_after = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        nlohmann::ordered_json st = nlohmann::ordered_json::array();
        for (const auto& s : stages) {
            nlohmann::ordered_json e;
            e["name"] = s.name;
            e["epoch_losses"] = s.epoch_losses;
            e["prompts_changed"] = s.prompts_changed;
            e["gff_changed"] = s.gff_changed;
            e["encoder_changed"] = s.encoder_changed;
            st.push_back(e);
        }
        j["stages"] = st;
        j["frozen_preserved"] = frozen_before == frozen_after;
        return j;
    }
};

namespace classifier_detail {

inline std::vector<std::pair<TrainFlags, std::string>> stage_plan(Strategy s) {
    using P = std::pair<TrainFlags, std::string>;
    switch (s) {
        case Strategy::prompts_only: return {P{{true, false, false}, "prompts"}};
        case Strategy::sync_prompts_encoder: return {P{{true, false, true}, "prompts+encoder"}};
        case Strategy::encoder_then_prompts:
            return {P{{false, false, true}, "encoder"}, P{{true, false, false}, "prompts"}};
        case Strategy::prompts_then_encoder:
            return {P{{true, false, false}, "prompts"}, P{{false, false, true}, "encoder"}};
        case Strategy::prompts_then_gff:
            return {P{{true, false, false}, "prompts"}, P{{false, true, false}, "gff"}};
        case Strategy::sync_prompts_gff: return {P{{true, true, false}, "prompts+gff"}};
    }
    throw ConfigError("unknown strategy");
}

inline Tensor load_record_image(const SampleRecord& rec, const std::filesystem::path& image_root) {
    if (rec.image) return image_to_tensor(*rec.image);
    return image_to_tensor(png::read_file(image_root / rec.image_ref));
}

}  // namespace classifier_detail

// Optimize the state in place following its strategy's stage plan; each
// stage is a separate optimizer run. Gradients accumulate over the batch,
// every image contributes its asymmetric loss over all classes.
inline TrainReport train_classifier(const DatasetManifest& train, ClassifierState& state,
                                    const AslParams& asl_params, int epochs, double lr, int batch_size,
                                    const std::filesystem::path& image_root = {}) {
    if (train.records.empty()) throw ValidationError("train_classifier: empty dataset");
    if (epochs < 1 || batch_size < 1) throw ValidationError("train_classifier: bad epochs/batch");
    state.config.validate();

    using namespace classifier_detail;

    // all-class subset, used for every training image
    std::vector<std::size_t> all_classes(state.labels.size());
    std::iota(all_classes.begin(), all_classes.end(), std::size_t{0});

    // decode every image once
    std::vector<Tensor> images;
    images.reserve(train.records.size());
    for (const auto& rec : train.records) images.push_back(load_record_image(rec, image_root));

    TrainReport report;
    report.frozen_before = state.frozen_fingerprint();

    int stage_no = 0;
    for (const auto& [flags, stage_name] : stage_plan(state.strategy)) {
        StageReport sr;
        sr.name = stage_name;
        std::uint64_t fp_prompts = state.prompts_fingerprint();
        std::uint64_t fp_gff = state.gff_fingerprint();
        std::uint64_t fp_encoder = state.encoder_fingerprint();

        // deterministic trainable ordering: prompts, gff, encoder
        std::vector<Tensor*> trainable;
        if (flags.prompts)
            for (auto* t : state.prompts.trainable()) trainable.push_back(t);
        if (flags.gff)
            for (auto* t : state.gff_trainable()) trainable.push_back(t);
        if (flags.encoder)
            for (auto* t : state.encoder.trainable()) trainable.push_back(t);
        AdamW opt(lr);

        for (int epoch = 0; epoch < epochs; ++epoch) {
            // seeded shuffle; stage and epoch stamp the stream
            std::vector<std::size_t> order(train.records.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng shuffle_rng(derive_seed(state.config.seed,
                                        0xe90c * static_cast<std::uint64_t>(stage_no + 1) +
                                            static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = 0; i + 1 < order.size(); ++i)
                std::swap(order[i], order[i + shuffle_rng.below(order.size() - i)]);

            double epoch_loss = 0.0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
                std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
                std::vector<Tensor> grad_acc(trainable.size());
                for (std::size_t t = 0; t < trainable.size(); ++t) grad_acc[t] = Tensor::zeros(trainable[t]->shape);

                for (std::size_t bi = start; bi < end; ++bi) {
                    const SampleRecord& rec = train.records[order[bi]];
                    grad::Graph g;
                    ForwardVars vars = make_vars(g, state, flags);
                    grad::Var probs = class_probabilities(g, state, vars, images[order[bi]], all_classes);

                    std::vector<std::size_t> pos_idx = rec.positives;
                    std::vector<std::size_t> neg_idx;
                    std::vector<bool> is_pos(state.labels.size(), false);
                    for (auto c : pos_idx) is_pos[c] = true;
                    for (std::size_t c = 0; c < state.labels.size(); ++c)
                        if (!is_pos[c]) neg_idx.push_back(c);

                    grad::Var loss = grad::asl(grad::gather(probs, pos_idx),
                                               grad::gather(probs, neg_idx), asl_params);
                    double lv = loss.val().data[0];
                    if (!std::isfinite(lv))
                        throw Error("train_classifier: non-finite loss (stage " + stage_name + ", epoch " +
                                    std::to_string(epoch) + ")");
                    epoch_loss += lv;
                    g.backward(loss);

                    // pull gradients in trainable order
                    std::size_t slot = 0;
                    if (flags.prompts) {
                        for (std::size_t c = 0; c < state.labels.size(); ++c)
                            grad_acc[slot++] += g.grad(vars.pos_ctx[c]);
                        for (std::size_t c = 0; c < state.labels.size(); ++c)
                            grad_acc[slot++] += g.grad(vars.neg_ctx[c]);
                    }
                    if (flags.gff)
                        for (auto& gv : vars.gff_vars)
                            for (auto var : gv.all()) grad_acc[slot++] += g.grad(var);
                    if (flags.encoder)
                        for (auto var : vars.enc_params) grad_acc[slot++] += g.grad(var);
                }

                double inv = 1.0 / static_cast<double>(end - start);
                for (auto& t : grad_acc)
                    for (auto& v : t.data) v *= inv;
                std::vector<const Tensor*> grad_ptrs;
                for (auto& t : grad_acc) grad_ptrs.push_back(&t);
                opt.step(trainable, grad_ptrs);
            }
            sr.epoch_losses.push_back(epoch_loss / static_cast<double>(train.records.size()));
        }

        sr.prompts_changed = state.prompts_fingerprint() != fp_prompts;
        sr.gff_changed = state.gff_fingerprint() != fp_gff;
        sr.encoder_changed = state.encoder_fingerprint() != fp_encoder;
        report.stages.push_back(std::move(sr));
        ++stage_no;
    }

    report.frozen_after = state.frozen_fingerprint();
    return report;
}

// ---- inference ----

inline std::vector<double> predict(const Image& image, ClassifierState& state,
                                   const std::vector<std::size_t>& label_subset) {
    if (label_subset.empty()) throw ValidationError("predict: empty label subset");
    for (auto c : label_subset)
        if (c >= state.labels.size()) throw ValidationError("predict: unknown label index");
    grad::Graph g;
    classifier_detail::TrainFlags flags;  // nothing trainable
    auto vars = classifier_detail::make_vars(g, state, flags);
    grad::Var probs = classifier_detail::class_probabilities(
        g, state, vars, classifier_detail::image_to_tensor(image), label_subset);
    return probs.val().data;
}

// ---- checkpointing ----

namespace classifier_detail {

inline nlohmann::ordered_json tensor_json(const Tensor& t) {
    nlohmann::ordered_json j;
    j["shape"] = t.shape;
    j["data"] = t.data;
    return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("data").get<std::vector<double>>());
}

}  // namespace classifier_detail

inline void save_classifier_checkpoint(const ClassifierState& state, const std::filesystem::path& path) {
    using classifier_detail::tensor_json;
    nlohmann::ordered_json j;
    j["strategy"] = to_string(state.strategy);
    j["tau"] = state.config.tau;
    j["context_length"] = state.config.context_length;
    j["token_dim"] = state.config.token_dim;
    j["embed_dim"] = state.config.embed_dim;
    j["channels"] = state.config.channels;
    j["gff_sites"] = state.config.gff_sites;
    j["gff_heads"] = state.config.gff_heads;
    j["input_resolution"] = state.config.input_resolution;
    j["seed"] = state.config.seed;
    j["labels_seen"] = state.labels.seen_names();
    j["labels_unseen"] = state.labels.unseen_names();

    nlohmann::ordered_json pb = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < state.labels.size(); ++c) {
        nlohmann::ordered_json e;
        e["pos"] = tensor_json(state.prompts.positive_ctx[c]);
        e["neg"] = tensor_json(state.prompts.negative_ctx[c]);
        e["cls"] = tensor_json(state.prompts.class_tokens[c]);
        pb.push_back(e);
    }
    j["prompt_bank"] = pb;

    nlohmann::ordered_json enc;
    for (int b = 0; b < 3; ++b) {
        enc["a_w" + std::to_string(b)] = tensor_json(state.encoder.conv_a_w[static_cast<std::size_t>(b)]);
        enc["a_b" + std::to_string(b)] = tensor_json(state.encoder.conv_a_b[static_cast<std::size_t>(b)]);
        enc["b_w" + std::to_string(b)] = tensor_json(state.encoder.conv_b_w[static_cast<std::size_t>(b)]);
        enc["b_b" + std::to_string(b)] = tensor_json(state.encoder.conv_b_b[static_cast<std::size_t>(b)]);
    }
    enc["proj"] = tensor_json(state.encoder.proj_w);
    j["encoder"] = enc;

    nlohmann::ordered_json gffs = nlohmann::ordered_json::array();
    for (const auto& gp : state.gffs) {
        nlohmann::ordered_json e;
        e["attn_w"] = tensor_json(gp.attn_w);
        e["attn_b"] = tensor_json(gp.attn_b);
        e["gate_w"] = tensor_json(gp.gate_w);
        e["gate_b"] = tensor_json(gp.gate_b);
        e["norm_scale"] = tensor_json(gp.norm_scale);
        e["norm_shift"] = tensor_json(gp.norm_shift);
        e["heads"] = gp.heads;
        e["head_mode"] = gp.head_mode == GffParams::HeadMode::sum ? "sum" : "mean";
        gffs.push_back(e);
    }
    j["gffs"] = gffs;
    j["text_w"] = tensor_json(state.text_w);
    j["text_b"] = tensor_json(state.text_b);

    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint: " + path.string());
    out << j.dump() << "\n";
}

inline ClassifierState load_classifier_checkpoint(const std::filesystem::path& path) {
    using classifier_detail::tensor_from_json;
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("classifier checkpoint: ") + e.what());
    }

    ClassifierConfig cfg;
    cfg.tau = j.at("tau").get<double>();
    cfg.context_length = j.at("context_length").get<int>();
    cfg.token_dim = j.at("token_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.gff_sites = j.at("gff_sites").get<std::vector<int>>();
    cfg.gff_heads = j.at("gff_heads").get<int>();
    cfg.input_resolution = j.at("input_resolution").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    LabelSpace ls(j.at("labels_seen").get<std::vector<std::string>>(),
                  j.at("labels_unseen").get<std::vector<std::string>>());

    ClassifierState state(ls, cfg, strategy_from_string(j.at("strategy").get<std::string>()));
    for (std::size_t c = 0; c < ls.size(); ++c) {
        state.prompts.positive_ctx[c] = tensor_from_json(j.at("prompt_bank")[c].at("pos"));
        state.prompts.negative_ctx[c] = tensor_from_json(j.at("prompt_bank")[c].at("neg"));
        state.prompts.class_tokens[c] = tensor_from_json(j.at("prompt_bank")[c].at("cls"));
    }
    for (int b = 0; b < 3; ++b) {
        state.encoder.conv_a_w[static_cast<std::size_t>(b)] = tensor_from_json(j.at("encoder").at("a_w" + std::to_string(b)));
        state.encoder.conv_a_b[static_cast<std::size_t>(b)] = tensor_from_json(j.at("encoder").at("a_b" + std::to_string(b)));
        state.encoder.conv_b_w[static_cast<std::size_t>(b)] = tensor_from_json(j.at("encoder").at("b_w" + std::to_string(b)));
        state.encoder.conv_b_b[static_cast<std::size_t>(b)] = tensor_from_json(j.at("encoder").at("b_b" + std::to_string(b)));
    }
    state.encoder.proj_w = tensor_from_json(j.at("encoder").at("proj"));
    for (std::size_t i = 0; i < state.gffs.size(); ++i) {
        const auto& e = j.at("gffs")[i];
        state.gffs[i].attn_w = tensor_from_json(e.at("attn_w"));
        state.gffs[i].attn_b = tensor_from_json(e.at("attn_b"));
        state.gffs[i].gate_w = tensor_from_json(e.at("gate_w"));
        state.gffs[i].gate_b = tensor_from_json(e.at("gate_b"));
        state.gffs[i].norm_scale = tensor_from_json(e.at("norm_scale"));
        state.gffs[i].norm_shift = tensor_from_json(e.at("norm_shift"));
    }
    state.text_w = tensor_from_json(j.at("text_w"));
    state.text_b = tensor_from_json(j.at("text_b"));
    return state;
}

}  // namespace forge
