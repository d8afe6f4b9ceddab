#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "forge/asl.hpp"
#include "forge/autograd.hpp"
#include "forge/backends.hpp"
#include "forge/error.hpp"
#include "forge/rng.hpp"
#include "forge/toy_world.hpp"

namespace forge {

// Desk-scale realization of the generator's internal gradient path:
// prompt -> conditional latent -> rendered glyph intensities -> cosine
// similarities. The intensity head is the frozen "generator"; only the
// text encoder that produces the latent is meant to train.
//
// Rendering paints a fraction of each glyph's pixels equal to the
// category's intensity, so the pixel-counting embedder of ToyGlyphWorld
// sees (up to rounding) the same similarities the analytic path computes.
class ToyDiffusionStack {
public:
    // categories: the unseen classes this stack can draw, in world order
    ToyDiffusionStack(const ToyGlyphWorld& world, std::vector<std::size_t> categories, std::size_t latent_dim,
                      std::uint64_t seed, double noise_scale = 0.0, double intensity_bias = -1.2)
        : world_(&world),
          categories_(std::move(categories)),
          latent_dim_(latent_dim),
          noise_scale_(noise_scale) {
        Rng rng(derive_seed(seed, 0xd1f));
        weights_ = Tensor::randn({categories_.size(), latent_dim_}, rng, 1.0 / std::sqrt(static_cast<double>(latent_dim_)));
        bias_ = Tensor::full({categories_.size()}, intensity_bias);
        areas_.resize(categories_.size());
        for (std::size_t i = 0; i < categories_.size(); ++i)
            areas_[i] = static_cast<double>(world.glyph_area(categories_[i]));
    }

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t category_count() const { return categories_.size(); }
    const std::vector<std::size_t>& categories() const { return categories_; }
    double noise_scale() const { return noise_scale_; }
    void set_noise_scale(double s) { noise_scale_ = s; }

    // non-text-encoder parameters; their fingerprint must survive tuning
    std::vector<const Tensor*> frozen_params() const { return {&weights_, &bias_}; }

    // ---- differentiable path ----

    // per-category cosine similarity as an autograd Var over the latent
    grad::Var similarities(grad::Graph& g, grad::Var latent, const std::vector<double>& logit_noise = {}) const {
        if (latent.val().size() != latent_dim_)
            throw ValidationError("latent dimension mismatch: expected " + std::to_string(latent_dim_));
        grad::Var w = g.constant(weights_);
        grad::Var b = g.constant(bias_);
        grad::Var logits = grad::add(grad::matvec(w, latent), b);
        if (!logit_noise.empty()) {
            if (logit_noise.size() != categories_.size()) throw ValidationError("logit noise size mismatch");
            logits = grad::add(logits, g.constant(Tensor::vector(logit_noise)));
        }
        grad::Var alpha = grad::sigmoid(logits);
        grad::Var masses = grad::mul(alpha, g.constant(Tensor::vector(areas_)));
        // ||hist||^2 = anchor^2 + sum masses^2; u_c = mass_c / ||hist||
        double anchor = world_->anchor_mass();
        grad::Var norm = grad::vsqrt(grad::sadd(grad::dot(masses, masses), anchor * anchor));
        return grad::div_scalar(masses, norm);
    }

    std::vector<double> similarities_plain(const std::vector<double>& latent,
                                           const std::vector<double>& logit_noise = {}) const {
        grad::Graph g;
        grad::Var u = similarities(g, g.constant(Tensor::vector(latent)), logit_noise);
        return u.val().data;
    }

    // what the zero latent yields: similarities determined purely by the
    // intensity bias
    std::vector<double> bias_similarities() const {
        return similarities_plain(std::vector<double>(latent_dim_, 0.0));
    }

    std::vector<double> intensities(const std::vector<double>& latent,
                                    const std::vector<double>& logit_noise = {}) const {
        if (latent.size() != latent_dim_) throw ValidationError("latent dimension mismatch");
        std::vector<double> a(categories_.size());
        for (std::size_t c = 0; c < categories_.size(); ++c) {
            double logit = bias_.data[c];
            for (std::size_t i = 0; i < latent_dim_; ++i) logit += weights_.at(c, i) * latent[i];
            if (!logit_noise.empty()) logit += logit_noise[c];
            a[c] = 1.0 / (1.0 + std::exp(-logit));
        }
        return a;
    }

    // per-generation intensity perturbation, deterministic in the seed
    std::vector<double> logit_noise(std::uint64_t seed) const {
        std::vector<double> n(categories_.size(), 0.0);
        if (noise_scale_ == 0.0) return n;
        Rng rng(derive_seed(seed, 0x5eed));
        for (auto& v : n) v = rng.normal() * noise_scale_;
        return n;
    }

    // ---- rendering ----

    // paints round(intensity * area) pixels of each glyph, placement driven
    // by the seed; the pixel oracle and embedder see partial glyphs
    Image render(const std::vector<double>& latent, int resolution, std::uint64_t seed,
                 const std::vector<double>& logit_noise = {}) const {
        std::vector<double> alpha = intensities(latent, logit_noise);
        Rng rng(derive_seed(seed, 0x9e4));
        Image img(resolution, resolution, 1.0);
        const int slot = 16;
        int per_side = std::max(1, resolution / slot);
        std::vector<bool> used(static_cast<std::size_t>(per_side) * per_side, false);
        for (std::size_t c = 0; c < categories_.size(); ++c) {
            std::size_t budget = static_cast<std::size_t>(std::lround(alpha[c] * areas_[c]));
            if (budget == 0) continue;
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < used.size(); ++i)
                if (!used[i]) free.push_back(i);
            std::size_t pick = free.empty() ? rng.below(used.size()) : free[rng.below(free.size())];
            if (!free.empty()) used[pick] = true;
            paint_partial_glyph(img, categories_[c], pick, per_side, budget);
        }
        return img;
    }

private:
    void paint_partial_glyph(Image& img, std::size_t category, std::size_t slot_idx, int per_side,
                             std::size_t budget) const {
        const auto& g = world_->glyph(category);
        const int box = ToyGlyphWorld::glyph_box(), slot = 16;
        int sy = static_cast<int>(slot_idx) / per_side, sx = static_cast<int>(slot_idx) % per_side;
        int oy = sy * slot + (slot - box) / 2, ox = sx * slot + (slot - box) / 2;
        double r = g.color[0] / 255.0, gg = g.color[1] / 255.0, b = g.color[2] / 255.0;
        std::size_t painted = 0;
        for (int y = 0; y < box && painted < budget; ++y)
            for (int x = 0; x < box && painted < budget; ++x) {
                if (!world_->glyph_mask(category, y, x)) continue;
                int py = oy + y, px = ox + x;
                if (py < 0 || py >= img.height || px < 0 || px >= img.width) continue;
                img.set_pixel(py, px, r, gg, b);
                ++painted;
            }
    }

    const ToyGlyphWorld* world_;
    std::vector<std::size_t> categories_;
    std::size_t latent_dim_;
    double noise_scale_;
    Tensor weights_;
    Tensor bias_;
    std::vector<double> areas_;
};

}  // namespace forge
