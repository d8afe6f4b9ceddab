#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "forge/backends.hpp"
#include "forge/error.hpp"
#include "forge/image.hpp"
#include "forge/labels.hpp"
#include "forge/rng.hpp"

namespace forge {

// Deterministic procedural generator/embedder pair. Each category owns a
// distinct (shape, color) glyph; presence of a category in an image is
// decidable by exact pixel count, independent of the embedder. That pixel
// oracle is what lets tests measure the discriminator against ground truth.
class ToyGlyphWorld : public TextToImageBackend, public VisionLanguageEmbedder {
public:
    struct Glyph {
        int shape = 0;
        std::array<std::uint8_t, 3> color{0, 0, 0};
    };

    static constexpr int kShapeCount = 6;

    ToyGlyphWorld(const LabelSpace& labels, int canvas_size = 64, double miss_rate = 0.0,
                  double embed_noise = 0.0, std::uint64_t noise_seed = 0)
        : labels_(labels),
          canvas_(canvas_size),
          miss_rate_(miss_rate),
          embed_noise_(embed_noise),
          noise_seed_(noise_seed) {
        if (canvas_size < 32) throw ValidationError("toy canvas must be at least 32px");
        if (miss_rate < 0.0 || miss_rate > 1.0) throw ValidationError("miss_rate must lie in [0,1]");
        for (std::size_t i = 0; i < labels_.size(); ++i)
            glyphs_.push_back(Glyph{static_cast<int>(i % kShapeCount), palette_color(i)});
        // anchor mass keeps image embeddings away from zero norm and makes
        // cosine scores sensitive to how much of a glyph actually rendered
        anchor_mass_ = 0.5 * static_cast<double>(glyph_area(0));
    }

    const LabelSpace& labels() const { return labels_; }
    const Glyph& glyph(std::size_t category) const { return glyphs_.at(category); }
    int canvas_size() const { return canvas_; }
    double miss_rate() const { return miss_rate_; }
    void set_miss_rate(double r) { miss_rate_ = r; }

    // ---- TextToImageBackend ----

    std::vector<int> supported_resolutions() const override { return {32, 48, 64, 96, 128, canvas_}; }
    bool supports_text_encoder_gradients() const override { return false; }

    Image generate(const std::string& prompt, int resolution, std::uint64_t seed) override {
        check_resolution(*this, resolution);
        std::vector<std::size_t> targets = categories_in_text(prompt);
        Rng rng(derive_seed(seed, hash_str(prompt)));
        Image img(resolution, resolution, 1.0);
        std::vector<bool> slot_used(slot_count(resolution), false);
        for (auto c : targets) {
            if (rng.bernoulli(miss_rate_)) continue;  // the missing-object failure mode
            draw_glyph(img, c, pick_slot(rng, slot_used, resolution), 1.0);
        }
        return img;
    }

    // Renders every requested category (no misses); used to build real and
    // test fixtures where labels must be exact.
    Image render_scene(const std::vector<std::size_t>& categories, Rng& rng, int resolution = 0) const {
        if (resolution == 0) resolution = canvas_;
        Image img(resolution, resolution, 1.0);
        std::vector<bool> slot_used(slot_count(resolution), false);
        for (auto c : categories) draw_glyph(img, c, pick_slot(rng, slot_used, resolution), 1.0);
        return img;
    }

    // ---- VisionLanguageEmbedder ----

    std::size_t embedding_dim() const override { return labels_.size() + 1; }

    std::vector<double> embed_image(const Image& image) override {
        std::vector<double> hist = color_histogram(image);
        hist[0] += anchor_mass_;
        if (embed_noise_ > 0.0) {
            Rng rng(derive_seed(noise_seed_, image_digest(image)));
            for (std::size_t i = 1; i < hist.size(); ++i)
                hist[i] = std::max(0.0, hist[i] + rng.normal() * embed_noise_ * anchor_mass_);
        }
        return normalized(hist);
    }

    std::vector<double> embed_text(const std::string& text) override {
        std::vector<double> v(embedding_dim(), 0.0);
        for (auto c : categories_in_text(text)) v[c + 1] = 1.0;
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v[0] = 1.0;
        return normalized(v);
    }

    // ---- pixel oracle ----

    // Categories visibly present, judged by exact glyph-color pixel counts.
    std::vector<std::size_t> oracle_present(const Image& image, std::size_t min_pixels = 12) const {
        std::vector<double> hist = color_histogram(image);
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < labels_.size(); ++c)
            if (hist[c + 1] >= static_cast<double>(min_pixels)) out.push_back(c);
        return out;
    }

    // painted pixel count of a category's glyph at the reference size
    std::size_t glyph_area(std::size_t category) const {
        std::size_t n = 0;
        int shape = glyphs_.empty() ? 0 : glyphs_[category % glyphs_.size()].shape;
        for (int y = 0; y < kGlyphBox; ++y)
            for (int x = 0; x < kGlyphBox; ++x)
                if (shape_mask(shape, y, x)) ++n;
        return n;
    }

    static constexpr int glyph_box() { return kGlyphBox; }

    bool glyph_mask(std::size_t category, int y, int x) const {
        return shape_mask(glyphs_.at(category).shape, y, x);
    }

    double anchor_mass() const { return anchor_mass_; }

    std::vector<std::size_t> categories_in_text(const std::string& text) const {
        return forge::categories_in_text(labels_, text);
    }

private:
    static constexpr int kGlyphBox = 13;
    static constexpr int kSlotSize = 16;

    static std::string lower(const std::string& s) {
        std::string out = s;
        for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return out;
    }

    static std::array<std::uint8_t, 3> palette_color(std::size_t i) {
        // fixed well-separated palette; extended deterministically if a
        // label space ever exceeds it
        static const std::array<std::array<std::uint8_t, 3>, 24> base = {{
            {230, 25, 75},   {60, 180, 75},   {0, 130, 200},   {245, 130, 48},  {145, 30, 180},  {70, 240, 240},
            {240, 50, 230},  {210, 245, 60},  {250, 190, 190}, {0, 128, 128},   {170, 110, 40},  {128, 0, 0},
            {128, 128, 0},   {0, 0, 128},     {255, 225, 25},  {170, 255, 195}, {128, 128, 128}, {60, 60, 60},
            {220, 120, 180}, {100, 200, 140}, {20, 60, 160},   {200, 80, 20},   {90, 160, 220},  {160, 40, 90},
        }};
        if (i < base.size()) return base[i];
        std::uint64_t s = derive_seed(0x9e3779b9ull, i);
        Rng rng(s);
        return {static_cast<std::uint8_t>(20 + rng.below(200)), static_cast<std::uint8_t>(20 + rng.below(200)),
                static_cast<std::uint8_t>(20 + rng.below(200))};
    }

    static bool shape_mask(int shape, int y, int x) {
        const double cy = (kGlyphBox - 1) / 2.0, cx = (kGlyphBox - 1) / 2.0;
        double dy = y - cy, dx = x - cx;
        switch (shape % kShapeCount) {
            case 0:  // square
                return y >= 1 && y <= kGlyphBox - 2 && x >= 1 && x <= kGlyphBox - 2;
            case 1:  // disc
                return dy * dy + dx * dx <= 6.2 * 6.2;
            case 2:  // diamond
                return std::abs(dy) + std::abs(dx) <= 8.0;
            case 3:  // cross
                return std::abs(dx) <= 2.5 || std::abs(dy) <= 2.5;
            case 4:  // ring
                return dy * dy + dx * dx <= 6.4 * 6.4 && dy * dy + dx * dx >= 2.4 * 2.4;
            case 5:  // triangle
                return y >= 1 && std::abs(dx) <= 0.65 * y;
        }
        return false;
    }

    static int slots_per_side(int resolution) { return std::max(1, resolution / kSlotSize); }
    static std::size_t slot_count(int resolution) {
        return static_cast<std::size_t>(slots_per_side(resolution)) * slots_per_side(resolution);
    }

    static std::size_t pick_slot(Rng& rng, std::vector<bool>& used, int resolution) {
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < used.size(); ++i)
            if (!used[i]) free.push_back(i);
        if (free.empty()) return rng.below(slot_count(resolution));  // crowded canvas, allow overlap
        std::size_t s = free[rng.below(free.size())];
        used[s] = true;
        return s;
    }

    void draw_glyph(Image& img, std::size_t category, std::size_t slot, double alpha) const {
        const Glyph& g = glyphs_.at(category);
        int per_side = slots_per_side(img.width);
        int sy = static_cast<int>(slot) / per_side, sx = static_cast<int>(slot) % per_side;
        int oy = sy * kSlotSize + (kSlotSize - kGlyphBox) / 2;
        int ox = sx * kSlotSize + (kSlotSize - kGlyphBox) / 2;
        double r = g.color[0] / 255.0, gg = g.color[1] / 255.0, b = g.color[2] / 255.0;
        for (int y = 0; y < kGlyphBox; ++y)
            for (int x = 0; x < kGlyphBox; ++x) {
                if (!shape_mask(g.shape, y, x)) continue;
                int py = oy + y, px = ox + x;
                if (py < 0 || py >= img.height || px < 0 || px >= img.width) continue;
                img.at(py, px, 0) = alpha * r + (1.0 - alpha) * img.at(py, px, 0);
                img.at(py, px, 1) = alpha * gg + (1.0 - alpha) * img.at(py, px, 1);
                img.at(py, px, 2) = alpha * b + (1.0 - alpha) * img.at(py, px, 2);
            }
    }

    // hist[0] reserved for the anchor, hist[1+c] = exact-color pixel count
    std::vector<double> color_histogram(const Image& image) const {
        std::vector<double> hist(labels_.size() + 1, 0.0);
        std::map<std::uint32_t, std::size_t> color_to_cat;
        for (std::size_t c = 0; c < glyphs_.size(); ++c) {
            const auto& col = glyphs_[c].color;
            color_to_cat[pack(col[0], col[1], col[2])] = c;
        }
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                std::uint32_t key = pack(Image::to_u8(image.at(y, x, 0)), Image::to_u8(image.at(y, x, 1)),
                                         Image::to_u8(image.at(y, x, 2)));
                auto it = color_to_cat.find(key);
                if (it != color_to_cat.end()) hist[it->second + 1] += 1.0;
            }
        return hist;
    }

    static std::uint32_t pack(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        return (static_cast<std::uint32_t>(r) << 16) | (static_cast<std::uint32_t>(g) << 8) | b;
    }

    static std::vector<double> normalized(std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n == 0.0) throw ValidationError("zero-norm embedding");
        for (auto& x : v) x /= n;
        return v;
    }

    std::uint64_t image_digest(const Image& image) const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (double v : image.rgb) {
            h ^= Image::to_u8(v);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    LabelSpace labels_;
    std::vector<Glyph> glyphs_;
    int canvas_;
    double miss_rate_;
    double embed_noise_;
    std::uint64_t noise_seed_;
    double anchor_mass_;
};

// Deterministic instruction-LLM stand-in: paraphrases the fixed template
// through a bank of scene templates, always mentioning every category.
class ToyInstructionLlm : public InstructionLLMBackend {
public:
    explicit ToyInstructionLlm(const LabelSpace& labels, std::uint64_t seed = 0) : labels_(labels), seed_(seed) {}

    std::vector<std::string> complete(const std::string& instruction, int n) override {
        if (n < 1) throw BackendError(BackendError::Kind::bad_response, "n must be >= 1");
        std::vector<std::size_t> cats = categories_in_text(labels_, instruction);
        if (cats.empty())
            throw BackendError(BackendError::Kind::bad_response, "instruction names no known category");
        std::vector<std::string> names;
        for (auto c : cats) names.push_back(labels_.name(c));

        static const char* kScenes[] = {
            "resting on a wooden table", "under a cloudy evening sky",  "in a sunlit park",
            "beside a quiet river",      "on a busy market street",     "inside a cluttered workshop",
            "near an old stone wall",    "surrounded by autumn leaves", "in the middle of a snowy field",
            "next to a rusty fence",     "at the edge of a harbor",     "under warm lamp light",
        };
        static const char* kLinks[] = {"next to", "close to", "right beside", "sharing the frame with"};

        Rng rng(derive_seed(seed_, hash_str(instruction)));
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) {
            std::string text = "A photo of a " + names[0];
            for (std::size_t t = 1; t < names.size(); ++t)
                text += std::string(" ") + kLinks[rng.below(std::size(kLinks))] + " a " + names[t];
            text += std::string(" ") + kScenes[rng.below(std::size(kScenes))] + ".";
            out.push_back(std::move(text));
        }
        return out;
    }

private:
    LabelSpace labels_;
    std::uint64_t seed_;
};

}  // namespace forge
