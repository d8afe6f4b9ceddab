#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/asl.hpp"
#include "forge/autograd.hpp"
#include "forge/filter.hpp"
#include "forge/optim.hpp"
#include "forge/prompts.hpp"
#include "forge/toy_stack.hpp"

namespace forge {

// Toy text encoder: bag of category names plus a few hashed word features,
// linearly projected into the generator's latent space. This is the only
// trainable piece of the generation stack.
class ToyTextEncoder {
public:
    static constexpr std::size_t kHashBins = 8;

    ToyTextEncoder(const LabelSpace& labels, std::size_t latent_dim, std::uint64_t seed)
        : labels_(labels), latent_dim_(latent_dim) {
        Rng rng(derive_seed(seed, 0x7e7));
        theta_ = Tensor::randn({latent_dim_, feature_dim()}, rng, 0.02);
        bias_ = Tensor::randn({latent_dim_}, rng, 0.02);
    }

    std::size_t feature_dim() const { return labels_.size() + kHashBins; }
    std::size_t latent_dim() const { return latent_dim_; }

    std::vector<Tensor*> params() { return {&theta_, &bias_}; }
    std::vector<const Tensor*> params() const { return {&theta_, &bias_}; }

    // prompt text -> fixed feature vector; category mentions dominate, the
    // hashed remainder only nudges
    Tensor features(const std::string& text) const {
        Tensor f({feature_dim()});
        for (auto c : categories_in_text(labels_, text)) f.data[c] = 1.0;
        std::string word;
        auto flush = [&]() {
            if (word.size() >= 3) f.data[labels_.size() + hash_str(word) % kHashBins] += 0.25;
            word.clear();
        };
        for (char ch : text) {
            if (std::isalnum(static_cast<unsigned char>(ch)))
                word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            else
                flush();
        }
        flush();
        return f;
    }

    struct Encoded {
        grad::Var latent;
        grad::Var theta;
        grad::Var bias;
    };

    Encoded encode(grad::Graph& g, const std::string& text) const {
        grad::Var th = g.leaf(theta_, /*needs_grad=*/true);
        grad::Var b = g.leaf(bias_, /*needs_grad=*/true);
        grad::Var f = g.constant(features(text));
        return {grad::add(grad::matvec(th, f), b), th, b};
    }

    std::vector<double> encode_plain(const std::string& text) const {
        Tensor f = features(text);
        std::vector<double> z(latent_dim_, 0.0);
        for (std::size_t r = 0; r < latent_dim_; ++r) {
            double s = bias_.data[r];
            for (std::size_t c = 0; c < f.size(); ++c) s += theta_.at(r, c) * f.data[c];
            z[r] = s;
        }
        return z;
    }

    const LabelSpace& labels() const { return labels_; }

private:
    LabelSpace labels_;
    std::size_t latent_dim_;
    Tensor theta_;
    Tensor bias_;
};

// Trainable text encoder plus the bookkeeping the frozen-parameter
// contract needs: a fingerprint of everything that must not move.
struct TunerState {
    ToyTextEncoder encoder;
    AdamW optimizer;
    std::uint64_t frozen_fingerprint = 0;
    long step_count = 0;

    TunerState(const LabelSpace& labels, const ToyDiffusionStack& stack, std::size_t latent_dim, double lr,
               std::uint64_t seed)
        : encoder(labels, latent_dim, seed), optimizer(lr) {
        frozen_fingerprint = fingerprint_tensors(stack.frozen_params());
    }

    std::uint64_t encoder_fingerprint() const { return fingerprint_tensors(encoder.params()); }
};

// One optimization step of the §-style gradient path: prompt -> latent ->
// similarities -> Grouping Softmax -> asymmetric loss -> d/d(text encoder).
inline double tuner_step(const ToyDiffusionStack& stack, const PromptRecord& prompt, TunerState& state,
                         const AslParams& asl_params) {
    // map prompt categories onto positions in the stack's category list
    std::vector<std::size_t> positives;
    for (const auto& name : prompt.categories) {
        std::size_t li = state.encoder.labels().index_of(name);
        const auto& cats = stack.categories();
        auto it = std::find(cats.begin(), cats.end(), li);
        if (it == cats.end())
            throw ValidationError("prompt category '" + name + "' is not generable by this stack");
        positives.push_back(static_cast<std::size_t>(it - cats.begin()));
    }

    grad::Graph g;
    auto enc = state.encoder.encode(g, prompt.augmented_text);
    grad::Var u = stack.similarities(g, enc.latent);
    grad::Var v = grad::grouping_softmax_node(u, positives);
    std::size_t j = positives.size(), k = stack.category_count() - j;
    grad::Var v_p = grad::slice(v, 0, j);
    grad::Var loss = (k > 0) ? grad::asl(v_p, grad::slice(v, j, k), asl_params)
                             : grad::asl(v_p, g.constant(Tensor({0})), asl_params);
    double loss_value = loss.val().data[0];
    if (!std::isfinite(loss_value))
        throw Error("tuner_step: non-finite loss at step " + std::to_string(state.step_count) + " for prompt '" +
                    prompt.id + "'");
    g.backward(loss);

    auto params = state.encoder.params();
    std::vector<const Tensor*> grads = {&g.grad(enc.theta), &g.grad(enc.bias)};
    state.optimizer.step(params, grads);
    ++state.step_count;
    return loss_value;
}

// Wraps a tuned (or untuned) stack + encoder as a generation backend.
class TunedToyGenerator : public TextToImageBackend {
public:
    TunedToyGenerator(const ToyDiffusionStack& stack, const ToyTextEncoder& encoder)
        : stack_(&stack), encoder_(&encoder) {}

    std::vector<int> supported_resolutions() const override { return {32, 48, 64, 96, 128}; }
    bool supports_text_encoder_gradients() const override { return true; }

    Image generate(const std::string& prompt, int resolution, std::uint64_t seed) override {
        check_resolution(*this, resolution);
        std::vector<double> z = encoder_->encode_plain(prompt);
        return stack_->render(z, resolution, seed, stack_->logit_noise(seed));
    }

private:
    const ToyDiffusionStack* stack_;
    const ToyTextEncoder* encoder_;
};

// Fraction of generated images the discriminator accepts. Each sample
// draws its prompt and generation seed from (seed, sample index), so the
// estimate is reproducible and trivially parallel.
inline double qualified_rate(TextToImageBackend& generator, const Discriminator& filter,
                             const std::vector<const PromptRecord*>& prompts, int n_samples, std::uint64_t seed,
                             int resolution = 64) {
    if (n_samples < 1) throw ValidationError("qualified_rate: n_samples must be >= 1");
    if (prompts.empty()) throw ValidationError("qualified_rate: no prompts");
    LabelSpace filter_space({}, filter.label_names);  // names only, for lookup
    int accepted = 0;
    for (int i = 0; i < n_samples; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const PromptRecord& p = *prompts[rng.below(prompts.size())];
        Image img = generator.generate(p.augmented_text, resolution, rng.u64());
        std::vector<std::size_t> positives;
        for (const auto& name : p.categories) positives.push_back(filter_space.index_of(name));
        SimilarityReport rep = filter.score(img, positives);
        if (qualify(rep, filter.policy).accepted) ++accepted;
    }
    return static_cast<double>(accepted) / static_cast<double>(n_samples);
}

// ---- checkpointing ----

inline void save_tuner_checkpoint(const TunerState& state, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["step_count"] = state.step_count;
    j["learning_rate"] = state.optimizer.learning_rate();
    j["frozen_fingerprint"] = state.frozen_fingerprint;
    auto params = state.encoder.params();
    j["theta"] = params[0]->data;
    j["theta_shape"] = params[0]->shape;
    j["bias"] = params[1]->data;
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint: " + path.string());
    out << j.dump(2) << "\n";
}

inline void load_tuner_checkpoint(TunerState& state, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("tuner checkpoint: ") + e.what());
    }
    auto params = state.encoder.params();
    auto shape = j.at("theta_shape").get<std::vector<std::size_t>>();
    if (shape != params[0]->shape) throw ValidationError("checkpoint shape mismatch");
    params[0]->data = j.at("theta").get<std::vector<double>>();
    params[1]->data = j.at("bias").get<std::vector<double>>();
    state.step_count = j.at("step_count").get<long>();
    state.frozen_fingerprint = j.at("frozen_fingerprint").get<std::uint64_t>();
    if (params[0]->data.size() != Tensor::count(shape)) throw ValidationError("checkpoint data truncated");
}

}  // namespace forge
