#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/backends.hpp"
#include "forge/config.hpp"
#include "forge/filter.hpp"
#include "forge/manifest.hpp"
#include "forge/png_io.hpp"
#include "forge/prompts.hpp"
#include "forge/rng.hpp"

namespace forge {

// Accounting for one rejection-sampling run: how many positives each
// unseen category has collected, what was attempted, what was rejected
// and why.
struct GenerationLedger {
    std::map<std::string, std::size_t> per_category_counts;
    std::size_t attempts = 0;
    std::size_t accepted = 0;
    std::size_t rejected_below_lambda = 0;
    std::size_t rejected_rank_fail = 0;
    std::size_t backend_errors = 0;
    std::uint64_t rng_seed = 0;
    std::size_t attempt_budget = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["per_category_counts"] = per_category_counts;
        j["attempts"] = attempts;
        j["accepted"] = accepted;
        nlohmann::ordered_json rej;
        rej["below_lambda"] = rejected_below_lambda;
        rej["rank_fail"] = rejected_rank_fail;
        rej["backend_error"] = backend_errors;
        j["rejections"] = rej;
        j["rng_seed"] = rng_seed;
        j["attempt_budget"] = attempt_budget;
        return j;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write ledger: " + path.string());
        out << to_json().dump(2) << "\n";
    }
};

// N distinct categories with at least one still-incomplete member; once
// fewer than N remain, completed categories pad the tuple so images keep
// the N-objects regime.
inline std::vector<std::size_t> sample_target_tuple(const std::vector<std::size_t>& remaining,
                                                    const std::vector<std::size_t>& completed, std::size_t n,
                                                    Rng& rng) {
    if (remaining.empty()) throw ValidationError("sample_target_tuple: nothing left to generate");
    if (remaining.size() + completed.size() < n)
        throw ValidationError("sample_target_tuple: not enough categories for tuple size " + std::to_string(n));

    auto draw = [&rng](std::vector<std::size_t> pool, std::size_t count) {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t pick = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[pick]);
            out.push_back(pool[i]);
        }
        return out;
    };

    std::vector<std::size_t> tuple;
    if (remaining.size() >= n) {
        tuple = draw(remaining, n);
    } else {
        tuple = remaining;
        auto pad = draw(completed, n - remaining.size());
        tuple.insert(tuple.end(), pad.begin(), pad.end());
    }
    std::sort(tuple.begin(), tuple.end());
    return tuple;
}

struct BuilderOutput {
    DatasetManifest manifest;
    GenerationLedger ledger;
};

// Algorithm-2 rejection sampling: draw a category tuple and a prompt,
// generate, score, qualify, and credit accepted positives until every
// unseen category owns exactly K. Per-attempt randomness derives from
// (seed, attempt index), so runs replay bit-for-bit.
inline BuilderOutput build_synthetic_dataset(TextToImageBackend& generator, VisionLanguageEmbedder& embedder,
                                             const PromptStore& prompts, const QualificationPolicy& policy,
                                             const LabelSpace& ls, int objects_per_image, int k_per_category,
                                             std::uint64_t seed, int resolution = 64,
                                             const std::filesystem::path& image_dir = {},
                                             std::size_t budget_multiplier = 100) {
    if (k_per_category < 0) throw ValidationError("K must be >= 0");
    if (objects_per_image < 1) throw ValidationError("objects_per_image must be >= 1");
    policy.validate();

    BuilderOutput out;
    out.manifest.label_space = ls;
    out.manifest.split = Split::train;
    out.ledger.rng_seed = seed;

    const std::vector<std::size_t>& unseen = ls.unseen();
    std::vector<std::string> unseen_names = ls.unseen_names();
    for (const auto& n : unseen_names) out.ledger.per_category_counts[n] = 0;
    if (k_per_category == 0 || unseen.empty()) return out;

    const std::size_t n = static_cast<std::size_t>(objects_per_image);
    const std::size_t want = static_cast<std::size_t>(k_per_category);
    std::size_t min_accepts = (unseen.size() * want + n - 1) / n;
    out.ledger.attempt_budget = budget_multiplier * min_accepts;

    if (!image_dir.empty()) std::filesystem::create_directories(image_dir / "images");

    // local index of each unseen category inside the similarity vector
    std::map<std::size_t, std::size_t> local_of;
    for (std::size_t i = 0; i < unseen.size(); ++i) local_of[unseen[i]] = i;

    std::vector<std::size_t> remaining = unseen;
    std::vector<std::size_t> completed;
    std::vector<std::size_t> counts(unseen.size(), 0);

    while (!remaining.empty()) {
        if (out.ledger.attempts >= out.ledger.attempt_budget) {
            std::string deficit;
            for (std::size_t i = 0; i < unseen.size(); ++i)
                if (counts[i] < want)
                    deficit += " " + ls.name(unseen[i]) + "=" + std::to_string(counts[i]) + "/" +
                               std::to_string(want);
            throw Error("attempt_budget_exhausted after " + std::to_string(out.ledger.attempts) +
                        " attempts; deficits:" + deficit);
        }
        Rng rng(derive_seed(seed, out.ledger.attempts));
        ++out.ledger.attempts;

        std::vector<std::size_t> tuple = sample_target_tuple(remaining, completed, n, rng);
        std::vector<std::string> tuple_names;
        for (auto c : tuple) tuple_names.push_back(ls.name(c));
        const PromptRecord& prompt = prompts.sample(tuple_names, rng);

        Image img;
        SimilarityReport rep;
        try {
            img = generator.generate(prompt.augmented_text, resolution, rng.u64());
            std::vector<std::size_t> positives_local;
            for (auto c : tuple) positives_local.push_back(local_of.at(c));
            rep = score_image(embedder, img, unseen_names, positives_local);
        } catch (const BackendError&) {
            ++out.ledger.backend_errors;
            continue;
        }

        QualifyResult verdict = qualify(rep, policy);
        if (!verdict.accepted) {
            bool below = std::any_of(rep.v_p.begin(), rep.v_p.end(),
                                     [&](double v) { return !(v > policy.lambda_threshold); });
            if (below)
                ++out.ledger.rejected_below_lambda;
            else
                ++out.ledger.rejected_rank_fail;
            continue;
        }

        ++out.ledger.accepted;
        SampleRecord rec;
        rec.provenance = Provenance::synthetic;
        rec.prompt_id = prompt.id;
        rec.scores = rep;
        rec.accepted = true;
        for (auto local : verdict.final_positives) rec.positives.push_back(unseen[local]);
        std::sort(rec.positives.begin(), rec.positives.end());

        char name[32];
        std::snprintf(name, sizeof(name), "images/%06zu.png", out.manifest.records.size());
        rec.image_ref = name;
        if (!image_dir.empty()) png::write_file(img, image_dir / rec.image_ref);
        rec.image = std::move(img);
        out.manifest.records.push_back(std::move(rec));

        // credit accepted positives; completed categories stay at K
        for (auto local : verdict.final_positives) {
            if (counts[local] >= want) continue;
            if (++counts[local] == want) {
                std::size_t cat = unseen[local];
                remaining.erase(std::remove(remaining.begin(), remaining.end(), cat), remaining.end());
                completed.push_back(cat);
                std::sort(completed.begin(), completed.end());
            }
        }
    }

    for (std::size_t i = 0; i < unseen.size(); ++i)
        out.ledger.per_category_counts[ls.name(unseen[i])] = counts[i];
    return out;
}

// Re-run the discriminator over a built manifest; accepted records must
// keep qualifying (the idempotence check used by tests and the acceptance
// suite).
inline double refilter_acceptance_fraction(const DatasetManifest& manifest, VisionLanguageEmbedder& embedder,
                                           const QualificationPolicy& policy,
                                           const std::filesystem::path& image_root = {}) {
    const LabelSpace& ls = manifest.label_space;
    std::vector<std::string> unseen_names = ls.unseen_names();
    std::map<std::size_t, std::size_t> local_of;
    for (std::size_t i = 0; i < ls.unseen().size(); ++i) local_of[ls.unseen()[i]] = i;

    std::size_t total = 0, ok = 0;
    for (const auto& rec : manifest.records) {
        if (rec.provenance != Provenance::synthetic) continue;
        ++total;
        Image img = rec.image ? *rec.image : png::read_file(image_root / rec.image_ref);
        std::vector<std::size_t> positives_local;
        for (auto c : rec.positives) positives_local.push_back(local_of.at(c));
        SimilarityReport rep = score_image(embedder, img, unseen_names, positives_local);
        if (qualify(rep, policy).accepted) ++ok;
    }
    return total == 0 ? 1.0 : static_cast<double>(ok) / static_cast<double>(total);
}

// Algorithm 1 line 4.
inline DatasetManifest finalize_training_set(const DatasetManifest& real, const DatasetManifest& synthetic) {
    return merge_datasets(real, synthetic);
}

}  // namespace forge
