#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "forge/builder.hpp"
#include "forge/toy_world.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

struct Rig {
    ToyGlyphWorld world;
    PromptStore store;
    QualificationPolicy policy;

    explicit Rig(double miss_rate = 0.0)
        : world(LabelSpace({"cat", "dog", "bus"}, {"zebra", "kite", "drum"}), 64, miss_rate) {
        ToyInstructionLlm llm(world.labels(), 21);
        store = build_prompt_store(llm, world.labels(), 2, 3);
        policy.lambda_threshold = 0.5;
    }
};

}  // namespace

TEST_CASE("sample_target_tuple padding and basic draws") {
    Rng rng(3);
    SECTION("plenty remaining: all members come from remaining") {
        std::vector<std::size_t> remaining = {3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
        auto t = sample_target_tuple(remaining, {}, 2, rng);
        CHECK(t.size() == 2);
        CHECK(t[0] != t[1]);
        for (auto c : t) CHECK(std::find(remaining.begin(), remaining.end(), c) != remaining.end());
    }
    SECTION("one remaining pads from completed") {
        auto t = sample_target_tuple({3}, {4, 5}, 2, rng);
        REQUIRE(t.size() == 2);
        CHECK(std::find(t.begin(), t.end(), 3) != t.end());
        CHECK((std::find(t.begin(), t.end(), 4) != t.end() || std::find(t.begin(), t.end(), 5) != t.end()));
    }
    SECTION("singleton tuples") {
        auto t = sample_target_tuple({7, 9}, {}, 1, rng);
        CHECK(t.size() == 1);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(sample_target_tuple({}, {1}, 1, rng), ValidationError);
        CHECK_THROWS_AS(sample_target_tuple({1}, {}, 3, rng), ValidationError);
    }
}

TEST_CASE("builder reaches exact per-category quotas with no misses") {
    Rig rig(0.0);
    auto out = build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 5, 77);
    for (const auto& [name, count] : out.ledger.per_category_counts) CHECK(count == 5);
    CHECK(out.manifest.records.size() >= 8);  // ceil(3*5/2)
    CHECK(out.ledger.accepted == out.manifest.records.size());
    CHECK(out.ledger.attempts >= out.ledger.accepted);

    // every record: synthetic, prompt id resolvable, scores attached
    for (const auto& r : out.manifest.records) {
        CHECK(r.provenance == Provenance::synthetic);
        REQUIRE(r.prompt_id.has_value());
        CHECK(rig.store.has_id(*r.prompt_id));
        CHECK(r.scores.has_value());
        REQUIRE(r.image.has_value());
    }
}

TEST_CASE("K=0 produces an empty manifest and zero attempts") {
    Rig rig;
    auto out = build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 0, 77);
    CHECK(out.manifest.records.empty());
    CHECK(out.ledger.attempts == 0);
    for (const auto& [name, count] : out.ledger.per_category_counts) CHECK(count == 0);
}

TEST_CASE("builder terminates under misses and keeps quotas exact") {
    Rig rig(0.3);
    auto out = build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 5, 123);
    for (const auto& [name, count] : out.ledger.per_category_counts) CHECK(count == 5);
    CHECK(out.ledger.rejected_below_lambda > 0);  // misses were caught

    SECTION("post-hoc re-filtering accepts every record") {
        CHECK(refilter_acceptance_fraction(out.manifest, rig.world, rig.policy) == 1.0);
    }

    SECTION("pixel oracle agrees with stored positives") {
        std::size_t agree = 0, total = 0;
        for (const auto& r : out.manifest.records) {
            ++total;
            if (rig.world.oracle_present(*r.image) == r.positives) ++agree;
        }
        CHECK(agree == total);
    }
}

TEST_CASE("acceptance fraction follows the both-targets-present binomial") {
    Rig rig(0.5);
    // K large enough to take >= 2000 attempts at ~25% acceptance
    auto out = build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 400, 9);
    double rate = static_cast<double>(out.ledger.accepted) / static_cast<double>(out.ledger.attempts);
    CHECK(out.ledger.attempts >= 2000);
    // 3 sigma of a Bernoulli(0.25) at the observed n
    double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(out.ledger.attempts));
    CHECK(std::abs(rate - 0.25) < 3.0 * sigma + 0.01);
}

TEST_CASE("attempt budget exhaustion carries a deficit report") {
    Rig rig(1.0);  // nothing ever qualifies
    CHECK_THROWS_WITH(build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2,
                                              2, 5, 64, {}, /*budget_multiplier=*/3),
                      Catch::Matchers::ContainsSubstring("attempt_budget_exhausted") &&
                          Catch::Matchers::ContainsSubstring("zebra"));
}

TEST_CASE("fixed seed reproduces manifest and ledger byte-for-byte") {
    auto dir = fs::temp_directory_path() / "forge_builder_test";
    fs::create_directories(dir);

    auto run = [&](const fs::path& sub) {
        Rig rig(0.3);
        auto out =
            build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 4, 2024);
        fs::create_directories(dir / sub);
        save_manifest(out.manifest, dir / sub / "manifest.jsonl");
        out.ledger.save(dir / sub / "ledger.json");
    };
    run("a");
    run("b");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl"));
    CHECK(slurp(dir / "a" / "ledger.json") == slurp(dir / "b" / "ledger.json"));
    CHECK(!slurp(dir / "a" / "ledger.json").empty());
}

TEST_CASE("builder writes PNGs when an image directory is given") {
    Rig rig;
    auto dir = fs::temp_directory_path() / "forge_builder_png";
    fs::remove_all(dir);
    auto out =
        build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 2, 3, 64, dir);
    for (const auto& r : out.manifest.records) {
        CHECK(fs::exists(dir / r.image_ref));
        auto img = png::read_file(dir / r.image_ref);
        CHECK(rig.world.oracle_present(img) == r.positives);
    }
    // re-filter from disk instead of memory
    DatasetManifest stripped = out.manifest;
    for (auto& r : stripped.records) r.image.reset();
    CHECK(refilter_acceptance_fraction(stripped, rig.world, rig.policy, dir) == 1.0);
}

TEST_CASE("finalize_training_set merges real and synthetic") {
    Rig rig;
    auto out = build_synthetic_dataset(rig.world, rig.world, rig.store, rig.policy, rig.world.labels(), 2, 2, 3);
    DatasetManifest real;
    real.label_space = rig.world.labels();
    real.records.push_back({"r.png", std::nullopt, {0}, Provenance::real, std::nullopt, std::nullopt, std::nullopt});
    auto merged = finalize_training_set(real, out.manifest);
    CHECK(merged.records.size() == 1 + out.manifest.records.size());
}
