#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "forge/manifest.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "forge_core_data_test";
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

LabelSpace toy_labels() {
    return LabelSpace({"cat", "dog", "bus"}, {"zebra", "kite"});
}

}  // namespace

TEST_CASE("load_manifest accepts a minimal well-formed JSONL") {
    auto dir = temp_dir();
    auto path = dir / "ok.jsonl";
    write_text(path,
               R"({"image": "a.png", "positives": ["cat"], "provenance": "real", "prompt_id": null})"
               "\n"
               R"({"image": "b.png", "positives": ["dog", "bus"], "provenance": "real", "prompt_id": null})"
               "\n"
               R"({"image": "c.png", "positives": ["zebra"], "provenance": "synthetic", "prompt_id": "p1"})"
               "\n");
    auto m = load_manifest(path, toy_labels());
    REQUIRE(m.records.size() == 3);
    CHECK(m.records[0].positives == std::vector<std::size_t>{0});
    CHECK(m.records[1].positives.size() == 2);
    CHECK(m.records[2].provenance == Provenance::synthetic);
    CHECK(m.records[2].prompt_id == "p1");
}

TEST_CASE("load_manifest rejects split contamination with the offending class") {
    auto dir = temp_dir();
    auto path = dir / "contaminated.jsonl";
    write_text(path, R"({"image": "a.png", "positives": ["zebra"], "provenance": "real", "prompt_id": null})"
                     "\n");
    CHECK_THROWS_WITH(load_manifest(path, toy_labels()),
                      Catch::Matchers::ContainsSubstring("split contamination") &&
                          Catch::Matchers::ContainsSubstring("zebra"));
}

TEST_CASE("load_manifest reports parse errors with line numbers") {
    auto dir = temp_dir();
    auto path = dir / "broken.jsonl";
    write_text(path,
               R"({"image": "a.png", "positives": ["cat"], "provenance": "real", "prompt_id": null})"
               "\n{nope\n");
    CHECK_THROWS_WITH(load_manifest(path, toy_labels()), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("load_manifest rejects unknown categories, empty positives, orphan synthetics") {
    auto dir = temp_dir();
    auto ls = toy_labels();

    auto path = dir / "unknown.jsonl";
    write_text(path, R"({"image": "a.png", "positives": ["wolf"], "provenance": "real", "prompt_id": null})"
                     "\n");
    CHECK_THROWS_WITH(load_manifest(path, ls), Catch::Matchers::ContainsSubstring("wolf"));

    write_text(path, R"({"image": "a.png", "positives": [], "provenance": "real", "prompt_id": null})"
                     "\n");
    CHECK_THROWS_AS(load_manifest(path, ls), ValidationError);

    write_text(path, R"({"image": "a.png", "positives": ["zebra"], "provenance": "synthetic", "prompt_id": null})"
                     "\n");
    CHECK_THROWS_WITH(load_manifest(path, ls), Catch::Matchers::ContainsSubstring("prompt_id"));
}

TEST_CASE("COCO-style label split sizes") {
    std::vector<std::string> seen, unseen;
    for (int i = 0; i < 48; ++i) seen.push_back("seen_" + std::to_string(i));
    for (int i = 0; i < 17; ++i) unseen.push_back("unseen_" + std::to_string(i));
    LabelSpace ls(seen, unseen);
    CHECK(ls.seen().size() == 48);
    CHECK(ls.unseen().size() == 17);
    CHECK(ls.size() == 65);
}

TEST_CASE("label space invariants") {
    CHECK_THROWS_AS(LabelSpace({"cat", "cat"}, {"dog"}), ValidationError);
    CHECK_THROWS_AS(LabelSpace({""}, {"dog"}), ValidationError);
    LabelSpace ls = toy_labels();
    CHECK(ls.is_seen(0));
    CHECK(ls.is_unseen(3));
    CHECK(ls.index_of("kite") == 4);
    CHECK_THROWS_AS(ls.index_of("ghost"), ValidationError);
}

TEST_CASE("manifest round-trip is byte-identical") {
    auto dir = temp_dir();
    auto ls = toy_labels();
    DatasetManifest m;
    m.label_space = ls;
    SampleRecord r1{"img/a.png", std::nullopt, {0, 2}, Provenance::real, std::nullopt, std::nullopt, std::nullopt};
    SampleRecord r2{"img/b.png", std::nullopt, {3}, Provenance::synthetic, std::string("p7"), std::nullopt,
                    std::nullopt};
    r2.scores = SimilarityReport{{0.7, 0.01, -0.2, 0.9, 0.1}, {3}, {0.81}, {0.04, 0.05, 0.02, 0.08}};
    r2.accepted = true;
    m.records = {r1, r2};

    auto p1 = dir / "round1.jsonl";
    auto p2 = dir / "round2.jsonl";
    save_manifest(m, p1);
    auto reloaded = load_manifest(p1, ls);
    save_manifest(reloaded, p2);

    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
}

TEST_CASE("merge_datasets concatenates and preserves records") {
    auto ls = toy_labels();
    DatasetManifest real;
    real.label_space = ls;
    for (int i = 0; i < 100; ++i)
        real.records.push_back(
            {"r" + std::to_string(i) + ".png", std::nullopt, {static_cast<std::size_t>(i % 3)}, Provenance::real,
             std::nullopt, std::nullopt, std::nullopt});

    DatasetManifest empty;
    empty.label_space = ls;

    SECTION("empty merge is identity") {
        auto merged = merge_datasets(real, empty);
        CHECK(merged.records.size() == 100);
        for (const auto& r : merged.records) CHECK(r.provenance == Provenance::real);
    }

    SECTION("counts are additive and per-category recounts match") {
        DatasetManifest synth;
        synth.label_space = ls;
        for (int i = 0; i < 40; ++i)
            synth.records.push_back({"s" + std::to_string(i) + ".png", std::nullopt,
                                     {static_cast<std::size_t>(3 + i % 2)}, Provenance::synthetic,
                                     std::string("p"), std::nullopt, std::nullopt});
        auto merged = merge_datasets(real, synth);
        CHECK(merged.records.size() == 140);

        auto want = real.positive_counts();
        auto add = synth.positive_counts();
        for (std::size_t c = 0; c < want.size(); ++c) want[c] += add[c];
        CHECK(merged.positive_counts() == want);
    }

    SECTION("label-space mismatch is rejected") {
        DatasetManifest other;
        other.label_space = LabelSpace({"cat"}, {"zebra"});
        CHECK_THROWS_AS(merge_datasets(real, other), ValidationError);
    }

    SECTION("merge is associative up to record order and never edits records") {
        DatasetManifest synth;
        synth.label_space = ls;
        synth.records.push_back({"s.png", std::nullopt, {4}, Provenance::synthetic, std::string("p"),
                                 std::nullopt, std::nullopt});
        auto ab_c = merge_datasets(merge_datasets(real, synth), empty);
        auto a_bc = merge_datasets(real, merge_datasets(synth, empty));
        REQUIRE(ab_c.records.size() == a_bc.records.size());
        for (std::size_t i = 0; i < ab_c.records.size(); ++i) {
            CHECK(ab_c.records[i].image_ref == a_bc.records[i].image_ref);
            CHECK(ab_c.records[i].positives == a_bc.records[i].positives);
        }
    }
}

TEST_CASE("toy fixture: unseen-positive recount over a merged dataset") {
    // 2 unseen classes x K=5 synthetic records merged with 10 real records
    auto ls = toy_labels();
    DatasetManifest real;
    real.label_space = ls;
    for (int i = 0; i < 10; ++i)
        real.records.push_back({"r.png", std::nullopt, {static_cast<std::size_t>(i % 3)}, Provenance::real,
                                std::nullopt, std::nullopt, std::nullopt});
    DatasetManifest synth;
    synth.label_space = ls;
    for (std::size_t c : {std::size_t{3}, std::size_t{4}})
        for (int i = 0; i < 5; ++i)
            synth.records.push_back({"s.png", std::nullopt, {c}, Provenance::synthetic, std::string("p"),
                                     std::nullopt, std::nullopt});

    auto merged = merge_datasets(real, synth);
    std::size_t unseen_positives = 0;
    for (const auto& r : merged.records)
        for (auto c : r.positives)
            if (merged.label_space.is_unseen(c)) ++unseen_positives;
    CHECK(unseen_positives == 10);
}
