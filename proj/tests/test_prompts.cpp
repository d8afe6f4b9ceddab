#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "forge/prompts.hpp"

using namespace forge;

namespace {

// Scripted LLM double: replays a queue of responses, then echoes the fixed
// template forever.
class ScriptedLlm : public InstructionLLMBackend {
public:
    explicit ScriptedLlm(std::vector<std::vector<std::string>> script = {}) : script_(std::move(script)) {}

    std::vector<std::string> complete(const std::string& instruction, int n) override {
        last_instruction = instruction;
        ++calls;
        if (cursor < script_.size()) {
            auto out = script_[cursor++];
            out.resize(static_cast<std::size_t>(n), out.empty() ? "" : out.back());
            return out;
        }
        // echo mode: derive the fixed template back out of the instruction
        auto from = instruction.find('"');
        auto to = instruction.find('"', from + 1);
        std::string tmpl = instruction.substr(from + 1, to - from - 1);
        return std::vector<std::string>(static_cast<std::size_t>(n), tmpl);
    }

    std::string last_instruction;
    int calls = 0;

private:
    std::vector<std::vector<std::string>> script_;
    std::size_t cursor = 0;
};

}  // namespace

TEST_CASE("fixed template matches the reference phrasing") {
    CHECK(fill_fixed_template({"cat", "bus"}) == "A photo of a cat next to a bus.");
    CHECK(fill_fixed_template({"dog"}) == "A photo of a dog.");
    CHECK(fill_fixed_template({"a", "b", "c"}) == "A photo of a a next to a b next to a c.");
    CHECK_THROWS_AS(fill_fixed_template({}), ValidationError);
}

TEST_CASE("icl instruction embeds categories, template, and count") {
    std::string ins = build_icl_instruction({"cat", "bus"}, 10);
    CHECK(ins.find("cat") != std::string::npos);
    CHECK(ins.find("bus") != std::string::npos);
    CHECK(ins.find("10") != std::string::npos);
    CHECK(ins.find("A photo of a cat next to a bus.") != std::string::npos);

    std::string one = build_icl_instruction({"dog"}, 1);
    CHECK(one.find(" 1 ") != std::string::npos);

    std::string punct = build_icl_instruction({"traffic light", "car"}, 3);
    CHECK(punct.find("traffic light") != std::string::npos);
    CHECK_THROWS_AS(build_icl_instruction({"x"}, 0), ValidationError);
}

TEST_CASE("augment_prompts keeps echo-mock outputs verbatim") {
    ScriptedLlm llm;
    auto records = augment_prompts(llm, {"cat", "bus"}, 5);
    REQUIRE(records.size() == 5);
    for (const auto& r : records) {
        CHECK(r.source == PromptRecord::Source::llm_augmented);
        CHECK(r.augmented_text == "A photo of a cat next to a bus.");
        CHECK(r.fixed_template_text == "A photo of a cat next to a bus.");
    }
}

TEST_CASE("augment_prompts drops outputs missing a category and retries") {
    ScriptedLlm llm(std::vector<std::vector<std::string>>{{"A cat sits alone on the street.", "A cat sleeping near a bus stop."}});
    auto records = augment_prompts(llm, {"cat", "bus"}, 2);
    REQUIRE(records.size() == 2);
    // first scripted output lacks "bus" and must be replaced by a retry
    CHECK(records[0].augmented_text == "A cat sleeping near a bus stop.");
    CHECK(llm.calls >= 2);
}

TEST_CASE("augment_prompts errors out once the retry budget is spent") {
    std::vector<std::vector<std::string>> bad(10, {"no mention of anything"});
    ScriptedLlm llm(bad);
    CHECK_THROWS_WITH(augment_prompts(llm, {"cat", "bus"}, 2, 3),
                      Catch::Matchers::ContainsSubstring("insufficient_valid_prompts"));
}

TEST_CASE("scripted augmentation reproduces the reference example") {
    ScriptedLlm llm(std::vector<std::vector<std::string>>{{"A cat perched on top of a bus next to a bustling city street.",
                      "A cat watching pigeons from a bus window."}});
    auto records = augment_prompts(llm, {"cat", "bus"}, 2);
    CHECK(records[0].augmented_text == "A cat perched on top of a bus next to a bustling city street.");
}

TEST_CASE("category tuple enumeration counts and determinism") {
    std::vector<std::string> unseen;
    for (int i = 0; i < 17; ++i) unseen.push_back("u" + std::to_string(i));
    LabelSpace ls({"s0", "s1"}, unseen);

    auto pairs = enumerate_category_tuples(ls, 2);
    CHECK(pairs.size() == 136);  // C(17,2)
    auto again = enumerate_category_tuples(ls, 2);
    CHECK(pairs == again);

    auto singletons = enumerate_category_tuples(ls, 1);
    CHECK(singletons.size() == 17);

    LabelSpace tiny({"s"}, {"a", "b"});
    CHECK(enumerate_category_tuples(tiny, 2).size() == 1);
    CHECK_THROWS_AS(enumerate_category_tuples(tiny, 3), ValidationError);
}

TEST_CASE("prompt store: save/load round-trip and sampling") {
    LabelSpace ls({"s"}, {"cat", "bus", "dog"});
    ScriptedLlm llm;
    auto store = build_prompt_store(llm, ls, 2, 3);
    // 3 tuples x (1 fixed + 3 augmented)
    CHECK(store.size() == 12);

    auto dir = std::filesystem::temp_directory_path() / "forge_prompts_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "prompts.jsonl";
    store.save(path);
    auto reloaded = PromptStore::load(path);
    REQUIRE(reloaded.size() == store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        CHECK(reloaded.records()[i].id == store.records()[i].id);
        CHECK(reloaded.records()[i].augmented_text == store.records()[i].augmented_text);
    }

    // deterministic rebuild
    ScriptedLlm llm2;
    auto store2 = build_prompt_store(llm2, ls, 2, 3);
    for (std::size_t i = 0; i < store.size(); ++i) CHECK(store2.records()[i].id == store.records()[i].id);

    // every unseen pair is covered before generation starts
    for (const auto& tuple : enumerate_category_tuples(ls, 2)) {
        std::vector<std::string> names{ls.name(tuple[0]), ls.name(tuple[1])};
        CHECK(!store.for_categories(names).empty());
    }

    // sampling is uniform over the tuple's records: all four ids show up
    Rng rng(5);
    std::set<std::string> seen_ids;
    for (int i = 0; i < 200; ++i) seen_ids.insert(store.sample({"cat", "bus"}, rng).id);
    CHECK(seen_ids.size() == 4);

    // order-insensitive lookup
    CHECK(store.for_categories({"bus", "cat"}).size() == 4);
    CHECK_THROWS_AS(store.sample({"cat", "ghost"}, rng), ValidationError);
}

TEST_CASE("prompt store rejects records violating containment") {
    PromptStore store;
    PromptRecord bad;
    bad.id = "x";
    bad.categories = {"cat", "bus"};
    bad.fixed_template_text = "A photo of a cat next to a bus.";
    bad.augmented_text = "A lonely cat.";
    CHECK_THROWS_AS(store.add(bad), ValidationError);
}
