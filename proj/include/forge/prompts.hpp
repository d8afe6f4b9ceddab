#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/backends.hpp"
#include "forge/error.hpp"
#include "forge/labels.hpp"
#include "forge/rng.hpp"

namespace forge {

// An augmented text prompt bound to a target category tuple. Every category
// name must appear (case-insensitive) in augmented_text; outputs violating
// that are never stored.
struct PromptRecord {
    std::string id;
    std::vector<std::string> categories;
    std::string fixed_template_text;
    std::string augmented_text;
    enum class Source { fixed, llm_augmented } source = Source::fixed;
};

inline const char* to_string(PromptRecord::Source s) {
    return s == PromptRecord::Source::fixed ? "fixed" : "llm_augmented";
}

// "A photo of a {c1} next to a {c2}." — chained with "next to a" for three
// or more categories.
inline std::string fill_fixed_template(const std::vector<std::string>& categories) {
    if (categories.empty()) throw ValidationError("fixed template needs at least one category");
    std::string out = "A photo of a " + categories[0];
    for (std::size_t i = 1; i < categories.size(); ++i) out += " next to a " + categories[i];
    out += ".";
    return out;
}

inline bool contains_ci(const std::string& haystack, const std::string& needle) {
    auto lower = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    return lower(haystack).find(lower(needle)) != std::string::npos;
}

inline bool prompt_mentions_all(const std::string& text, const std::vector<std::string>& categories) {
    return std::all_of(categories.begin(), categories.end(),
                       [&](const std::string& c) { return contains_ci(text, c); });
}

// In-context instruction handed to the LLM: the fixed template is the
// contextual example, the request asks for n_prompts variants that each
// mention every target object.
inline std::string build_icl_instruction(const std::vector<std::string>& categories, int n_prompts) {
    if (n_prompts < 1) throw ValidationError("n_prompts must be >= 1");
    std::string object_list;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        if (i > 0) object_list += (i + 1 == categories.size()) ? " and " : ", ";
        object_list += "\"" + categories[i] + "\"";
    }
    std::ostringstream out;
    out << "You write prompts for a text-to-image model. Here is a simple example prompt: \""
        << fill_fixed_template(categories) << "\" Rewrite it into " << n_prompts
        << (n_prompts == 1 ? " richer scene description" : " different richer scene descriptions")
        << " of about one sentence each. Every description must explicitly mention " << object_list
        << ", may add surroundings, lighting, or interactions, and must stay plausible as a photograph. "
        << "Answer with one description per line and nothing else.";
    return out.str();
}

// Ask the LLM for n valid prompts; outputs missing a category are dropped
// and re-requested up to retry_budget extra rounds.
inline std::vector<PromptRecord> augment_prompts(InstructionLLMBackend& llm,
                                                 const std::vector<std::string>& categories, int n,
                                                 int retry_budget = 3) {
    if (n < 1) throw ValidationError("n must be >= 1");
    std::string fixed = fill_fixed_template(categories);
    std::string slug;
    for (const auto& c : categories) {
        if (!slug.empty()) slug += "+";
        slug += c;
    }

    std::vector<PromptRecord> out;
    int missing = n;
    for (int round = 0; round <= retry_budget && missing > 0; ++round) {
        std::vector<std::string> texts = llm.complete(build_icl_instruction(categories, missing), missing);
        for (auto& t : texts) {
            if (!prompt_mentions_all(t, categories)) continue;  // containment rule, not trust
            PromptRecord rec;
            rec.categories = categories;
            rec.fixed_template_text = fixed;
            rec.augmented_text = t;
            rec.source = PromptRecord::Source::llm_augmented;
            rec.id = "p-" + std::to_string(hash_str(slug + "#" + std::to_string(out.size()) + "#" + t) & 0xffffffffull) +
                     "-" + std::to_string(out.size());
            out.push_back(std::move(rec));
            if (static_cast<int>(out.size()) == n) break;
        }
        missing = n - static_cast<int>(out.size());
    }
    if (missing > 0)
        throw BackendError(BackendError::Kind::bad_response,
                           "insufficient_valid_prompts: got " + std::to_string(out.size()) + " of " +
                               std::to_string(n) + " for (" + slug + ")");
    return out;
}

// All unordered N-combinations in deterministic lexicographic index order.
inline std::vector<std::vector<std::size_t>> enumerate_category_tuples(const LabelSpace& ls, std::size_t n,
                                                                       bool unseen_only = true) {
    std::vector<std::size_t> all;
    if (unseen_only)
        all = ls.unseen();
    else {
        all.resize(ls.size());
        for (std::size_t i = 0; i < ls.size(); ++i) all[i] = i;
    }
    if (n < 1) throw ValidationError("tuple size must be >= 1");
    if (all.size() < n)
        throw ValidationError("too few categories: need " + std::to_string(n) + ", have " +
                              std::to_string(all.size()));
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    while (true) {
        std::vector<std::size_t> tuple(n);
        for (std::size_t i = 0; i < n; ++i) tuple[i] = all[idx[i]];
        out.push_back(std::move(tuple));
        // advance combination
        std::size_t i = n;
        while (i > 0) {
            --i;
            if (idx[i] != i + all.size() - n) break;
            if (i == 0) return out;
        }
        if (idx[i] == i + all.size() - n) return out;
        ++idx[i];
        for (std::size_t t = i + 1; t < n; ++t) idx[t] = idx[t - 1] + 1;
    }
}

// Append-only prompt store, one JSON object per line.
class PromptStore {
public:
    void add(PromptRecord rec) {
        if (rec.id.empty()) throw ValidationError("prompt record needs an id");
        if (!prompt_mentions_all(rec.augmented_text, rec.categories))
            throw ValidationError("prompt '" + rec.id + "' does not mention all its categories");
        index_[key_of(rec.categories)].push_back(records_.size());
        by_id_[rec.id] = records_.size();
        records_.push_back(std::move(rec));
    }

    const std::vector<PromptRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    std::size_t size() const { return records_.size(); }

    bool has_id(const std::string& id) const { return by_id_.count(id) > 0; }

    const PromptRecord& by_id(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw ValidationError("unknown prompt id: " + id);
        return records_[it->second];
    }

    // prompts whose category tuple matches exactly (order-insensitive)
    std::vector<const PromptRecord*> for_categories(const std::vector<std::string>& categories) const {
        auto it = index_.find(key_of(categories));
        std::vector<const PromptRecord*> out;
        if (it == index_.end()) return out;
        for (auto i : it->second) out.push_back(&records_[i]);
        return out;
    }

    // uniform draw among the tuple's prompts
    const PromptRecord& sample(const std::vector<std::string>& categories, Rng& rng) const {
        auto candidates = for_categories(categories);
        if (candidates.empty()) {
            std::string k = key_of(categories);
            throw ValidationError("no prompts stored for tuple (" + k + ")");
        }
        return *candidates[rng.below(candidates.size())];
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write prompt store: " + path.string());
        for (const auto& r : records_) {
            nlohmann::ordered_json j;
            j["id"] = r.id;
            j["categories"] = r.categories;
            j["fixed"] = r.fixed_template_text;
            j["augmented"] = r.augmented_text;
            j["source"] = to_string(r.source);
            out << j.dump() << "\n";
        }
    }

    static PromptStore load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open prompt store: " + path.string());
        PromptStore store;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
                PromptRecord r;
                r.id = j.at("id").get<std::string>();
                r.categories = j.at("categories").get<std::vector<std::string>>();
                r.fixed_template_text = j.at("fixed").get<std::string>();
                r.augmented_text = j.at("augmented").get<std::string>();
                std::string src = j.at("source").get<std::string>();
                r.source = (src == "fixed") ? PromptRecord::Source::fixed : PromptRecord::Source::llm_augmented;
                store.add(std::move(r));
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("prompt store: ") + e.what(), line_no);
            }
        }
        return store;
    }

private:
    static std::string key_of(std::vector<std::string> categories) {
        std::sort(categories.begin(), categories.end());
        std::string k;
        for (const auto& c : categories) k += c + "\x1f";
        return k;
    }

    std::vector<PromptRecord> records_;
    std::map<std::string, std::vector<std::size_t>> index_;
    std::map<std::string, std::size_t> by_id_;
};

// Build the full store for every N-combination of the unseen classes:
// one fixed-template record plus n_per_tuple LLM variants per tuple.
inline PromptStore build_prompt_store(InstructionLLMBackend& llm, const LabelSpace& ls, std::size_t tuple_size,
                                      int n_per_tuple, int retry_budget = 3) {
    PromptStore store;
    auto tuples = enumerate_category_tuples(ls, tuple_size, /*unseen_only=*/true);
    for (const auto& tuple : tuples) {
        std::vector<std::string> names;
        names.reserve(tuple.size());
        for (auto c : tuple) names.push_back(ls.name(c));

        PromptRecord fixed;
        fixed.categories = names;
        fixed.fixed_template_text = fill_fixed_template(names);
        fixed.augmented_text = fixed.fixed_template_text;
        fixed.source = PromptRecord::Source::fixed;
        std::string slug;
        for (const auto& c : names) slug += (slug.empty() ? "" : "+") + c;
        fixed.id = "f-" + std::to_string(hash_str(slug) & 0xffffffffull);
        store.add(std::move(fixed));

        for (auto& rec : augment_prompts(llm, names, n_per_tuple, retry_budget)) store.add(std::move(rec));
    }
    return store;
}

}  // namespace forge
