#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge {

// The category universe: an ordered name list split into seen and unseen
// index sets. Names are identity; matching is case-sensitive and exact.
class LabelSpace {
public:
    LabelSpace() = default;

    LabelSpace(std::vector<std::string> seen_names, std::vector<std::string> unseen_names) {
        for (auto& n : seen_names) push_name(n, /*seen=*/true);
        for (auto& n : unseen_names) push_name(n, /*seen=*/false);
        if (names_.empty()) throw ValidationError("label space is empty");
    }

    static LabelSpace load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open label-space file: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("label-space file: ") + e.what());
        }
        if (!j.is_object() || !j.contains("seen") || !j.contains("unseen"))
            throw ParseError("label-space file must be {\"seen\": [...], \"unseen\": [...]}");
        return LabelSpace(j["seen"].get<std::vector<std::string>>(), j["unseen"].get<std::vector<std::string>>());
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::ordered_json j;
        j["seen"] = seen_names();
        j["unseen"] = unseen_names();
        std::ofstream out(path);
        out << j.dump() << "\n";
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    const std::vector<std::size_t>& seen() const { return seen_; }
    const std::vector<std::size_t>& unseen() const { return unseen_; }

    bool is_seen(std::size_t i) const { return seen_mask_.at(i); }
    bool is_unseen(std::size_t i) const { return !seen_mask_.at(i); }

    bool has(const std::string& name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) throw ValidationError("unknown category name: '" + name + "'");
        return static_cast<std::size_t>(it - names_.begin());
    }

    std::vector<std::string> seen_names() const { return pick(seen_); }
    std::vector<std::string> unseen_names() const { return pick(unseen_); }

    // stable digest of an index subset; eval reports carry it so ZSL/GZSL
    // label sets are auditable
    std::uint64_t subset_fingerprint(const std::vector<std::size_t>& subset) const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (auto i : subset) {
            h ^= hash_str(name(i));
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    void push_name(const std::string& n, bool seen) {
        if (n.empty()) throw ValidationError("category name must be non-empty");
        if (has(n)) throw ValidationError("duplicate category name: '" + n + "'");
        names_.push_back(n);
        seen_mask_.push_back(seen);
        (seen ? seen_ : unseen_).push_back(names_.size() - 1);
    }

    std::vector<std::string> pick(const std::vector<std::size_t>& idx) const {
        std::vector<std::string> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(names_[i]);
        return out;
    }

    std::vector<std::string> names_;
    std::vector<bool> seen_mask_;
    std::vector<std::size_t> seen_;
    std::vector<std::size_t> unseen_;
};

// Category indices whose names occur in the text as whole words,
// case-insensitively ("bus" must not fire inside "busy"). Longer names
// match first and consume their span, so "traffic light" wins over a
// bare "light".
inline std::vector<std::size_t> categories_in_text(const LabelSpace& ls, const std::string& text) {
    auto lower = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    auto is_word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    std::string masked = lower(text);
    std::vector<std::size_t> order(ls.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ls.name(a).size() > ls.name(b).size(); });
    std::set<std::size_t> found;
    for (auto c : order) {
        std::string needle = lower(ls.name(c));
        if (needle.empty()) continue;
        for (std::size_t pos = masked.find(needle); pos != std::string::npos;
             pos = masked.find(needle, pos + 1)) {
            bool left_ok = pos == 0 || !is_word_char(masked[pos - 1]);
            std::size_t end = pos + needle.size();
            bool right_ok = end >= masked.size() || !is_word_char(masked[end]);
            if (!left_ok || !right_ok) continue;
            found.insert(c);
            for (std::size_t i = pos; i < end; ++i) masked[i] = '\x01';
            break;
        }
    }
    return {found.begin(), found.end()};
}

}  // namespace forge
