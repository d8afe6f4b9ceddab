#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/filter.hpp"
#include "forge/image.hpp"
#include "forge/labels.hpp"

namespace forge {

enum class Provenance { real, synthetic };
enum class Split { train, test };

inline const char* to_string(Provenance p) { return p == Provenance::real ? "real" : "synthetic"; }

// One training or evaluation image. Pixels live in an external file
// referenced by relative path; a record may carry an in-memory image
// instead (toy fixtures before they are persisted).
struct SampleRecord {
    std::string image_ref;
    std::optional<Image> image;  // set when the pixels are held in memory
    std::vector<std::size_t> positives;
    Provenance provenance = Provenance::real;
    std::optional<std::string> prompt_id;
    std::optional<SimilarityReport> scores;
    std::optional<bool> accepted;  // present on filter-annotated manifests
};

struct DatasetManifest {
    LabelSpace label_space;
    std::vector<SampleRecord> records;
    Split split = Split::train;

    // per-category positive counts, the recount oracle used by tests
    std::vector<std::size_t> positive_counts() const {
        std::vector<std::size_t> counts(label_space.size(), 0);
        for (const auto& r : records)
            for (auto c : r.positives) counts.at(c)++;
        return counts;
    }
};

namespace detail {

inline void validate_record(const SampleRecord& r, const LabelSpace& ls, Split split, bool zero_shot, int line) {
    if (r.positives.empty()) throw ValidationError("record has no positive labels (line " + std::to_string(line) + ")");
    std::set<std::size_t> seen_idx;
    for (auto c : r.positives) {
        if (c >= ls.size()) throw ValidationError("label index out of range (line " + std::to_string(line) + ")");
        if (!seen_idx.insert(c).second)
            throw ValidationError("duplicate positive label (line " + std::to_string(line) + ")");
    }
    if (r.provenance == Provenance::synthetic && !r.prompt_id)
        throw ValidationError("synthetic record lacks prompt_id (line " + std::to_string(line) + ")");
    if (split == Split::train && zero_shot && r.provenance == Provenance::real) {
        for (auto c : r.positives)
            if (ls.is_unseen(c))
                throw ValidationError("split contamination: real train record labeled with unseen class '" +
                                      ls.name(c) + "' (line " + std::to_string(line) + ")");
    }
    if (split == Split::train && zero_shot && r.provenance == Provenance::synthetic) {
        bool any_unseen = false;
        for (auto c : r.positives) any_unseen = any_unseen || ls.is_unseen(c);
        if (!any_unseen)
            throw ValidationError("synthetic train record carries no unseen class (line " + std::to_string(line) + ")");
    }
}

inline nlohmann::ordered_json report_to_json(const SimilarityReport& rep) {
    nlohmann::ordered_json j;
    j["u"] = rep.u;
    j["positives_idx"] = rep.positives_idx;
    j["v_p"] = rep.v_p;
    j["v_n"] = rep.v_n;
    return j;
}

inline SimilarityReport report_from_json(const nlohmann::json& j) {
    SimilarityReport rep;
    rep.u = j.at("u").get<std::vector<double>>();
    rep.positives_idx = j.at("positives_idx").get<std::vector<std::size_t>>();
    rep.v_p = j.at("v_p").get<std::vector<double>>();
    rep.v_n = j.at("v_n").get<std::vector<double>>();
    return rep;
}

}  // namespace detail

inline nlohmann::ordered_json record_to_json(const SampleRecord& r, const LabelSpace& ls) {
    nlohmann::ordered_json j;
    j["image"] = r.image_ref;
    std::vector<std::string> names;
    names.reserve(r.positives.size());
    for (auto c : r.positives) names.push_back(ls.name(c));
    j["positives"] = names;
    j["provenance"] = to_string(r.provenance);
    if (r.prompt_id)
        j["prompt_id"] = *r.prompt_id;
    else
        j["prompt_id"] = nullptr;
    if (r.scores) j["scores"] = detail::report_to_json(*r.scores);
    if (r.accepted) j["accepted"] = *r.accepted;
    return j;
}

// Load a JSON-Lines manifest. zero_shot enforces the split rules: real
// train records must stay inside the seen set, synthetic train records
// must touch at least one unseen class.
inline DatasetManifest load_manifest(const std::filesystem::path& path, const LabelSpace& ls,
                                     Split split = Split::train, bool zero_shot = true) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.label_space = ls;
    m.split = split;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("manifest parse error: ") + e.what(), line_no);
        }
        SampleRecord r;
        try {
            r.image_ref = j.at("image").get<std::string>();
            for (const auto& name : j.at("positives")) {
                const std::string n = name.get<std::string>();
                if (!ls.has(n))
                    throw ValidationError("unknown category name '" + n + "' (line " + std::to_string(line_no) + ")");
                r.positives.push_back(ls.index_of(n));
            }
            std::string prov = j.at("provenance").get<std::string>();
            if (prov == "real")
                r.provenance = Provenance::real;
            else if (prov == "synthetic")
                r.provenance = Provenance::synthetic;
            else
                throw ValidationError("provenance must be real|synthetic (line " + std::to_string(line_no) + ")");
            if (j.contains("prompt_id") && !j["prompt_id"].is_null())
                r.prompt_id = j["prompt_id"].get<std::string>();
            if (j.contains("scores") && !j["scores"].is_null()) r.scores = detail::report_from_json(j["scores"]);
            if (j.contains("accepted") && !j["accepted"].is_null()) r.accepted = j["accepted"].get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("manifest record: ") + e.what(), line_no);
        }
        detail::validate_record(r, ls, split, zero_shot, line_no);
        m.records.push_back(std::move(r));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path.string());
    for (const auto& r : m.records) out << record_to_json(r, m.label_space).dump() << "\n";
}

// Algorithm 1's dataset union: concatenate records, keep provenance.
inline DatasetManifest merge_datasets(const DatasetManifest& real, const DatasetManifest& synthetic) {
    if (real.label_space.names() != synthetic.label_space.names())
        throw ValidationError("label-space mismatch between datasets");
    DatasetManifest out;
    out.label_space = real.label_space;
    out.split = real.split;
    out.records = real.records;
    out.records.insert(out.records.end(), synthetic.records.begin(), synthetic.records.end());
    return out;
}

}  // namespace forge
