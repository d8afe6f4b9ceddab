#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/error.hpp"
#include "forge/labels.hpp"
#include "forge/tensor.hpp"

namespace forge {

struct PrfScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    std::string mode;  // "zsl" | "gzsl"
    double map = 0.0;
    std::map<int, PrfScores> per_k;
    std::vector<double> per_class_ap;          // aligned with label_subset
    std::vector<std::size_t> label_subset;     // category indices evaluated
    std::uint64_t label_subset_fingerprint = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["mode"] = mode;
        j["map"] = map;
        nlohmann::ordered_json ks;
        for (const auto& [k, prf] : per_k) {
            nlohmann::ordered_json e;
            e["precision"] = prf.precision;
            e["recall"] = prf.recall;
            e["f1"] = prf.f1;
            ks[std::to_string(k)] = e;
        }
        j["per_k"] = ks;
        j["per_class_ap"] = per_class_ap;
        j["label_subset"] = label_subset;
        j["label_subset_fingerprint"] = label_subset_fingerprint;
        return j;
    }
};

// Top-K precision/recall/F1, micro-aggregated: confusion counts are pooled
// over all images before the ratios. Ties inside a score row resolve to the
// lower class index so results never depend on sort internals.
inline PrfScores topk_prf(const Tensor& scores, const Tensor& truth, int k) {
    if (scores.rank() != 2 || !scores.same_shape(truth)) throw ValidationError("topk_prf: shape mismatch");
    const std::size_t n = scores.dim(0), m = scores.dim(1);
    if (k < 1) throw ValidationError("topk_prf: k must be >= 1");
    if (static_cast<std::size_t>(k) > m) throw ValidationError("topk_prf: k exceeds class count");

    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores.at(i, a) != scores.at(i, b)) return scores.at(i, a) > scores.at(i, b);
            return a < b;
        });
        std::vector<bool> predicted(m, false);
        for (int t = 0; t < k; ++t) predicted[order[static_cast<std::size_t>(t)]] = true;
        for (std::size_t c = 0; c < m; ++c) {
            bool pos = truth.at(i, c) != 0.0;
            if (predicted[c] && pos) ++tp;
            if (predicted[c] && !pos) ++fp;
            if (!predicted[c] && pos) ++fn;
        }
    }
    PrfScores out;
    out.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    out.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    out.f1 = (out.precision + out.recall > 0.0)
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

// Average precision for one class: area under the precision-recall step
// curve of the ranked image list (all-points definition, no interpolation
// grid). Ties rank by image index for determinism.
inline double average_precision(const std::vector<double>& scores, const std::vector<bool>& truth) {
    if (scores.size() != truth.size()) throw ValidationError("average_precision: size mismatch");
    std::size_t n_pos = 0;
    for (bool t : truth) n_pos += t ? 1 : 0;
    if (n_pos == 0) throw ValidationError("average_precision: class has no positives");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (truth[order[r]]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return ap / static_cast<double>(n_pos);
}

// Exact expectation of average_precision under a uniformly random ranking
// with n items and k positives; the oracle tests lean on it.
inline double expected_ap_random(std::size_t n, std::size_t k) {
    double hn = 0.0;
    for (std::size_t t = 1; t <= n; ++t) hn += 1.0 / static_cast<double>(t);
    double nn = static_cast<double>(n), kk = static_cast<double>(k);
    if (n == 1) return 1.0;
    return (hn + (kk - 1.0) / (nn - 1.0) * (nn - hn)) / nn;
}

struct MapResult {
    double map = 0.0;
    std::vector<double> per_class_ap;          // NaN-free; skipped classes omitted
    std::vector<std::size_t> evaluated;        // classes with >= 1 positive
    std::vector<std::size_t> skipped;          // zero-positive classes
};

// mAP over a class subset; classes without positives are excluded with a
// warning rather than poisoning the mean.
inline MapResult mean_average_precision(const Tensor& scores, const Tensor& truth,
                                        const std::vector<std::size_t>& class_subset,
                                        std::ostream* warn = nullptr) {
    if (scores.rank() != 2 || !scores.same_shape(truth)) throw ValidationError("mAP: shape mismatch");
    const std::size_t n = scores.dim(0);
    MapResult res;
    double sum = 0.0;
    for (auto c : class_subset) {
        if (c >= scores.dim(1)) throw ValidationError("mAP: class index out of range");
        std::vector<double> s(n);
        std::vector<bool> t(n);
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = scores.at(i, c);
            t[i] = truth.at(i, c) != 0.0;
            n_pos += t[i] ? 1 : 0;
        }
        if (n_pos == 0) {
            if (warn) (*warn) << "warning: class " << c << " has no positives, excluded from mAP\n";
            res.skipped.push_back(c);
            continue;
        }
        double ap = average_precision(s, t);
        res.per_class_ap.push_back(ap);
        res.evaluated.push_back(c);
        sum += ap;
    }
    if (res.evaluated.empty()) throw ValidationError("mAP: no class in the subset has positives");
    res.map = sum / static_cast<double>(res.evaluated.size());
    return res;
}

// Assemble the standard report for one (scores, truth) pair restricted to a
// label subset. Column order of `scores` must match `subset`.
inline EvalReport evaluate_subset(const std::string& mode, const Tensor& scores, const Tensor& truth,
                                  const std::vector<std::size_t>& subset, const LabelSpace& ls,
                                  const std::vector<int>& topk_list, std::ostream* warn = nullptr) {
    EvalReport rep;
    rep.mode = mode;
    rep.label_subset = subset;
    rep.label_subset_fingerprint = ls.subset_fingerprint(subset);
    std::vector<std::size_t> local(subset.size());
    std::iota(local.begin(), local.end(), std::size_t{0});
    auto mr = mean_average_precision(scores, truth, local, warn);
    rep.map = mr.map;
    rep.per_class_ap = mr.per_class_ap;
    for (int k : topk_list)
        if (static_cast<std::size_t>(k) <= subset.size()) rep.per_k[k] = topk_prf(scores, truth, k);
    return rep;
}

}  // namespace forge
