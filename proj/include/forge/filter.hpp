#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "forge/backends.hpp"
#include "forge/error.hpp"

namespace forge {

// Similarity of one image against a label set: raw cosine similarities u
// over all m categories, plus the grouped probabilities for the declared
// positives (v_p, length j) and the averaged negatives (v_n, length m-j).
struct SimilarityReport {
    std::vector<double> u;
    std::vector<std::size_t> positives_idx;
    std::vector<double> v_p;
    std::vector<double> v_n;
};

struct QualificationPolicy {
    enum class Mode { strict_topj, fine_grained_topk };

    double lambda_threshold = 0.5;
    Mode mode = Mode::strict_topj;
    std::optional<std::size_t> topk;                 // required in fine_grained mode
    std::optional<double> extra_positive_lambda;     // defaults to lambda_threshold

    void validate() const {
        if (!(lambda_threshold > 0.0 && lambda_threshold < 1.0))
            throw ValidationError("lambda must lie in (0,1)");
        if (mode == Mode::fine_grained_topk && !topk)
            throw ValidationError("fine_grained_topk policy requires topk");
    }
};

namespace detail {
inline void check_positive_indices(std::size_t m, const std::vector<std::size_t>& positives_idx) {
    if (positives_idx.empty()) throw ValidationError("positives_idx must be non-empty");
    std::set<std::size_t> seen;
    for (auto i : positives_idx) {
        if (i >= m) throw ValidationError("positive index out of range");
        if (!seen.insert(i).second) throw ValidationError("duplicate positive index");
    }
}
}  // namespace detail

// Grouping Softmax. Each positive similarity is softmaxed against all the
// negatives in its own group, so co-occurring positives never compete with
// each other; per-negative masses are averaged across groups.
//
// Groups are shifted by their max before exponentiation, which leaves the
// result mathematically unchanged and keeps exp() in range.
inline std::pair<std::vector<double>, std::vector<double>> grouping_softmax(
    const std::vector<double>& u, const std::vector<std::size_t>& positives_idx) {
    const std::size_t m = u.size();
    detail::check_positive_indices(m, positives_idx);
    for (double v : u)
        if (!std::isfinite(v)) throw ValidationError("non-finite similarity");

    std::vector<bool> is_pos(m, false);
    for (auto i : positives_idx) is_pos[i] = true;
    std::vector<std::size_t> negatives_idx;
    for (std::size_t i = 0; i < m; ++i)
        if (!is_pos[i]) negatives_idx.push_back(i);

    const std::size_t j = positives_idx.size();
    const std::size_t k = negatives_idx.size();
    std::vector<double> v_p(j);
    std::vector<double> v_n(k, 0.0);

    for (std::size_t gi = 0; gi < j; ++gi) {
        double up = u[positives_idx[gi]];
        double mx = up;
        for (auto n : negatives_idx) mx = std::max(mx, u[n]);
        double ep = std::exp(up - mx);
        double z = ep;
        for (auto n : negatives_idx) z += std::exp(u[n] - mx);
        v_p[gi] = ep / z;
        for (std::size_t t = 0; t < k; ++t) v_n[t] += std::exp(u[negatives_idx[t]] - mx) / z;
    }
    for (auto& v : v_n) v /= static_cast<double>(j);
    return {std::move(v_p), std::move(v_n)};
}

// Analytic jacobian-vector product for grouping_softmax: given upstream
// gradients over (v_p, v_n), accumulate gradients over u. Used by the
// tuner's backward pass; checked against finite differences in tests.
inline std::vector<double> grouping_softmax_backward(const std::vector<double>& u,
                                                     const std::vector<std::size_t>& positives_idx,
                                                     const std::vector<double>& grad_v_p,
                                                     const std::vector<double>& grad_v_n) {
    const std::size_t m = u.size();
    detail::check_positive_indices(m, positives_idx);
    std::vector<bool> is_pos(m, false);
    for (auto i : positives_idx) is_pos[i] = true;
    std::vector<std::size_t> negatives_idx;
    for (std::size_t i = 0; i < m; ++i)
        if (!is_pos[i]) negatives_idx.push_back(i);
    const std::size_t j = positives_idx.size();
    const std::size_t k = negatives_idx.size();

    std::vector<double> grad_u(m, 0.0);
    for (std::size_t gi = 0; gi < j; ++gi) {
        double up = u[positives_idx[gi]];
        double mx = up;
        for (auto n : negatives_idx) mx = std::max(mx, u[n]);
        double ep = std::exp(up - mx);
        double z = ep;
        std::vector<double> en(k);
        for (std::size_t t = 0; t < k; ++t) {
            en[t] = std::exp(u[negatives_idx[t]] - mx);
            z += en[t];
        }
        double vp = ep / z;
        // s[t] = group-gi softmax mass of negative t
        std::vector<double> s(k);
        for (std::size_t t = 0; t < k; ++t) s[t] = en[t] / z;

        // v_p[gi] wrt u: dv/dup = vp(1-vp); dv/dun_t = -vp*s[t]
        grad_u[positives_idx[gi]] += grad_v_p[gi] * vp * (1.0 - vp);
        for (std::size_t t = 0; t < k; ++t)
            grad_u[negatives_idx[t]] -= grad_v_p[gi] * vp * s[t];

        // v_n[t] contribution of this group: s[t]/j
        // ds_t/dup = -s_t*vp ; ds_t/dun_r = s_t*(delta_tr - s_r)
        for (std::size_t t = 0; t < k; ++t) {
            double gvn = grad_v_n[t] / static_cast<double>(j);
            if (gvn == 0.0) continue;
            grad_u[positives_idx[gi]] -= gvn * s[t] * vp;
            for (std::size_t r = 0; r < k; ++r) {
                double d = (t == r ? 1.0 : 0.0);
                grad_u[negatives_idx[r]] += gvn * s[t] * (d - s[r]);
            }
        }
    }
    return grad_u;
}

// Cosine similarity of an image against each label name, via the embedder.
inline std::vector<double> cosine_from_embeddings(const std::vector<double>& image_emb,
                                                  const std::vector<std::vector<double>>& text_embs) {
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    double ni = norm(image_emb);
    if (ni == 0.0) throw ValidationError("zero-norm image embedding");
    std::vector<double> u;
    u.reserve(text_embs.size());
    for (const auto& t : text_embs) {
        if (t.size() != image_emb.size()) throw ValidationError("embedding dimension mismatch");
        double nt = norm(t);
        if (nt == 0.0) throw ValidationError("zero-norm text embedding");
        double d = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) d += image_emb[i] * t[i];
        u.push_back(d / (ni * nt));
    }
    return u;
}

inline std::vector<double> cosine_similarities(VisionLanguageEmbedder& embedder, const Image& image,
                                               const std::vector<std::string>& label_names) {
    if (label_names.empty()) throw ValidationError("label list must be non-empty");
    std::vector<double> img = embedder.embed_image(image);
    std::vector<std::vector<double>> texts;
    texts.reserve(label_names.size());
    for (const auto& n : label_names) texts.push_back(embedder.embed_text(n));
    return cosine_from_embeddings(img, texts);
}

inline SimilarityReport score_image(VisionLanguageEmbedder& embedder, const Image& image,
                                    const std::vector<std::string>& label_names,
                                    const std::vector<std::size_t>& positives_idx) {
    SimilarityReport rep;
    rep.u = cosine_similarities(embedder, image, label_names);
    rep.positives_idx = positives_idx;
    auto [vp, vn] = grouping_softmax(rep.u, positives_idx);
    rep.v_p = std::move(vp);
    rep.v_n = std::move(vn);
    return rep;
}

struct QualifyResult {
    bool accepted = false;
    std::vector<std::size_t> final_positives;  // category indices, sorted
};

// Embedder + label set + policy, bundled: the discriminator R as one unit.
// label_names index the similarity vector; positives passed to score() are
// positions within that list.
struct Discriminator {
    VisionLanguageEmbedder* embedder = nullptr;
    std::vector<std::string> label_names;
    QualificationPolicy policy;

    SimilarityReport score(const Image& image, const std::vector<std::size_t>& positives_idx) const {
        return score_image(*embedder, image, label_names, positives_idx);
    }
};

// Accept/reject decision over a SimilarityReport.
//
// strict_topj: every v_p must exceed lambda and strictly dominate every
// negative's averaged probability (ties reject). fine_grained_topk: every
// positive must sit in the top-k of V = v_p ++ v_n; other categories inside
// the top-k whose value exceeds the extra-positive threshold are promoted
// into final_positives.
inline QualifyResult qualify(const SimilarityReport& report, const QualificationPolicy& policy) {
    policy.validate();
    const std::size_t j = report.v_p.size();
    const std::size_t k = report.v_n.size();
    if (report.positives_idx.size() != j) throw ValidationError("report positives/v_p size mismatch");

    QualifyResult res;
    res.final_positives = report.positives_idx;
    std::sort(res.final_positives.begin(), res.final_positives.end());

    for (double v : report.v_p)
        if (!(v > policy.lambda_threshold)) return res;  // accepted stays false

    // negative indices in u-order, aligned with v_n
    std::vector<bool> is_pos(report.u.size(), false);
    for (auto i : report.positives_idx) is_pos[i] = true;
    std::vector<std::size_t> negatives_idx;
    for (std::size_t i = 0; i < report.u.size(); ++i)
        if (!is_pos[i]) negatives_idx.push_back(i);
    if (negatives_idx.size() != k) throw ValidationError("report u/v_n size mismatch");

    double min_vp = j ? *std::min_element(report.v_p.begin(), report.v_p.end()) : 0.0;

    if (policy.mode == QualificationPolicy::Mode::strict_topj) {
        // positives must be the j largest of V; exact ties with the best
        // excluded negative reject
        for (double vn : report.v_n)
            if (!(min_vp > vn)) return res;
        res.accepted = true;
        return res;
    }

    // fine_grained_topk
    std::size_t topk = *policy.topk;
    std::size_t total = j + k;
    if (topk > total) topk = total;
    // count of negatives strictly above the weakest positive must leave all
    // j positives inside the top-k; ties again resolve against acceptance
    std::size_t stronger_negatives = 0;
    for (double vn : report.v_n)
        if (!(min_vp > vn)) ++stronger_negatives;
    if (j + stronger_negatives > topk) return res;
    res.accepted = true;

    // promote extra positives: negatives inside the top-k above threshold
    double extra_lambda = policy.extra_positive_lambda.value_or(policy.lambda_threshold);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return report.v_n[a] > report.v_n[b]; });
    std::size_t slots = topk - j;
    for (std::size_t r = 0; r < order.size() && r < slots; ++r) {
        std::size_t t = order[r];
        if (report.v_n[t] > extra_lambda) res.final_positives.push_back(negatives_idx[t]);
    }
    std::sort(res.final_positives.begin(), res.final_positives.end());
    return res;
}

}  // namespace forge
