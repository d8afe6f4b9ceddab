#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "forge/autograd.hpp"
#include "forge/error.hpp"
#include "forge/filter.hpp"

namespace forge {

// Asymmetric multi-label loss parameters: separate focusing exponents for
// positive and negative terms, plus an optional probability margin on the
// negatives.
struct AslParams {
    double gamma_plus = 0.0;
    double gamma_minus = 4.0;
    double margin = 0.0;

    void validate() const {
        if (gamma_plus < 0.0 || gamma_minus < 0.0) throw ValidationError("gamma exponents must be >= 0");
        if (margin < 0.0 || margin >= 1.0) throw ValidationError("margin must lie in [0,1)");
    }
};

namespace asl_detail {
constexpr double kEps = 1e-7;

inline double clamp_p(double p) { return std::clamp(p, kEps, 1.0 - kEps); }
}  // namespace asl_detail

// Minimized asymmetric loss over grouped probabilities:
//   L = -[ sum_{p in v_p} (1-p)^g+ log p  +  sum_{p in v_n} pm^g- log(1-pm) ],
// with pm = max(p - margin, 0). Inputs are clamped to [eps, 1-eps].
inline double asl_loss(const std::vector<double>& v_p, const std::vector<double>& v_n, const AslParams& params) {
    params.validate();
    if (v_p.empty() && v_n.empty()) throw ValidationError("asl_loss needs at least one probability");
    double loss = 0.0;
    for (double raw : v_p) {
        double p = asl_detail::clamp_p(raw);
        loss -= std::pow(1.0 - p, params.gamma_plus) * std::log(p);
    }
    for (double raw : v_n) {
        double p = asl_detail::clamp_p(raw);
        double pm = std::max(p - params.margin, 0.0);
        if (pm <= 0.0) continue;  // fully margined out
        pm = std::min(pm, 1.0 - asl_detail::kEps);
        loss -= std::pow(pm, params.gamma_minus) * std::log(1.0 - pm);
    }
    return loss;
}

// dL/dp for each entry of v_p and v_n; clamped entries get zero gradient
// outside the clamp window, matching the forward exactly.
inline std::pair<std::vector<double>, std::vector<double>> asl_loss_backward(const std::vector<double>& v_p,
                                                                             const std::vector<double>& v_n,
                                                                             const AslParams& params) {
    params.validate();
    std::vector<double> gp(v_p.size(), 0.0), gn(v_n.size(), 0.0);
    for (std::size_t i = 0; i < v_p.size(); ++i) {
        double raw = v_p[i];
        if (raw <= asl_detail::kEps || raw >= 1.0 - asl_detail::kEps) continue;
        double p = raw;
        double omp = 1.0 - p;
        // d/dp [ (1-p)^g+ log p ] = -g+ (1-p)^(g+-1) log p + (1-p)^g+ / p
        double d = std::pow(omp, params.gamma_plus) / p;
        if (params.gamma_plus > 0.0) d -= params.gamma_plus * std::pow(omp, params.gamma_plus - 1.0) * std::log(p);
        gp[i] = -d;
    }
    for (std::size_t i = 0; i < v_n.size(); ++i) {
        double raw = v_n[i];
        if (raw <= asl_detail::kEps || raw >= 1.0 - asl_detail::kEps) continue;
        double pm = raw - params.margin;
        if (pm <= 0.0) continue;
        if (pm >= 1.0 - asl_detail::kEps) continue;
        // d/dp [ pm^g- log(1-pm) ] = g- pm^(g--1) log(1-pm) - pm^g- / (1-pm)
        double d = -std::pow(pm, params.gamma_minus) / (1.0 - pm);
        if (params.gamma_minus > 0.0) d += params.gamma_minus * std::pow(pm, params.gamma_minus - 1.0) * std::log(1.0 - pm);
        gn[i] = -d;
    }
    return {std::move(gp), std::move(gn)};
}

namespace grad {

// Autograd node over the analytic forms above; probabilities come in as
// two vector Vars, the scalar loss flows out.
inline Var asl(Var v_p, Var v_n, const AslParams& params) {
    detail::check_same_graph(v_p, v_n);
    const std::vector<double>& pv = v_p.val().data;
    const std::vector<double>& nv = v_n.val().data;
    double loss = asl_loss(pv, nv, params);
    int pp = v_p.id, pn = v_n.id;
    return v_p.g->make(Tensor::scalar(loss), {pp, pn}, [pp, pn, params](Graph& g, int self) {
        double go = g.grad(self).data[0];
        auto [gp, gn] = asl_loss_backward(g.value(pp).data, g.value(pn).data, params);
        Tensor& tp = g.grad(pp);
        Tensor& tn = g.grad(pn);
        for (std::size_t i = 0; i < gp.size(); ++i) tp.data[i] += go * gp[i];
        for (std::size_t i = 0; i < gn.size(); ++i) tn.data[i] += go * gn[i];
    });
}

// Grouping Softmax as an autograd node: input u and a positive index set,
// output the concatenation v_p ++ v_n (slice apart with slice()).
inline Var grouping_softmax_node(Var u, const std::vector<std::size_t>& positives_idx) {
    const std::vector<double>& uv = u.val().data;
    auto [v_p, v_n] = forge::grouping_softmax(uv, positives_idx);
    std::size_t j = v_p.size(), k = v_n.size();
    Tensor out({j + k});
    std::copy(v_p.begin(), v_p.end(), out.data.begin());
    std::copy(v_n.begin(), v_n.end(), out.data.begin() + static_cast<long>(j));
    int pu = u.id;
    return u.g->make(std::move(out), {pu}, [pu, positives_idx, j, k](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        std::vector<double> gp(go.data.begin(), go.data.begin() + static_cast<long>(j));
        std::vector<double> gn(go.data.begin() + static_cast<long>(j), go.data.end());
        std::vector<double> gu = forge::grouping_softmax_backward(g.value(pu).data, positives_idx, gp, gn);
        Tensor& tu = g.grad(pu);
        for (std::size_t i = 0; i < gu.size(); ++i) tu.data[i] += gu[i];
    });
}

}  // namespace grad

}  // namespace forge
