#pragma once

#include <cmath>
#include <vector>

#include "forge/error.hpp"
#include "forge/tensor.hpp"

namespace forge {

// AdamW: adaptive moments with decoupled weight decay. Parameter identity
// is positional, so callers must pass the same parameter list in the same
// order on every step.
class AdamW {
public:
    explicit AdamW(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    long step_count() const { return t_; }

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
        if (params.size() != grads.size()) throw ValidationError("optimizer: params/grads size mismatch");
        if (slots_.empty()) {
            for (auto* p : params) slots_.push_back({Tensor::zeros(p->shape), Tensor::zeros(p->shape)});
        }
        if (slots_.size() != params.size()) throw ValidationError("optimizer: parameter set changed");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            if (!p.same_shape(g)) throw ValidationError("optimizer: gradient shape mismatch");
            Slot& s = slots_[i];
            for (std::size_t t = 0; t < p.size(); ++t) {
                double gv = g.data[t];
                s.m.data[t] = beta1_ * s.m.data[t] + (1.0 - beta1_) * gv;
                s.v.data[t] = beta2_ * s.v.data[t] + (1.0 - beta2_) * gv * gv;
                double mhat = s.m.data[t] / bc1;
                double vhat = s.v.data[t] / bc2;
                p.data[t] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.data[t]);
            }
        }
    }

private:
    struct Slot {
        Tensor m, v;
    };

    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Slot> slots_;
};

// Fingerprint of parameter bytes; used everywhere a "did training touch
// this" contract needs checking.
inline std::uint64_t fingerprint_tensors(const std::vector<const Tensor*>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* bytes, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const Tensor* t : tensors) {
        std::size_t r = t->rank();
        mix(&r, sizeof(r));
        for (auto d : t->shape) mix(&d, sizeof(d));
        if (!t->data.empty()) mix(t->data.data(), t->data.size() * sizeof(double));
    }
    return h;
}

}  // namespace forge
