#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace forge {

// splitmix64; used both as a seed mixer and as the core generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive a child seed from a base seed and one or more stream tags.
// Used so per-attempt / per-cell randomness never depends on call order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base ^ (0x6a09e667f3bcc909ull + stream * 0x9e3779b97f4a7c15ull);
    splitmix64(s);
    return splitmix64(s);
}

inline std::uint64_t hash_str(std::string_view text) {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Deterministic generator with hand-rolled distributions. The standard
// engines are portable but the standard distributions are not, and
// reproducible manifests require stable draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x2545f4914f6cdd1dull) {
        // decorrelate sequential seeds
        splitmix64(state_);
    }

    std::uint64_t u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double unit() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::size_t below(std::size_t n) {
        // modulo bias is irrelevant at 64 bits for any realistic n
        return static_cast<std::size_t>(u64() % n);
    }

    bool bernoulli(double p) { return unit() < p; }

    // Box-Muller; one value per call, no cached second draw so the
    // stream stays insensitive to call parity.
    double normal() {
        double u1 = unit();
        double u2 = unit();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

private:
    std::uint64_t state_;
};

}  // namespace forge
