#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace qcl {

// Deterministic seeded generator threaded explicitly through every stochastic
// operation; no global state. splitmix64 core so that streams derived via
// split() are independent and the byte-level sequence is identical on every
// platform (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Index in [0, n). Modulo bias is negligible for n << 2^64.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Standard normal via Box-Muller; two fresh uniforms per draw, no cached
    // second value, so interleaved calls stay reproducible.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    // Derive an independent child stream. Children with distinct tags never
    // collide with the parent sequence or with each other.
    Rng split(std::uint64_t tag) const {
        Rng probe(state_ ^ (0xa0761d6478bd642full + tag));
        return Rng(probe.next_u64());
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace qcl
