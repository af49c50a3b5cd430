#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace hpsl {

// Counter-based pseudo-random stream. Output i is a pure function of
// (key, i), so a stream can be split per work unit and replayed on any
// platform regardless of scheduling. Dropping in std::mt19937 here would
// tie results to one standard library's distribution code.
class RngStream {
public:
    RngStream() : key_(0) {}
    explicit RngStream(std::uint64_t seed) : key_(mix_(seed, 0x243f6a8885a308d3ull)) {}

    // Derives an independent stream; `label` names the consumer
    // (layer index, epoch, item index, ...).
    RngStream child(std::uint64_t label) const {
        RngStream s;
        s.key_ = mix_(key_, label);
        return s;
    }

    RngStream child(std::initializer_list<std::uint64_t> labels) const {
        RngStream s = *this;
        for (auto l : labels) s = s.child(l);
        return s;
    }

    std::uint64_t next_u64() { return mix_(key_, counter_++); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (two draws per sample; no cached spare,
    // so the counter advance per call is fixed).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_state(std::uint64_t key, std::uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

private:
    static std::uint64_t mix_(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over a combined word
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// Deterministic in-place Fisher-Yates shuffle (independent of any standard
// library shuffle implementation).
template <typename Vec>
void shuffle(Vec& v, RngStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(v[i - 1], v[j]);
    }
}

}  // namespace hpsl
