#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace qkdsim {

// Counter-based PRNG built on the SplitMix64 finalizer. Streams are derived
// by hashing (key, tag) pairs, so every consumer gets an independent sequence
// that does not depend on the order in which other streams are drawn from.
// Identical seeds give bit-identical runs.
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view name) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 1) : key_(mix64(seed)), ctr_(0) {}

    // Independent child stream; safe to create in any order.
    Rng fork(std::string_view name) const { return Rng(key_ ^ mix64(hash_tag(name)), 0); }
    Rng fork(std::uint64_t tag) const { return Rng(key_ ^ mix64(tag), 0); }

    // Stream keyed to an index (e.g. a slot number): the result is a function
    // of (key, index) only, independent of this stream's position.
    Rng at(std::uint64_t index) const { return Rng(mix64(key_ + kGolden * (index + 1)), 0); }

    std::uint64_t next_u64() { return mix64(key_ + kGolden * ++ctr_); }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t uniform_int(std::uint64_t n) {  // [0, n)
        return next_u64() % n;
    }

    double gaussian(double mean = 0.0, double sigma = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double exponential(double rate) {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return -std::log(u) / rate;
    }

    // Knuth for small means, normal approximation above 30 (photon numbers
    // here are < 1, darks use exponential gaps instead).
    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 30.0) {
            double v = std::round(gaussian(mean, std::sqrt(mean)));
            return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
        }
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    std::uint64_t key() const { return key_; }

  private:
    Rng(std::uint64_t key, std::uint64_t ctr) : key_(key), ctr_(ctr) {}

    std::uint64_t key_;
    std::uint64_t ctr_;
};

}  // namespace qkdsim
