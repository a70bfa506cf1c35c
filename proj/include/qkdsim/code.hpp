#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qkdsim/rng.hpp"

namespace qkdsim {

struct CodeGenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shared pseudo-random sync sequence. Generation rejects candidates that are
// unbalanced or whose cyclic autocorrelation has a sidelobe close to the
// peak, so a correlation search cannot lock onto a shifted copy.
struct CorrelationCode {
    std::vector<std::uint8_t> bits;
    std::uint64_t seed = 0;

    std::int64_t length() const { return static_cast<std::int64_t>(bits.size()); }
};

// Number of positional agreements between the code and its cyclic shift.
// At shift 0 this equals the code length.
inline std::int64_t autocorrelation_matches(const std::vector<std::uint8_t>& bits, std::int64_t shift) {
    const std::int64_t L = static_cast<std::int64_t>(bits.size());
    std::int64_t m = 0;
    for (std::int64_t i = 0; i < L; ++i) {
        m += bits[i] == bits[(i + shift) % L];
    }
    return m;
}

// +/-1 convention: matches minus mismatches, i.e. 2*matches - L.
inline std::int64_t autocorrelation_pm1(const std::vector<std::uint8_t>& bits, std::int64_t shift) {
    const std::int64_t L = static_cast<std::int64_t>(bits.size());
    return 2 * autocorrelation_matches(bits, shift) - L;
}

inline bool code_quality_ok(const std::vector<std::uint8_t>& bits) {
    const std::int64_t L = static_cast<std::int64_t>(bits.size());
    std::int64_t ones = 0;
    for (auto b : bits) ones += b;
    if (std::abs(static_cast<double>(ones) - 0.5 * L) > 3.0 * std::sqrt(static_cast<double>(L)))
        return false;
    for (std::int64_t s = 1; s < L; ++s) {
        if (autocorrelation_pm1(bits, s) > L / 2) return false;
    }
    return true;
}

inline CorrelationCode generate_code(std::int64_t L_code, Rng& rng) {
    if (L_code < 2) throw std::domain_error("generate_code: L_code must be >= 2");
    const std::uint64_t seed = rng.key();
    Rng gen = rng.fork("correlation-code");
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<std::uint8_t> bits(static_cast<std::size_t>(L_code));
        for (auto& b : bits) b = gen.bernoulli(0.5) ? 1 : 0;
        if (code_quality_ok(bits)) return CorrelationCode{std::move(bits), seed};
    }
    throw CodeGenerationError("generate_code: no candidate passed quality gates in 1000 attempts");
}

}  // namespace qkdsim
