#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace qkdsim {

enum class Basis : std::uint8_t { Z = 0, X = 1 };

// One of the four signal states |H> + e^{i theta}|V> (normalized), with
// theta in {0, pi/2, pi, 3pi/2}. The Z label covers {0, pi}, X covers
// {pi/2, 3pi/2}; within a basis the bit selects the phase.
struct QubitState {
    Basis basis = Basis::Z;
    std::uint8_t bit = 0;

    bool operator==(const QubitState&) const = default;
};

inline double phase_of(QubitState s) {
    using std::numbers::pi;
    if (s.basis == Basis::Z) return s.bit ? pi : 0.0;
    return s.bit ? 1.5 * pi : 0.5 * pi;
}

inline QubitState state_from_phase(double theta) {
    using std::numbers::pi;
    constexpr double tol = 1e-9;
    const std::array<std::pair<double, QubitState>, 4> table{{
        {0.0, {Basis::Z, 0}},
        {0.5 * pi, {Basis::X, 0}},
        {pi, {Basis::Z, 1}},
        {1.5 * pi, {Basis::X, 1}},
    }};
    for (const auto& [phase, state] : table) {
        if (std::abs(theta - phase) < tol) return state;
    }
    throw std::domain_error("state_from_phase: theta not in {0, pi/2, pi, 3pi/2}");
}

using Jones = std::array<std::complex<double>, 2>;

inline Jones jones_vector(QubitState s) {
    const double theta = phase_of(s);
    const double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
    return {std::complex<double>(inv_sqrt2, 0.0),
            std::polar(inv_sqrt2, theta)};
}

// Detector indices 0-3 correspond to measurement outcomes
// (Z,0), (Z,1), (X,0), (X,1) -- one SNSPD per outcome.
inline int detector_index(QubitState s) {
    return 2 * static_cast<int>(s.basis) + s.bit;
}

inline QubitState outcome_state(int detector) {
    if (detector < 0 || detector > 3) throw std::domain_error("detector index out of range");
    return {detector < 2 ? Basis::Z : Basis::X, static_cast<std::uint8_t>(detector & 1)};
}

inline Basis detector_basis(int detector) { return detector < 2 ? Basis::Z : Basis::X; }
inline std::uint8_t detector_bit(int detector) { return static_cast<std::uint8_t>(detector & 1); }

}  // namespace qkdsim
