#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "qkdsim/polarization.hpp"

namespace qkdsim {

// Three-squeezer electronic polarization controller. Channel j applies a
// rotation of pi * v_j / v_pi about its fixed axis; the X-Y-X axis layout is
// an Euler decomposition, so in-range voltages reach every SU(2) rotation.
struct EpcState {
    std::array<double, 3> voltages{0.0, 0.0, 0.0};
    double v_pi = 3.0;
    double v_max = 6.0;  // 2 * v_pi rails

    static constexpr std::array<Vec3, 3> axes{{{1, 0, 0}, {0, 1, 0}, {1, 0, 0}}};
};

// Clamp to the rails; returns true when any channel had to be clamped
// (mirrors hardware behavior: out-of-range requests saturate).
inline bool clamp_voltages(EpcState& s) {
    bool clamped = false;
    for (auto& v : s.voltages) {
        if (v < 0.0) {
            v = 0.0;
            clamped = true;
        } else if (v > s.v_max) {
            v = s.v_max;
            clamped = true;
        }
    }
    return clamped;
}

inline Mat2 epc_unitary(const EpcState& s) {
    if (s.v_pi <= 0.0) throw std::domain_error("EpcState: v_pi must be > 0");
    EpcState c = s;
    clamp_voltages(c);
    Mat2 u = Mat2::identity();
    for (int j = 0; j < 3; ++j) {  // channel 1 acts on the light first
        const double angle = std::numbers::pi * c.voltages[static_cast<std::size_t>(j)] / c.v_pi;
        u = su2_rotation(EpcState::axes[static_cast<std::size_t>(j)], angle) * u;
    }
    return u;
}

// Voltages that realize a given target unitary (up to global phase) via the
// X-Y-X Euler angles. Used by tests to certify full-coverage compensability.
inline EpcState epc_solve(const Mat2& target, double v_pi = 3.0) {
    // U ~ Rx(a) Ry(b) Rx(c) applied c first. Work from the rotation's action
    // on the Bloch basis vectors.
    auto bloch_apply = [&](const Mat2& u, Vec3 v) -> Vec3 {
        // r'_i = 1/2 tr(sigma_i U (r . sigma) U^dagger)
        const Mat2 sx{cplx(0, 0), cplx(1, 0), cplx(1, 0), cplx(0, 0)};
        const Mat2 sy{cplx(0, 0), cplx(0, -1), cplx(0, 1), cplx(0, 0)};
        const Mat2 sz{cplx(1, 0), cplx(0, 0), cplx(0, 0), cplx(-1, 0)};
        const Mat2 rho{v.z * cplx(1, 0), cplx(v.x, -v.y), cplx(v.x, v.y), -v.z * cplx(1, 0)};
        const Mat2 w = u * rho * u.adjoint();
        auto half_tr = [](const Mat2& a, const Mat2& b) {
            const Mat2 p = a * b;
            return 0.5 * (p.a + p.d).real();
        };
        return {half_tr(sx, w), half_tr(sy, w), half_tr(sz, w)};
    };
    // Columns of the SO(3) image of the target rotation.
    const Vec3 ex = bloch_apply(target, {1, 0, 0});
    const Vec3 ey = bloch_apply(target, {0, 1, 0});
    const Vec3 ez = bloch_apply(target, {0, 0, 1});
    // R = Rx(a) Ry(b) Rx(c): standard X-Y-X Euler extraction from R.
    const double r00 = ex.x;
    double b = std::acos(std::clamp(r00, -1.0, 1.0));
    double a, c;
    if (std::abs(std::sin(b)) > 1e-9) {
        a = std::atan2(ex.y, -ex.z);
        c = std::atan2(ey.x, ez.x);
    } else {
        // gimbal-locked: only the angle sum (b=0) or difference (b=pi) is
        // determined, so pin c and read the remainder off the y image
        c = 0.0;
        a = std::atan2(ey.z, ey.y);
    }
    auto wrap = [](double x) {
        const double two_pi = 2.0 * std::numbers::pi;
        x = std::fmod(x, two_pi);
        return x < 0 ? x + two_pi : x;
    };
    EpcState s;
    s.v_pi = v_pi;
    s.v_max = 2.0 * v_pi;
    s.voltages = {wrap(c) * v_pi / std::numbers::pi, wrap(b) * v_pi / std::numbers::pi,
                  wrap(a) * v_pi / std::numbers::pi};
    return s;
}

}  // namespace qkdsim
