#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "qkdsim/rng.hpp"
#include "qkdsim/states.hpp"

namespace qkdsim {

using cplx = std::complex<double>;

struct Mat2 {
    // row-major: [a b; c d]
    cplx a{1, 0}, b{0, 0}, c{0, 0}, d{1, 0};

    static Mat2 identity() { return {}; }

    Mat2 operator*(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d,
                c * o.a + d * o.c, c * o.b + d * o.d};
    }

    Jones operator*(const Jones& v) const {
        return {a * v[0] + b * v[1], c * v[0] + d * v[1]};
    }

    Mat2 adjoint() const {
        return {std::conj(a), std::conj(c), std::conj(b), std::conj(d)};
    }
};

inline double unitarity_defect(const Mat2& u) {
    const Mat2 p = u * u.adjoint();
    return std::abs(p.a - cplx(1, 0)) + std::abs(p.b) + std::abs(p.c) + std::abs(p.d - cplx(1, 0));
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (n == 0.0) throw std::domain_error("zero rotation axis");
    return {v.x / n, v.y / n, v.z / n};
}

// SU(2) rotation by `angle` about the unit Bloch axis n:
//   U = cos(a/2) I - i sin(a/2) (n . sigma)
inline Mat2 su2_rotation(Vec3 axis, double angle) {
    const Vec3 n = normalized(axis);
    const double ch = std::cos(0.5 * angle);
    const double sh = std::sin(0.5 * angle);
    return {cplx(ch, -sh * n.z), cplx(-sh * n.y, -sh * n.x),
            cplx(sh * n.y, -sh * n.x), cplx(ch, sh * n.z)};
}

// The four signal states sit on the Bloch equator (Z basis along +/-x,
// X basis along +/-y); a rotation about the z axis (the H/V axis) by
// 2*asin(sqrt(e)) turns a fraction e of each basis into errors. Used as the
// fixed optical-imperfection floor composed with channel drift.
inline Mat2 misalignment_unitary(double e_mis) {
    if (e_mis < 0.0 || e_mis >= 1.0) throw std::domain_error("e_mis must be in [0,1)");
    if (e_mis == 0.0) return Mat2::identity();
    return su2_rotation({0, 0, 1}, 2.0 * std::asin(std::sqrt(e_mis)));
}

inline double born_probability(const Jones& outcome, const Jones& state) {
    const cplx amp = std::conj(outcome[0]) * state[0] + std::conj(outcome[1]) * state[1];
    return std::norm(amp);
}

// P(detector i fires | one photon in state u*psi), passive 50/50 basis
// choice included; the four probabilities sum to exactly 1.
inline std::array<double, 4> outcome_probabilities(const Mat2& u, QubitState sent) {
    const Jones psi = u * jones_vector(sent);
    std::array<double, 4> p{};
    for (int d = 0; d < 4; ++d) {
        p[d] = 0.5 * born_probability(jones_vector(outcome_state(d)), psi);
    }
    return p;
}

enum class DriftKind { Static, Sinusoidal, RandomWalk };

// Time-parameterized polarization rotation of the deployed fiber. All kinds
// rotate about one seeded axis; the random walk diffuses the angle with
// E[angle^2(t)] = step^2 * t, sampled on a fixed grid so evaluation order
// does not change the path.
class DriftTrajectory {
  public:
    static DriftTrajectory make_static(double angle_rad, Vec3 axis = {0, 0, 1}) {
        DriftTrajectory d;
        d.kind_ = DriftKind::Static;
        d.amplitude_ = angle_rad;
        d.axis_ = normalized(axis);
        return d;
    }

    static DriftTrajectory make_sinusoidal(double amplitude_rad, double period_s,
                                           Vec3 axis = {0, 0, 1}) {
        if (period_s <= 0) throw std::domain_error("sinusoidal drift: period must be > 0");
        DriftTrajectory d;
        d.kind_ = DriftKind::Sinusoidal;
        d.amplitude_ = amplitude_rad;
        d.period_ = period_s;
        d.axis_ = normalized(axis);
        return d;
    }

    static DriftTrajectory make_random_walk(double step_rad_per_sqrt_s, const Rng& rng,
                                            double grid_dt_s = 1.0) {
        if (step_rad_per_sqrt_s < 0) throw std::domain_error("random walk: step must be >= 0");
        if (grid_dt_s <= 0) throw std::domain_error("random walk: grid dt must be > 0");
        DriftTrajectory d;
        d.kind_ = DriftKind::RandomWalk;
        d.step_ = step_rad_per_sqrt_s;
        d.dt_ = grid_dt_s;
        d.walk_rng_ = rng.fork("drift-walk");
        Rng ax = rng.fork("drift-axis");
        // random axis, uniform on the sphere
        const double z = ax.uniform(-1.0, 1.0);
        const double ph = ax.uniform(0.0, 2.0 * std::numbers::pi);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        d.axis_ = {r * std::cos(ph), r * std::sin(ph), z};
        d.walk_ = std::make_shared<std::vector<double>>(1, 0.0);
        return d;
    }

    static DriftTrajectory parse(const std::string& kind, double amplitude_rad, double period_s,
                                 double step_rad_per_sqrt_s, const Rng& rng) {
        if (kind == "static") return make_static(amplitude_rad);
        if (kind == "sinusoidal") return make_sinusoidal(amplitude_rad, period_s);
        if (kind == "random-walk") return make_random_walk(step_rad_per_sqrt_s, rng);
        throw std::domain_error("unknown drift kind: " + kind);
    }

    double angle(double t) const {
        switch (kind_) {
            case DriftKind::Static:
                return amplitude_;
            case DriftKind::Sinusoidal:
                return amplitude_ * std::sin(2.0 * std::numbers::pi * t / period_);
            case DriftKind::RandomWalk: {
                if (t <= 0.0) return 0.0;
                const double pos = t / dt_;
                const auto hi = static_cast<std::size_t>(std::ceil(pos));
                extend_walk(hi);
                const auto lo = static_cast<std::size_t>(std::floor(pos));
                const double frac = pos - static_cast<double>(lo);
                const auto& w = *walk_;
                return w[lo] + frac * (w[std::min(hi, w.size() - 1)] - w[lo]);
            }
        }
        return 0.0;
    }

    Mat2 unitary(double t) const { return su2_rotation(axis_, angle(t)); }

    DriftKind kind() const { return kind_; }
    Vec3 axis() const { return axis_; }

  private:
    void extend_walk(std::size_t upto) const {
        auto& w = *walk_;
        const double sigma = step_ * std::sqrt(dt_);
        while (w.size() <= upto) {
            Rng g = walk_rng_.at(w.size());
            w.push_back(w.back() + sigma * g.gaussian());
        }
    }

    DriftKind kind_ = DriftKind::Static;
    double amplitude_ = 0.0;
    double period_ = 1.0;
    double step_ = 0.0;
    double dt_ = 1.0;
    Vec3 axis_{0, 0, 1};
    Rng walk_rng_{0};
    std::shared_ptr<std::vector<double>> walk_;
};

}  // namespace qkdsim
