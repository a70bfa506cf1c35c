#pragma once

#include <cmath>
#include <cstdint>

#include "qkdsim/finite_key.hpp"

namespace qkdsim {

struct OptimizeResult {
    double mu = 0, nu = 0, p_mu = 0, p_z = 0;
    double predicted_skr = 0;
    bool feasible = false;
};

namespace detail {

inline double predicted_skr_at(double mu, double nu, double p_mu, double p_z,
                               const ProtocolConfig& base, double loss_db,
                               const DetectorModel& det, double e_mis, double nz_target) {
    if (!(nu < mu) || nu <= 0.0 || mu >= 1.0) return -1.0;
    ProtocolConfig cfg = base;
    cfg.mu = mu;
    cfg.nu = nu;
    cfg.p_mu = p_mu;
    cfg.p_z_alice = p_z;
    // accumulate until the expected Z-basis sample hits the block target
    const CountStatistics probe = expected_counts(cfg, loss_db, det, e_mis, 1.0);
    const double nz_per_s = probe.n_z();
    if (nz_per_s <= 0.0) return -1.0;
    const double t = nz_target / nz_per_s;
    const CountStatistics c = expected_counts(cfg, loss_db, det, e_mis, t);
    SecurityParams sec{cfg.eps_sec, cfg.eps_cor};
    const DecoyBounds b = decoy_bounds(c, cfg, sec);
    const KeyRateReport rep = key_length(b, c, cfg, sec);
    return rep.skr_bits_per_s;
}

template <typename F>
double golden_max_1d(F f, double lo, double hi, int iters) {
    constexpr double inv_phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    return f1 > f2 ? x1 : x2;
}

}  // namespace detail

// Maximize the predicted l/t over (mu, nu, p_mu, p_z) at the given loss:
// coarse grid, then coordinate-wise golden-section refinement. Deterministic;
// grid ties resolve to the first (lexicographically smallest) tuple.
inline OptimizeResult optimize_parameters(double loss_db, const DetectorModel& det, double e_mis,
                                          double block_nz_target,
                                          const ProtocolConfig& base = ProtocolConfig{}) {
    if (loss_db < 0.0) throw std::domain_error("optimize_parameters: loss must be >= 0");
    OptimizeResult best;
    best.predicted_skr = -1.0;

    auto eval = [&](double mu, double nu, double pm, double pz) {
        return detail::predicted_skr_at(mu, nu, pm, pz, base, loss_db, det, e_mis, block_nz_target);
    };

    for (double mu = 0.20; mu <= 0.96 + 1e-12; mu += 0.04) {
        for (double nu = 0.02; nu <= 0.30 + 1e-12; nu += 0.02) {
            if (nu >= mu) continue;
            for (double pm = 0.55; pm <= 0.95 + 1e-12; pm += 0.05) {
                for (double pz = 0.60; pz <= 0.98 + 1e-12; pz += 0.04) {
                    const double skr = eval(mu, nu, pm, pz);
                    if (skr > best.predicted_skr) {
                        best = {mu, nu, pm, pz, skr, skr > 0.0};
                    }
                }
            }
        }
    }
    if (best.predicted_skr <= 0.0) return best;  // infeasible everywhere: report best grid point

    for (int round = 0; round < 3; ++round) {
        best.mu = detail::golden_max_1d(
            [&](double v) { return eval(v, best.nu, best.p_mu, best.p_z); },
            std::max(best.nu + 1e-3, best.mu - 0.08), std::min(0.999, best.mu + 0.08), 24);
        best.nu = detail::golden_max_1d(
            [&](double v) { return eval(best.mu, v, best.p_mu, best.p_z); },
            std::max(1e-3, best.nu - 0.04), std::min(best.mu - 1e-3, best.nu + 0.04), 24);
        best.p_mu = detail::golden_max_1d(
            [&](double v) { return eval(best.mu, best.nu, v, best.p_z); },
            std::max(0.501, best.p_mu - 0.1), std::min(0.999, best.p_mu + 0.1), 24);
        best.p_z = detail::golden_max_1d(
            [&](double v) { return eval(best.mu, best.nu, best.p_mu, v); },
            std::max(0.501, best.p_z - 0.08), std::min(0.999, best.p_z + 0.08), 24);
    }
    best.predicted_skr = eval(best.mu, best.nu, best.p_mu, best.p_z);
    best.feasible = best.predicted_skr > 0.0;
    return best;
}

}  // namespace qkdsim
