#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>

#include "qkdsim/channel.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/sifting.hpp"

namespace qkdsim {

struct SecurityParams {
    double eps_sec = 1e-9;
    double eps_cor = 1e-9;
    int n_eps_terms = 19;  // union-bound terms of the one-decoy key-length formula
};

inline double binary_entropy(double x) {
    if (x < 0.0 || x > 1.0) throw std::domain_error("binary_entropy: argument outside [0,1]");
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

// Hoeffding deviation term sqrt(n ln(1/eps) / 2).
inline double hoeffding_delta(double n, double eps) {
    if (n < 0.0) throw std::domain_error("hoeffding_delta: n must be >= 0");
    if (!(eps > 0.0 && eps <= 1.0)) throw std::domain_error("hoeffding_delta: eps must be in (0,1]");
    return std::sqrt(0.5 * n * std::log(1.0 / eps));
}

// Random-sampling-without-replacement correction for estimating the key-basis
// phase error rate from the check basis.
inline double gamma_correction(double a, double b, double c, double d, int n_terms = 19) {
    const double num = (c + d) * (1.0 - b) * b;
    if (num <= 0.0 || c <= 0.0 || d <= 0.0) return 0.0;
    const double k2 = static_cast<double>(n_terms) * static_cast<double>(n_terms);
    const double arg = (c + d) / (c * d * (1.0 - b) * b) * k2 / (a * a);
    if (arg <= 1.0) return 0.0;
    return std::sqrt(num / (c * d * std::log(2.0)) * std::log2(arg));
}

struct DecoyBounds {
    double s_z0_L = 0;   // vacuum-event lower bound, key basis
    double s_z1_L = 0;   // single-photon lower bound, key basis
    double s_x0_L = 0;
    double s_x1_L = 0;   // single-photon lower bound, check basis
    double v_x1_U = 0;   // single-photon error upper bound, check basis
    double phi_z_U = 0;  // phase-error upper bound
    bool feasible = true;
};

struct KeyRateReport {
    double s_z0_L = 0;
    double s_z1_L = 0;
    double phi_z_U = 0;
    double lambda_ec = 0;
    double l_bits = 0;
    double skr_bits_per_s = 0;      // l / t
    double skr_eq_norm_bits_per_s = 0;  // l * q * f / N, the published normalization
    double qber_z = 0;
    bool feasible = true;

    void write_json(std::ostream& os) const {
        os << "{\n"
           << "  \"s_z0_L\": " << s_z0_L << ",\n"
           << "  \"s_z1_L\": " << s_z1_L << ",\n"
           << "  \"phi_z_U\": " << phi_z_U << ",\n"
           << "  \"lambda_ec\": " << lambda_ec << ",\n"
           << "  \"l_bits\": " << l_bits << ",\n"
           << "  \"skr_bits_per_s\": " << skr_bits_per_s << ",\n"
           << "  \"skr_eq_norm_bits_per_s\": " << skr_eq_norm_bits_per_s << ",\n"
           << "  \"qber_z\": " << qber_z << ",\n"
           << "  \"feasible\": " << (feasible ? "true" : "false") << "\n"
           << "}\n";
    }
};

namespace detail {

struct BasisBounds {
    double s0_L = 0, s0_U = 0, s1_L = 0, v1_U = 0;
    double n = 0, m = 0;
};

// One-decoy statistical bound chain for one basis.
//
// tau_n weights are the Poissonian photon-number fractions of the two-intensity
// source. Observed counts are Hoeffding-corrected at the stated epsilon and
// rescaled per intensity, giving the standard two-point decoy estimates:
// vacuum from the intensity extrapolation, the vacuum upper bound from the
// decoy-intensity error counts (vacuum events err half the time, so twice the
// zero-intensity error extrapolation plus a sampling term bounds them), and
// the single-photon count from the two-intensity difference with the vacuum
// share removed.
inline BasisBounds basis_bounds(double n_mu, double n_nu, double m_mu, double m_nu,
                                const ProtocolConfig& cfg, double eps) {
    BasisBounds r;
    const double mu = cfg.mu, nu = cfg.nu, p_mu = cfg.p_mu, p_nu = 1.0 - cfg.p_mu;
    const double tau0 = p_mu * std::exp(-mu) + p_nu * std::exp(-nu);
    const double tau1 = p_mu * mu * std::exp(-mu) + p_nu * nu * std::exp(-nu);
    r.n = n_mu + n_nu;
    r.m = m_mu + m_nu;
    const double dn = hoeffding_delta(r.n, eps);
    const double dm = hoeffding_delta(r.m, eps);

    const double ntp_mu = std::exp(mu) / p_mu * (n_mu + dn);
    const double ntm_nu = std::exp(nu) / p_nu * std::max(n_nu - dn, 0.0);
    const double mtp_mu = std::exp(mu) / p_mu * (m_mu + dm);
    const double mtp_nu = std::exp(nu) / p_nu * (m_nu + dm);
    const double mtm_nu = std::exp(nu) / p_nu * std::max(m_nu - dm, 0.0);

    // no count of events can exceed the sifted sample itself
    r.s0_L = std::clamp(tau0 * (mu * ntm_nu - nu * ntp_mu) / (mu - nu), 0.0, r.n);
    r.s0_U = std::min(2.0 * (tau0 * mtp_nu + dn), r.n);

    double s1 = tau1 * mu / (nu * (mu - nu)) *
                (ntm_nu - (nu * nu) / (mu * mu) * ntp_mu -
                 (mu * mu - nu * nu) / (mu * mu) * r.s0_U / tau0);
    // more single-photon events than detections minus vacuum events is
    // unphysical; taking the min keeps a valid lower bound
    s1 = std::min(s1, r.n - r.s0_L);
    r.s1_L = std::max(s1, 0.0);
    r.v1_U = std::max(tau1 * (mtp_mu - mtm_nu) / (mu - nu), 0.0);
    return r;
}

}  // namespace detail

inline DecoyBounds decoy_bounds(const CountStatistics& stats, const ProtocolConfig& cfg,
                                const SecurityParams& sec) {
    if (!(cfg.nu < cfg.mu)) throw std::domain_error("decoy_bounds: requires nu < mu");
    stats.check();

    const auto z = detail::basis_bounds(stats.n_z_mu, stats.n_z_nu, stats.m_z_mu, stats.m_z_nu,
                                        cfg, sec.eps_sec);
    const auto x = detail::basis_bounds(stats.n_x_mu, stats.n_x_nu, stats.m_x_mu, stats.m_x_nu,
                                        cfg, sec.eps_sec);

    DecoyBounds b;
    b.s_z0_L = z.s0_L;
    b.s_z1_L = z.s1_L;
    b.s_x0_L = x.s0_L;
    b.s_x1_L = x.s1_L;
    b.v_x1_U = x.v1_U;

    if (x.s1_L <= 0.0 || z.s1_L <= 0.0) {
        b.phi_z_U = 0.5;
        b.feasible = false;
        return b;
    }
    const double e_x1_U = x.v1_U / x.s1_L;
    double phi = e_x1_U + gamma_correction(sec.eps_sec, e_x1_U, x.s1_L, z.s1_L, sec.n_eps_terms);
    if (phi > 0.5) {
        phi = 0.5;
        b.feasible = false;
    }
    b.phi_z_U = phi;
    return b;
}

// Secret key length
//   l = s_z0_L + s_z1_L (1 - h(phi_z_U)) - lambda_EC
//       - 6 log2(19/eps_sec) - log2(2/eps_cor)
// with lambda_EC = n_z f_e h(e_z), floored and clamped at zero. The primary
// rate is l / t; the q f / N normalization of the published formula is also
// reported (they differ by the factor q when N counts every pulse).
inline KeyRateReport key_length(const DecoyBounds& b, const CountStatistics& stats,
                                const ProtocolConfig& cfg, const SecurityParams& sec) {
    if (stats.t_s <= 0.0) throw std::domain_error("key_length: t_s must be > 0 for a rate");
    KeyRateReport rep;
    rep.s_z0_L = b.s_z0_L;
    rep.s_z1_L = b.s_z1_L;
    rep.phi_z_U = b.phi_z_U;
    rep.feasible = b.feasible;

    const double n_z = stats.n_z();
    rep.qber_z = n_z > 0.0 ? stats.m_z() / n_z : 0.0;
    rep.lambda_ec = n_z * cfg.f_e * binary_entropy(rep.qber_z);

    double l = b.s_z0_L + b.s_z1_L * (1.0 - binary_entropy(b.phi_z_U)) - rep.lambda_ec -
               6.0 * std::log2(19.0 / sec.eps_sec) - std::log2(2.0 / sec.eps_cor);
    l = std::floor(l);
    if (!b.feasible) l = 0.0;
    rep.l_bits = std::max(l, 0.0);
    rep.skr_bits_per_s = rep.l_bits / stats.t_s;
    const double n_total = stats.N_pulses > 0.0 ? stats.N_pulses : cfg.f * stats.t_s;
    rep.skr_eq_norm_bits_per_s = rep.l_bits * cfg.q() * cfg.f / n_total;
    return rep;
}

// Analytic detection model used for prediction and parameter optimization:
// per intensity k the click probability is D_k = 1 - (1-p_dc) e^{-k eta} with
// eta the end-to-end system efficiency and p_dc the in-slot dark probability
// of the sifted basis pair; errors combine the dark half-rate with the
// misalignment floor.
inline CountStatistics expected_counts(const ProtocolConfig& cfg, double loss_db,
                                       const DetectorModel& det, double e_mis, double duration_s) {
    if (loss_db < 0.0) throw std::domain_error("expected_counts: loss_db must be >= 0");
    if (duration_s <= 0.0) throw std::domain_error("expected_counts: duration must be > 0");
    const double eta = std::pow(10.0, -(loss_db + det.rx_insertion_db) / 10.0) * det.efficiency;
    const double p_dc = 2.0 * det.dark_rate_hz / cfg.f;  // two detectors per sifted basis
    const double n_pulses = cfg.f * duration_s;
    const double n_key = n_pulses * cfg.q();

    CountStatistics s;
    s.t_s = duration_s;
    s.N_pulses = n_pulses;
    auto fill = [&](double k, double p_k, double p_basis, double& n_out, double& m_out) {
        const double sig = -std::expm1(-k * eta);
        const double d_k = sig + (1.0 - sig) * p_dc;
        const double e_k = 0.5 * p_dc * (1.0 - sig) + e_mis * sig;
        const double base = n_key * p_k * p_basis * cfg.p_z_bob;
        n_out = base * d_k;
        m_out = base * e_k;
    };
    fill(cfg.mu, cfg.p_mu, cfg.p_z_alice, s.n_z_mu, s.m_z_mu);
    fill(cfg.nu, 1.0 - cfg.p_mu, cfg.p_z_alice, s.n_z_nu, s.m_z_nu);
    fill(cfg.mu, cfg.p_mu, 1.0 - cfg.p_z_alice, s.n_x_mu, s.m_x_mu);
    fill(cfg.nu, 1.0 - cfg.p_mu, 1.0 - cfg.p_z_alice, s.n_x_nu, s.m_x_nu);
    return s;
}

}  // namespace qkdsim
