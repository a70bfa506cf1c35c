#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qkdsim/frames.hpp"
#include "qkdsim/polarization.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim {

struct ChannelModel {
    double loss_db = 18.0;           // fiber link attenuation
    DriftTrajectory drift = DriftTrajectory::make_static(0.0);
    double background_rate_hz = 0.0; // post-DWDM residual, folded into darks
    double e_mis = 0.01;             // intrinsic misalignment floor

    double transmittance() const { return std::pow(10.0, -loss_db / 10.0); }
};

struct DetectorModel {
    double efficiency = 0.60;
    double dead_time_s = 40e-9;
    double jitter_sigma_s = 30e-12;   // FWHM ~ 70 ps
    double dark_rate_hz = 40.0;       // per detector
    double rx_insertion_db = 0.0;     // receiver-chain loss ahead of the SNSPDs
};

struct ReceiverClock {
    double offset_s = 0.0;
    double drift_ppm = 0.0;  // Bob's clock frequency error vs Alice; |ppm| <= 100
};

struct DetectionEvent {
    double timestamp_s = 0.0;
    std::uint8_t detector = 0;
    std::int64_t truth_slot = -1;  // simulation metadata; -1 for dark counts
};

inline double system_efficiency(const ChannelModel& ch, const DetectorModel& det) {
    return std::pow(10.0, -(ch.loss_db + det.rx_insertion_db) / 10.0) * det.efficiency;
}

inline double click_probability(double intensity, double eta_sys) {
    return -std::expm1(-intensity * eta_sys);
}

// Monte Carlo of the lossy channel plus four-detector receiver.
//
// Per pulse: photon number ~ Poisson(intensity), each photon surviving with
// probability transmittance * efficiency (so P(click) = 1 - e^{-k eta});
// a surviving pulse produces one click whose detector is drawn from the Born
// probabilities of the drift-rotated state (detector saturation model).
// Dark counts are independent Poisson processes per detector. Dead time is
// applied per detector on pre-jitter times; jitter is added at time-tagging.
//
// The pulse loop is skip-ahead: slots between candidate clicks are skipped
// geometrically under the max click probability and candidates are thinned
// to their true probability, so cost scales with detections, not pulses.
inline std::vector<DetectionEvent> transmit(const FramePlan& plan, const ChannelModel& ch,
                                            const DetectorModel& det, const ReceiverClock& clk,
                                            const ProtocolConfig& cfg, Rng& rng,
                                            const Mat2& receiver_unitary = Mat2::identity()) {
    if (std::abs(clk.drift_ppm) > 100.0)
        throw std::domain_error("ReceiverClock.drift_ppm outside +/-100 ppm contract");
    cfg.validate();

    const double eta = system_efficiency(ch, det);
    const double p_mu_click = click_probability(cfg.mu, eta);
    const double p_nu_click = click_probability(cfg.nu, eta);
    const double p_max = p_mu_click;
    const double tau_bob = (1.0 / cfg.f) * (1.0 + clk.drift_ppm * 1e-6);
    const std::int64_t n_slots = plan.total_slots();
    const Mat2 u_mis = misalignment_unitary(ch.e_mis);

    Rng skip_rng = rng.fork("channel-skip");
    Rng dark_rng = rng.fork("channel-darks");
    Rng jitter_rng = rng.fork("channel-jitter");

    // signal clicks, in slot order (already time-ordered pre-jitter)
    std::vector<DetectionEvent> per_det[4];
    if (p_max > 0.0 && n_slots > 0) {
        const double log1m = std::log1p(-p_max);
        std::int64_t slot = 0;
        while (slot < n_slots) {
            if (p_max < 1.0) {
                double u = skip_rng.uniform();
                if (u < 1e-300) u = 1e-300;
                const double skip = std::floor(std::log(u) / log1m);
                if (skip >= static_cast<double>(n_slots - slot)) break;  // beyond the plan
                slot += static_cast<std::int64_t>(skip);
            }
            const PulseRecord rec = plan.pulse_at(slot);
            const double p_click = rec.intensity == IntensityClass::Signal ? p_mu_click : p_nu_click;
            if (skip_rng.uniform() < p_click / p_max) {
                const double t_emit = static_cast<double>(slot) / cfg.f;
                const Mat2 u_tot = u_mis * receiver_unitary * ch.drift.unitary(t_emit);
                const auto probs = outcome_probabilities(u_tot, rec.state);
                double u = skip_rng.uniform();
                int d = 0;
                for (; d < 3; ++d) {
                    if (u < probs[d]) break;
                    u -= probs[d];
                }
                const double t_click = static_cast<double>(slot) * tau_bob + clk.offset_s;
                per_det[d].push_back({t_click, static_cast<std::uint8_t>(d), slot});
            }
            ++slot;
        }
    }

    // dark + residual background, uniform in time
    const double dark_rate = det.dark_rate_hz + ch.background_rate_hz / 4.0;
    const double t_end = static_cast<double>(n_slots) * tau_bob + clk.offset_s;
    if (dark_rate > 0.0) {
        for (int d = 0; d < 4; ++d) {
            Rng g = dark_rng.fork(static_cast<std::uint64_t>(d));
            double t = clk.offset_s;
            std::vector<DetectionEvent> darks;
            while ((t += g.exponential(dark_rate)) < t_end) {
                darks.push_back({t, static_cast<std::uint8_t>(d), -1});
            }
            std::vector<DetectionEvent> merged;
            merged.reserve(per_det[d].size() + darks.size());
            std::merge(per_det[d].begin(), per_det[d].end(), darks.begin(), darks.end(),
                       std::back_inserter(merged),
                       [](const DetectionEvent& a, const DetectionEvent& b) {
                           return a.timestamp_s < b.timestamp_s;
                       });
            per_det[d] = std::move(merged);
        }
    }

    std::vector<DetectionEvent> out;
    for (int d = 0; d < 4; ++d) {
        double last_kept = -1e300;
        for (const auto& ev : per_det[d]) {
            if (ev.timestamp_s - last_kept < det.dead_time_s) continue;
            last_kept = ev.timestamp_s;
            DetectionEvent e = ev;
            if (det.jitter_sigma_s > 0.0) e.timestamp_s += jitter_rng.gaussian(0.0, det.jitter_sigma_s);
            out.push_back(e);
        }
    }
    std::sort(out.begin(), out.end(), [](const DetectionEvent& a, const DetectionEvent& b) {
        return a.timestamp_s < b.timestamp_s;
    });
    return out;
}

}  // namespace qkdsim
