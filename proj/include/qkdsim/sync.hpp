#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <tuple>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkdsim/channel.hpp"
#include "qkdsim/code.hpp"
#include "qkdsim/states.hpp"

namespace qkdsim {

struct SyncError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SyncOptions {
    double window_ppm = 100e-6;      // period search half-window, relative
    double residual_gate = 0.4;      // discard events further than this * tau from slot center
    double dominance_sigma = 5.0;    // offset peak must beat runner-up by this many sqrt(votes)
    double min_resultant = 0.15;     // phase-coherence floor for a sharp period minimum
    std::size_t min_events = 100;
};

struct PeriodEstimate {
    double tau_s = 0.0;      // recovered period
    double t0_s = 0.0;       // recovered slot-0 epoch (near the first event)
    double resultant = 0.0;  // phase coherence in [0,1]; 1 = all events in phase
};

struct SlottedEvent {
    std::int64_t slot = 0;
    std::uint8_t detector = 0;
    std::int64_t truth_slot = -1;
};

struct SyncResult {
    double tau_b_s = 0.0;
    double t0_s = 0.0;
    std::int64_t frame_offset = 0;  // in [0, L_code*(M+1))
    double score_peak = 0.0;
    double score_runner_up = 0.0;
    std::int64_t votes_at_peak = 0;
    std::vector<SlottedEvent> assigned;
};

namespace detail {

// Length of the mean phasor of {t_i} folded at rate g (= 1/tau). Sharp
// maximum at the true pulse rate; robust to dark counts with no binning.
inline double resultant_length(std::span<const double> times, double rate) {
    double re = 0.0, im = 0.0;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (double t : times) {
        const double ph = two_pi * std::fma(t, rate, 0.0);
        re += std::cos(ph);
        im += std::sin(ph);
    }
    return std::sqrt(re * re + im * im) / static_cast<double>(times.size());
}

inline double golden_max(std::span<const double> times, double lo, double hi, double rel_tol) {
    constexpr double inv_phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = resultant_length(times, x1);
    double f2 = resultant_length(times, x2);
    while ((b - a) > rel_tol * a) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = resultant_length(times, x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = resultant_length(times, x1);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

// Recover the pulse period and slot-0 epoch from detection timestamps alone.
//
// The candidate grid is evaluated on a short prefix of events (where the
// coherence peak is wide enough to hit), then the estimate is refined on
// geometrically growing subsets and finally golden-section polished on the
// full set to 1e-9 relative precision. Works in rate space g = 1/tau.
inline PeriodEstimate recover_period(const std::vector<DetectionEvent>& events, double f_nominal,
                                     const SyncOptions& opt = {}) {
    if (events.size() < opt.min_events)
        throw SyncError("recover_period: need >= " + std::to_string(opt.min_events) + " events, got " +
                        std::to_string(events.size()));
    std::vector<double> times;
    times.reserve(events.size());
    for (const auto& e : events) times.push_back(e.timestamp_s);
    std::sort(times.begin(), times.end());
    const double t_first = times.front();
    for (auto& t : times) t -= t_first;  // keep phases numerically small

    const double w = opt.window_ppm;
    double g_lo = f_nominal * (1.0 - w), g_hi = f_nominal * (1.0 + w);

    // Close-pair bootstrap: consecutive gaps short enough that the slot count
    // is unambiguous inside the current uncertainty give direct rate
    // estimates n/dt; the median is robust to dark-count contamination. The
    // unambiguous horizon grows as the estimate sharpens. This narrows the
    // +/-100 ppm window to ~ppb cheaply; the contractual grid + golden
    // refinement then runs on the narrowed window (full window on fallback).
    double g_center = f_nominal;
    double g_uncertainty = w;  // relative
    {
        std::vector<double> ests;
        for (int pass = 0; pass < 24 && g_uncertainty > 3e-9; ++pass) {
            const double horizon = 0.2 / (g_uncertainty * g_center);
            ests.clear();
            for (std::size_t i = 1; i < times.size(); ++i) {
                const double dt = times[i] - times[i - 1];
                if (dt <= 0.0 || dt > horizon) continue;
                const double n = std::round(dt * g_center);
                if (n < 1.0) continue;
                ests.push_back(n / dt);
            }
            if (ests.size() < 16) break;
            const auto mid = ests.begin() + static_cast<std::ptrdiff_t>(ests.size() / 2);
            std::nth_element(ests.begin(), mid, ests.end());
            const double g_med = *mid;
            for (auto& e : ests) e = std::abs(e / g_med - 1.0);
            std::nth_element(ests.begin(), mid, ests.end());
            const double mad = *mid;
            const double spread = std::max(
                5.0 * mad / std::sqrt(static_cast<double>(ests.size())), 1e-9);
            if (g_med > g_lo && g_med < g_hi) g_center = g_med;
            if (spread >= g_uncertainty) break;  // no longer improving
            g_uncertainty = spread;
        }
    }

    // grid + ladder + golden polish over a candidate window; returns the
    // refined rate, its coherence, and whether the peak was sharp
    auto search = [&](double center, double window) {
        std::size_t prefix = std::min<std::size_t>(times.size(), 1024);
        // cap the coarse-stage span so the grid work stays bounded even when
        // the first events are very sparse in time
        const double span_cap = 100000.0 / (16.0 * window * f_nominal);
        while (prefix > opt.min_events && times[prefix - 1] > span_cap) --prefix;
        std::span<const double> sub(times.data(), prefix);

        const double grid_lo = std::max(g_lo, center * (1.0 - window));
        const double grid_hi = std::min(g_hi, center * (1.0 + window));
        const double span0 = std::max(sub.back(), 1.0 / f_nominal);
        const double dg = 1.0 / (8.0 * span0);
        double best_g = center, best_r = -1.0, sum_r = 0.0;
        std::size_t n_grid = 0;
        for (double g = grid_lo; g <= grid_hi; g += dg) {
            const double r = detail::resultant_length(sub, g);
            sum_r += r;
            ++n_grid;
            if (r > best_r) {
                best_r = r;
                best_g = g;
            }
        }
        const double mean_r = sum_r / static_cast<double>(std::max<std::size_t>(n_grid, 1));

        // refine on growing subsets; bracket shrinks with the subset span
        double span_prev = span0;
        while (true) {
            const double half = 1.0 / (2.0 * span_prev);
            best_g = detail::golden_max(sub, std::max(g_lo, best_g - half),
                                        std::min(g_hi, best_g + half), 1e-12);
            if (prefix == times.size()) break;
            prefix = std::min(times.size(), prefix * 4);
            sub = std::span<const double>(times.data(), prefix);
            span_prev = sub.back();
        }
        // final polish at the full span; converge well past the 1e-9 contract
        // so block-to-block comparisons are not limited by search quantization
        {
            const double half = 1.0 / (2.0 * times.back());
            best_g = detail::golden_max(times, std::max(g_lo, best_g - half),
                                        std::min(g_hi, best_g + half), 1e-12);
        }
        const double resultant = detail::resultant_length(times, best_g);
        const bool sharp =
            resultant >= opt.min_resultant && (n_grid < 30 || resultant >= 3.0 * mean_r);
        return std::tuple{best_g, resultant, sharp};
    };

    const double window = std::max(20.0 * g_uncertainty, 1e-7);
    auto [best_g, resultant, sharp] = search(g_center, window);
    if (!sharp && window < w) {
        // the bootstrap may have locked onto contamination: retry wide open
        std::tie(best_g, resultant, sharp) = search(f_nominal, w);
    }
    if (!sharp)
        throw SyncError("recover_period: no sharp period minimum (resultant " +
                        std::to_string(resultant) + ")");

    double re = 0.0, im = 0.0;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (double t : times) {
        re += std::cos(two_pi * t * best_g);
        im += std::sin(two_pi * t * best_g);
    }
    const double tau = 1.0 / best_g;
    double t0 = std::atan2(im, re) / two_pi * tau + t_first;
    // park t0 within half a period of the first event
    t0 -= tau * std::round((t0 - t_first) / tau);
    return {tau, t0, resultant};
}

// Quantize events onto the recovered slot raster; events with residual
// beyond the gate are dropped (jitter/dark rejection).
inline std::vector<SlottedEvent> assign_slots(const std::vector<DetectionEvent>& events, double tau_s,
                                              double t0_s, const SyncOptions& opt = {}) {
    std::vector<SlottedEvent> out;
    out.reserve(events.size());
    for (const auto& e : events) {
        const double x = (e.timestamp_s - t0_s) / tau_s;
        const double slot = std::round(x);
        if (std::abs(x - slot) > opt.residual_gate) continue;
        if (slot < 0) continue;
        out.push_back({static_cast<std::int64_t>(slot), e.detector, e.truth_slot});
    }
    return out;
}

namespace detail {

// Z-outcome tallies per frame position r = slot mod F: counts[r][bit].
struct FrameHistogram {
    std::vector<std::array<std::int64_t, 2>> counts;

    FrameHistogram(const std::vector<SlottedEvent>& events, std::int64_t frame_len)
        : counts(static_cast<std::size_t>(frame_len), {0, 0}) {
        for (const auto& e : events) {
            if (detector_basis(e.detector) != Basis::Z) continue;  // sync code is Z-encoded
            const auto r = static_cast<std::size_t>(e.slot % frame_len);
            ++counts[r][detector_bit(e.detector)];
        }
    }
};

}  // namespace detail

// Candidate-offset scoring: an event at slot s is a sync candidate for
// offset k when (s + k) mod (M+1) == 0; Z outcomes then vote +1/-1 on the
// code bit at index ((s + k) mod F) / (M+1). Histogram accumulation makes
// the full scan O(D + F*L) instead of O(D*F).
inline std::vector<std::int64_t> offset_scores(const std::vector<SlottedEvent>& events,
                                               const CorrelationCode& code, std::int64_t M) {
    const std::int64_t L = code.length();
    const std::int64_t F = L * (M + 1);
    detail::FrameHistogram hist(events, F);
    std::vector<std::int64_t> scores(static_cast<std::size_t>(F), 0);
    for (std::int64_t k = 0; k < F; ++k) {
        std::int64_t s = 0;
        for (std::int64_t j = 0; j < L; ++j) {
            const std::int64_t r = ((j * (M + 1) - k) % F + F) % F;
            const auto& c = hist.counts[static_cast<std::size_t>(r)];
            const std::uint8_t bit = code.bits[static_cast<std::size_t>(j)];
            s += c[bit] - c[1 - bit];
        }
        scores[static_cast<std::size_t>(k)] = s;
    }
    return scores;
}

// Direct O(D*F) scorer; the oracle the histogram path is tested against.
inline std::vector<std::int64_t> offset_scores_reference(const std::vector<SlottedEvent>& events,
                                                         const CorrelationCode& code, std::int64_t M) {
    const std::int64_t L = code.length();
    const std::int64_t F = L * (M + 1);
    std::vector<std::int64_t> scores(static_cast<std::size_t>(F), 0);
    for (std::int64_t k = 0; k < F; ++k) {
        std::int64_t s = 0;
        for (const auto& e : events) {
            if (detector_basis(e.detector) != Basis::Z) continue;
            if ((e.slot + k) % (M + 1) != 0) continue;
            const std::int64_t idx = ((e.slot + k) % F) / (M + 1);
            const std::uint8_t want = code.bits[static_cast<std::size_t>(idx)];
            s += detector_bit(e.detector) == want ? 1 : -1;
        }
        scores[static_cast<std::size_t>(k)] = s;
    }
    return scores;
}

inline SyncResult estimate_offset(const std::vector<SlottedEvent>& events, const CorrelationCode& code,
                                  std::int64_t M, const PeriodEstimate& period,
                                  const SyncOptions& opt = {}) {
    if (events.empty()) throw SyncError("estimate_offset: no slotted events");
    const std::int64_t F = code.length() * (M + 1);
    const auto scores = offset_scores(events, code, M);

    std::int64_t best_k = 0, runner_k = -1;
    for (std::int64_t k = 1; k < F; ++k) {
        if (scores[k] > scores[best_k]) best_k = k;
    }
    for (std::int64_t k = 0; k < F; ++k) {
        if (k == best_k) continue;
        if (runner_k < 0 || scores[k] > scores[runner_k]) runner_k = k;
    }

    // votes at the peak = Z-outcome events that are sync candidates there
    std::int64_t votes = 0;
    for (const auto& e : events) {
        if (detector_basis(e.detector) == Basis::Z && (e.slot + best_k) % (M + 1) == 0) ++votes;
    }

    const double need = opt.dominance_sigma * std::sqrt(static_cast<double>(std::max<std::int64_t>(votes, 1)));
    if (static_cast<double>(scores[best_k] - scores[runner_k]) < need)
        throw SyncError("estimate_offset: peak not dominant (peak " + std::to_string(scores[best_k]) +
                        ", runner-up " + std::to_string(scores[runner_k]) + ", need margin " +
                        std::to_string(need) + "); extend acquisition");

    SyncResult res;
    res.tau_b_s = period.tau_s;
    res.t0_s = period.t0_s;
    res.frame_offset = best_k;
    res.score_peak = static_cast<double>(scores[best_k]);
    res.score_runner_up = static_cast<double>(scores[runner_k]);
    res.votes_at_peak = votes;
    res.assigned.reserve(events.size());
    for (const auto& e : events) {
        res.assigned.push_back({e.slot + best_k, e.detector, e.truth_slot});
    }
    return res;
}

// Piecewise period recovery for long captures: the first block performs the
// full acquisition, later blocks refine around the running estimate and keep
// slot numbering continuous through a shared t0 chain.
struct TrackedBlock {
    PeriodEstimate period;
    std::size_t first_event = 0;
    std::size_t n_events = 0;
    bool drift_warning = false;
};

inline std::vector<TrackedBlock> track_period(const std::vector<DetectionEvent>& events,
                                              std::size_t block_size, double f_nominal,
                                              const SyncOptions& opt = {}) {
    if (block_size < opt.min_events) throw SyncError("track_period: block_size too small");
    if (events.size() <= block_size) {
        // degenerate single block: identical to one recover_period call
        return {TrackedBlock{recover_period(events, f_nominal, opt), 0, events.size(), false}};
    }

    std::vector<DetectionEvent> sorted = events;
    std::sort(sorted.begin(), sorted.end(),
              [](const DetectionEvent& a, const DetectionEvent& b) { return a.timestamp_s < b.timestamp_s; });

    std::vector<TrackedBlock> out;
    double prev_tau = 0.0, prev_t0 = 0.0;
    for (std::size_t begin = 0; begin < sorted.size(); begin += block_size) {
        std::size_t end = std::min(begin + block_size, sorted.size());
        // absorb a short tail into the final block instead of emitting a
        // noisy fractional one
        if (sorted.size() - end < block_size) end = sorted.size();
        std::vector<DetectionEvent> block(sorted.begin() + static_cast<std::ptrdiff_t>(begin),
                                          sorted.begin() + static_cast<std::ptrdiff_t>(end));
        SyncOptions o = opt;
        if (!out.empty()) o.window_ppm = std::max(2e-6, opt.window_ppm / 10.0);
        const double f_center = out.empty() ? f_nominal : 1.0 / prev_tau;
        PeriodEstimate pe = recover_period(block, f_center, o);
        TrackedBlock tb{pe, begin, end - begin, false};
        if (!out.empty()) {
            // keep the epoch on the same slot raster as the previous block
            tb.period.t0_s = pe.t0_s - pe.tau_s * std::round((pe.t0_s - prev_t0) / pe.tau_s);
            if (std::abs(pe.tau_s - prev_tau) / prev_tau >= 1e-6) tb.drift_warning = true;
        }
        prev_tau = tb.period.tau_s;
        prev_t0 = tb.period.t0_s;
        out.push_back(std::move(tb));
        if (end == sorted.size()) break;
    }
    return out;
}

}  // namespace qkdsim
