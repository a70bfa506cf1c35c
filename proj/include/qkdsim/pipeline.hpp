#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "qkdsim/channel.hpp"
#include "qkdsim/code.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/feedback.hpp"
#include "qkdsim/finite_key.hpp"
#include "qkdsim/frames.hpp"
#include "qkdsim/io.hpp"
#include "qkdsim/optimize.hpp"
#include "qkdsim/sifting.hpp"
#include "qkdsim/sync.hpp"

namespace qkdsim {

// Everything one experiment run needs, parsed from one config file.
struct RunParams {
    ProtocolConfig proto;
    double loss_db = 18.0;
    std::string drift_kind = "static";
    double drift_amplitude_rad = 0.0;
    double drift_period_s = 3600.0;
    double drift_step_rad = 0.003;
    double e_mis = 0.01;
    DetectorModel det;
    ReceiverClock clock{1.7e-7, 20.0};
    double disclose_fraction = 0.01;
    double target_detections = 1e6;
    std::uint64_t max_pulses = 2'000'000'000ULL;
    SyncOptions sync;
    FeedbackConfig feedback;
    double duration_s = 3600.0;  // feedback-demo span

    static RunParams from_file(const std::string& path) {
        const KeyValueFile kv = KeyValueFile::parse_file(path);
        return from_key_values(kv);
    }

    static RunParams from_key_values(const KeyValueFile& kv) {
        RunParams p;
        p.proto = ProtocolConfig::from_key_values(kv);
        p.loss_db = kv.get_double("channel.loss_db", p.loss_db);
        p.drift_kind = kv.get_string("channel.drift_kind", p.drift_kind);
        p.drift_amplitude_rad = kv.get_double("channel.drift_amplitude_rad", p.drift_amplitude_rad);
        p.drift_period_s = kv.get_double("channel.drift_period_s", p.drift_period_s);
        p.drift_step_rad = kv.get_double("channel.drift_step_rad_per_sqrt_s", p.drift_step_rad);
        p.e_mis = kv.get_double("channel.e_mis", p.e_mis);
        p.det.efficiency = kv.get_double("detector.efficiency", p.det.efficiency);
        p.det.dead_time_s = kv.get_double("detector.dead_time_s", p.det.dead_time_s);
        p.det.jitter_sigma_s = kv.get_double("detector.jitter_sigma_s", p.det.jitter_sigma_s);
        p.det.dark_rate_hz = kv.get_double("detector.dark_rate_hz", p.det.dark_rate_hz);
        p.det.rx_insertion_db = kv.get_double("detector.rx_insertion_db", p.det.rx_insertion_db);
        p.clock.offset_s = kv.get_double("clock.offset_s", p.clock.offset_s);
        p.clock.drift_ppm = kv.get_double("clock.drift_ppm", p.clock.drift_ppm);
        p.disclose_fraction = kv.get_double("run.disclose_fraction", p.disclose_fraction);
        p.target_detections = kv.get_double("run.target_detections", p.target_detections);
        p.max_pulses = static_cast<std::uint64_t>(
            kv.get_int("run.max_pulses", static_cast<std::int64_t>(p.max_pulses)));
        p.duration_s = kv.get_double("run.duration_s", p.duration_s);
        p.sync.residual_gate = kv.get_double("sync.residual_gate", p.sync.residual_gate);
        p.sync.dominance_sigma = kv.get_double("sync.dominance_sigma", p.sync.dominance_sigma);
        p.sync.window_ppm = kv.get_double("sync.window_ppm", p.sync.window_ppm);
        p.feedback.qber_threshold = kv.get_double("feedback.qber_threshold", p.feedback.qber_threshold);
        p.feedback.step_v = kv.get_double("feedback.step_v", p.feedback.step_v);
        p.feedback.lr = kv.get_double("feedback.lr", p.feedback.lr);
        p.feedback.max_iters = static_cast<int>(kv.get_int("feedback.max_iters", p.feedback.max_iters));
        p.feedback.interval_s = kv.get_double("feedback.interval_s", p.feedback.interval_s);
        return p;
    }

    ChannelModel channel(const Rng& rng) const {
        ChannelModel ch;
        ch.loss_db = loss_db;
        ch.e_mis = e_mis;
        ch.drift = DriftTrajectory::parse(drift_kind, drift_amplitude_rad, drift_period_s,
                                          drift_step_rad, rng);
        return ch;
    }
};

struct SimulationReport {
    CountStatistics counts;
    SyncResult sync;
    QberEstimate disclosed_qber;
    KeyRateReport keyrate;
    std::uint64_t pulses = 0;
    std::uint64_t detections = 0;
};

namespace detail {

// Size the emission window so the detection target is met with ~10 sigma of
// headroom, within the pulse cap.
inline std::int64_t plan_slots(const RunParams& p) {
    ChannelModel loss_only;
    loss_only.loss_db = p.loss_db;
    const double eta = system_efficiency(loss_only, p.det);
    double per_slot = 0.0;
    const double p_sync = 1.0 / static_cast<double>(p.proto.M + 1);
    per_slot += p_sync * click_probability(p.proto.mu, eta);
    const double key_mix = p.proto.p_mu * click_probability(p.proto.mu, eta) +
                           (1.0 - p.proto.p_mu) * click_probability(p.proto.nu, eta);
    per_slot += (1.0 - p_sync) * key_mix;
    per_slot += 4.0 * p.det.dark_rate_hz / p.proto.f;
    // dead-time haircut: each click blinds its detector for dead_time * f slots
    const double dead_loss =
        std::min(0.5, (per_slot / 4.0) * p.det.dead_time_s * p.proto.f);
    per_slot *= 1.0 - dead_loss;
    const double want = p.target_detections;
    const double slots = (want + 12.0 * std::sqrt(want)) / std::max(per_slot, 1e-300);
    const double frames = std::ceil(slots / static_cast<double>(p.proto.frame_length()));
    const auto capped = std::min(static_cast<double>(p.max_pulses),
                                 frames * static_cast<double>(p.proto.frame_length()));
    return std::max<std::int64_t>(static_cast<std::int64_t>(capped) / p.proto.frame_length(), 1);
}

// The correlation search aligns frames (offset mod F); the absolute frame
// index comes from the shared coarse clock, as in the deployed system where
// classical framing numbers the frames. The raster anchor sits m0 slots past
// Bob's clock origin and the recovered offset k satisfies k = m0 (mod F), so
// the residual multiple of F is read off the coarse clock.
inline std::int64_t absolute_shift(const SyncResult& sync, double known_offset_s,
                                   std::int64_t frame_len) {
    const auto m0 =
        static_cast<std::int64_t>(std::llround((sync.t0_s - known_offset_s) / sync.tau_b_s));
    const double w = std::round(static_cast<double>(m0 - sync.frame_offset) /
                                static_cast<double>(frame_len));
    return static_cast<std::int64_t>(w) * frame_len;
}

}  // namespace detail

// transmitter -> channel -> sync -> sift -> finite key.
inline SimulationReport run_simulate(const RunParams& params) {
    params.proto.validate();
    Rng rng(params.proto.seed);

    Rng code_rng = rng.fork("code");
    const CorrelationCode code = generate_code(params.proto.L_code, code_rng);
    const std::int64_t frames = detail::plan_slots(params);
    const FramePlan plan(code, params.proto, frames, rng);
    const DisclosureSet disclosed(plan, params.disclose_fraction, rng);

    const ChannelModel ch = params.channel(rng);
    Rng ch_rng = rng.fork("channel");
    const std::vector<DetectionEvent> events =
        transmit(plan, ch, params.det, params.clock, params.proto, ch_rng);

    const PeriodEstimate period = recover_period(events, params.proto.f, params.sync);
    const auto slotted = assign_slots(events, period.tau_s, period.t0_s, params.sync);
    SyncResult sync = estimate_offset(slotted, code, params.proto.M, period, params.sync);

    const std::int64_t fix =
        detail::absolute_shift(sync, params.clock.offset_s, params.proto.frame_length());
    if (fix != 0) {
        for (auto& e : sync.assigned) e.slot += fix;
    }

    SimulationReport rep;
    rep.pulses = static_cast<std::uint64_t>(plan.total_slots());
    rep.detections = events.size();
    rep.sync = sync;
    rep.counts = sift(plan, sync.assigned, disclosed);
    rep.disclosed_qber = estimate_qber(plan, sync.assigned, disclosed);
    SecurityParams sec{params.proto.eps_sec, params.proto.eps_cor};
    const DecoyBounds bounds = decoy_bounds(rep.counts, params.proto, sec);
    rep.keyrate = key_length(bounds, rep.counts, params.proto, sec);
    return rep;
}

// Pure analysis of a stored counts file (no simulation).
inline KeyRateReport run_keyrate(const std::string& counts_path, const ProtocolConfig& proto) {
    const KeyValueFile kv = KeyValueFile::parse_file(counts_path);
    ProtocolConfig cfg = proto;
    cfg.mu = kv.get_double("mu", cfg.mu);
    cfg.nu = kv.get_double("nu", cfg.nu);
    cfg.p_mu = kv.get_double("p_mu", cfg.p_mu);
    cfg.p_z_alice = kv.get_double("p_z_alice", cfg.p_z_alice);
    cfg.M = kv.get_int("M", cfg.M);
    cfg.validate();
    const CountStatistics stats = CountStatistics::from_key_values(kv);
    SecurityParams sec{cfg.eps_sec, cfg.eps_cor};
    const DecoyBounds b = decoy_bounds(stats, cfg, sec);
    return key_length(b, stats, cfg, sec);
}

struct SweepRow {
    double loss_db = 0.0;
    std::optional<double> predicted_skr;
    std::optional<double> simulated_skr;
};

inline unsigned worker_threads() {
    if (const char* env = std::getenv("QKDSIM_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Run an index-parallel loop over [0, n) honoring QKDSIM_THREADS.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const unsigned n_threads = std::min<unsigned>(worker_threads(), static_cast<unsigned>(n));
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Fig.-4-style sweep: per loss, the analytic prediction at the 1e7-detection
// accumulation policy plus a Monte Carlo point from the full pipeline.
// Per-point failures become empty cells, the sweep continues.
inline std::vector<SweepRow> run_sweep_loss(const RunParams& base, const std::vector<double>& losses,
                                            bool with_simulation = true) {
    if (losses.empty()) throw ConfigError("sweep-loss: empty loss grid");
    std::vector<SweepRow> rows(losses.size());
    parallel_for(losses.size(), [&](std::size_t i) {
        SweepRow row;
        row.loss_db = losses[i];
        try {
            ChannelModel loss_only;
            loss_only.loss_db = row.loss_db;
            const double eta = system_efficiency(loss_only, base.det);
            const double key_click = base.proto.p_mu * click_probability(base.proto.mu, eta) +
                                     (1.0 - base.proto.p_mu) * click_probability(base.proto.nu, eta);
            const double det_rate = base.proto.f * base.proto.q() * key_click;
            const double t = 1e7 / std::max(det_rate, 1e-300);
            const CountStatistics c =
                expected_counts(base.proto, row.loss_db, base.det, base.e_mis, t);
            SecurityParams sec{base.proto.eps_sec, base.proto.eps_cor};
            const KeyRateReport rep = key_length(decoy_bounds(c, base.proto, sec), c, base.proto, sec);
            row.predicted_skr = rep.skr_bits_per_s;
        } catch (const std::exception&) {
        }
        if (with_simulation) {
            try {
                RunParams p = base;
                p.loss_db = row.loss_db;
                p.proto.seed = mix64(base.proto.seed + static_cast<std::uint64_t>(i));
                const SimulationReport rep = run_simulate(p);
                row.simulated_skr = rep.keyrate.skr_bits_per_s;
            } catch (const std::exception&) {
            }
        }
        rows[i] = row;
    });
    return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "loss_db,predicted_skr,simulated_skr\n";
    for (const auto& r : rows) {
        os << r.loss_db << ',';
        if (r.predicted_skr) os << *r.predicted_skr;
        os << ',';
        if (r.simulated_skr) os << *r.simulated_skr;
        os << '\n';
    }
}

struct SyncBenchRow {
    double loss_db = 0;
    std::int64_t M = 0;
    int trials = 0;
    int successes = 0;
    double rate = 0;
    double wilson_lo = 0, wilson_hi = 0;
};

// Wilson score interval at z = 1.96.
inline void wilson_ci(int successes, int trials, double& lo, double& hi) {
    if (trials == 0) {
        lo = 0.0;
        hi = 1.0;
        return;
    }
    const double z = 1.959963984540054;
    const double n = trials, p = double(successes) / n, z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2 * n)) / denom;
    const double rad = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom;
    lo = std::max(0.0, center - rad);
    hi = std::min(1.0, center + rad);
}

// Monte Carlo frame-offset recovery success rate at one operating point.
inline SyncBenchRow run_sync_bench_point(const RunParams& base, double loss_db, std::int64_t M,
                                         std::int64_t frames, int trials) {
    SyncBenchRow row;
    row.loss_db = loss_db;
    row.M = M;
    row.trials = trials;
    std::atomic<int> ok{0};
    parallel_for(static_cast<std::size_t>(trials), [&](std::size_t t) {
        RunParams p = base;
        p.loss_db = loss_db;
        p.proto.M = M;
        p.proto.seed = mix64(base.proto.seed + 0x5bd1e995ULL * (t + 1));
        Rng rng(p.proto.seed);
        Rng code_rng = rng.fork("code");
        try {
            const CorrelationCode code = generate_code(p.proto.L_code, code_rng);
            const FramePlan plan(code, p.proto, frames, rng);
            const ChannelModel ch = p.channel(rng);
            Rng ch_rng = rng.fork("channel");
            const auto events = transmit(plan, ch, p.det, p.clock, p.proto, ch_rng);
            const auto period = recover_period(events, p.proto.f, p.sync);
            const auto slotted = assign_slots(events, period.tau_s, period.t0_s, p.sync);
            const SyncResult sync = estimate_offset(slotted, code, p.proto.M, period, p.sync);
            // recovered offset must equal the raster anchor's slot index mod F
            const std::int64_t F = p.proto.frame_length();
            const auto m0 = static_cast<std::int64_t>(
                std::llround((sync.t0_s - p.clock.offset_s) / sync.tau_b_s));
            if (sync.frame_offset == ((m0 % F) + F) % F) ++ok;
        } catch (const std::exception&) {
        }
    });
    row.successes = ok;
    row.rate = trials > 0 ? double(row.successes) / trials : 0.0;
    wilson_ci(row.successes, row.trials, row.wilson_lo, row.wilson_hi);
    return row;
}

}  // namespace qkdsim
