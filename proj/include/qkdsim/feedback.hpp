#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "qkdsim/channel.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/epc.hpp"
#include "qkdsim/polarization.hpp"
#include "qkdsim/rng.hpp"
#include "qkdsim/states.hpp"

namespace qkdsim {

struct FeedbackConfig {
    double qber_threshold = 0.02;
    double step_v = 0.08;       // finite-difference probe voltage
    double lr = 1.5;            // descent step size, volts per unit QBER slope
    int max_iters = 200;
    double interval_s = 150.0;  // feedback cadence
    std::int64_t probe_bits = 2000;  // disclosed bits per QBER estimate
};

struct ObjectiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Frozen measurement context for one feedback round: a fixed channel rotation
// and a fixed randomness key. Repeated evaluations at the same voltages see
// identical disclosed bits, and evaluations at probed voltages share the same
// underlying randomness (common random numbers), which keeps the
// finite-difference gradient noise low.
struct FeedbackWorld {
    Mat2 drift_u = Mat2::identity();
    double e_mis = 0.01;
    ProtocolConfig proto;
    double p_sync_share = 0.125;       // fraction of disclosed bits from sync slots
    std::int64_t probe_bits = 2000;
    std::uint64_t key = 1;

    static FeedbackWorld freeze(const Mat2& drift, double e_mis, const ProtocolConfig& cfg,
                                std::int64_t probe_bits, std::uint64_t key) {
        FeedbackWorld w;
        w.drift_u = drift;
        w.e_mis = e_mis;
        w.proto = cfg;
        w.p_sync_share = 1.0 / static_cast<double>(cfg.M + 1);
        w.probe_bits = probe_bits;
        w.key = key;
        return w;
    }
};

struct QberSample {
    double combined = 0.0;
    double qber_z = 0.0;
    double qber_x = 0.0;
    std::int64_t n_z = 0;
    std::int64_t n_x = 0;
};

// Scalarized feedback objective. Weights follow the sample sizes but the
// check-basis share is floored at one quarter: with the strongly biased
// basis choice the raw weighting leaves X nearly free, and the descent can
// park in states that zero the Z errors while the X errors (which drive the
// phase-error bound) sit at tens of percent.
inline double combine_qber(double qz, double qx, double nz, double nx) {
    if (nx <= 0.0) return qz;
    if (nz <= 0.0) return qx;
    const double wx = std::max(nx / (nz + nx), 0.25);
    return (1.0 - wx) * qz + wx * qx;
}

namespace detail {

inline Mat2 world_unitary(const FeedbackWorld& w, const EpcState& epc) {
    return misalignment_unitary(w.e_mis) * epc_unitary(epc) * w.drift_u;
}

}  // namespace detail

// Measured objective: sample the disclosed-bit stream with the EPC set to the
// probe voltages and estimate the QBER per basis; combined value weights the
// bases by their sample sizes. Deterministic in (voltages, world).
inline QberSample measure_qber(const EpcState& epc, const FeedbackWorld& w) {
    const Mat2 u = detail::world_unitary(w, epc);
    Rng stream(w.key);
    std::int64_t nz = 0, mz = 0, nx = 0, mx = 0;
    std::int64_t matched = 0;
    for (std::int64_t probe = 0; matched < w.probe_bits; ++probe) {
        Rng r = stream.at(static_cast<std::uint64_t>(probe));
        QubitState sent;
        if (r.bernoulli(w.p_sync_share)) {
            sent = {Basis::Z, r.bernoulli(0.5) ? std::uint8_t{1} : std::uint8_t{0}};
        } else {
            sent.basis = r.bernoulli(w.proto.p_z_alice) ? Basis::Z : Basis::X;
            sent.bit = r.bernoulli(0.5) ? 1 : 0;
        }
        const auto probs = outcome_probabilities(u, sent);
        double x = r.uniform();
        int d = 0;
        for (; d < 3; ++d) {
            if (x < probs[d]) break;
            x -= probs[d];
        }
        if (detector_basis(d) != sent.basis) continue;
        ++matched;
        const bool err = detector_bit(d) != sent.bit;
        if (sent.basis == Basis::Z) {
            ++nz;
            mz += err;
        } else {
            ++nx;
            mx += err;
        }
        if (probe > w.probe_bits * 1000) break;  // pathological basis weights
    }
    if (nz + nx == 0) throw ObjectiveError("measure_qber: no matched disclosed bits");
    QberSample s;
    s.n_z = nz;
    s.n_x = nx;
    s.qber_z = nz ? double(mz) / double(nz) : 0.0;
    s.qber_x = nx ? double(mx) / double(nx) : 0.0;
    s.combined = combine_qber(s.qber_z, s.qber_x, double(nz), double(nx));
    return s;
}

inline double objective(const EpcState& epc, const FeedbackWorld& w) {
    return measure_qber(epc, w).combined;
}

// Interval convergence: the scalarized QBER sits below threshold and the
// check basis, when it has a usable sample, is not being quietly sacrificed.
inline bool qber_below_threshold(const QberSample& q, const FeedbackConfig& cfg) {
    if (q.combined >= cfg.qber_threshold) return false;
    if (q.n_x >= 50 && q.qber_x >= 2.5 * cfg.qber_threshold) return false;
    return true;
}

// Infinite-sample surrogate: the exact Born error probability averaged over
// the disclosed-state mix. Used for gradient checks and descent analysis.
inline double objective_analytic(const EpcState& epc, const FeedbackWorld& w) {
    const Mat2 u = detail::world_unitary(w, epc);
    const double pz_key = w.proto.p_z_alice;
    // P(state sent and basis matched) per basis, disclosed mix
    const double wz = w.p_sync_share + (1.0 - w.p_sync_share) * pz_key;
    const double wx = (1.0 - w.p_sync_share) * (1.0 - pz_key);
    double err_z = 0.0, err_x = 0.0;
    for (int bit = 0; bit < 2; ++bit) {
        {
            const QubitState s{Basis::Z, static_cast<std::uint8_t>(bit)};
            const auto p = outcome_probabilities(u, s);
            err_z += 0.5 * p[detector_index({Basis::Z, static_cast<std::uint8_t>(1 - bit)})] /
                     (p[0] + p[1]);
        }
        {
            const QubitState s{Basis::X, static_cast<std::uint8_t>(bit)};
            const auto p = outcome_probabilities(u, s);
            err_x += 0.5 * p[detector_index({Basis::X, static_cast<std::uint8_t>(1 - bit)})] /
                     (p[2] + p[3]);
        }
    }
    // same scalarization as the measured objective, at the expected shares
    return combine_qber(err_z, err_x, wz * 0.5, wx * 0.5);
}

struct FeedbackStepLog {
    std::array<double, 3> gradient{};
    std::array<double, 3> probe_plus{};
    std::array<double, 3> probe_minus{};
    double qber_before = 0.0;
    bool clamped = false;
};

// One gradient-descent update: central finite differences per channel (two
// probes each), then v <- clamp(v - lr * grad). Generic in the objective so
// the same update rule runs on the measured QBER, the analytic surrogate, or
// a test stub.
template <typename Objective>
EpcState feedback_step_with(Objective&& f, const EpcState& state, const FeedbackConfig& cfg,
                            FeedbackStepLog* log = nullptr) {
    if (cfg.step_v <= 0.0 || cfg.lr <= 0.0)
        throw std::domain_error("FeedbackConfig: lr and step_v must be > 0");
    FeedbackStepLog local;
    local.qber_before = f(state);
    EpcState next = state;
    for (int j = 0; j < 3; ++j) {
        EpcState plus = state, minus = state;
        plus.voltages[static_cast<std::size_t>(j)] += cfg.step_v;
        minus.voltages[static_cast<std::size_t>(j)] -= cfg.step_v;
        clamp_voltages(plus);
        clamp_voltages(minus);
        const double qp = f(plus);
        const double qm = f(minus);
        const double denom = plus.voltages[static_cast<std::size_t>(j)] -
                             minus.voltages[static_cast<std::size_t>(j)];
        const double g = denom != 0.0 ? (qp - qm) / denom : 0.0;
        local.gradient[static_cast<std::size_t>(j)] = g;
        local.probe_plus[static_cast<std::size_t>(j)] = qp;
        local.probe_minus[static_cast<std::size_t>(j)] = qm;
        next.voltages[static_cast<std::size_t>(j)] -= cfg.lr * g;
    }
    local.clamped = clamp_voltages(next);
    if (log) *log = local;
    return next;
}

inline EpcState feedback_step(const EpcState& state, const FeedbackConfig& cfg,
                              const FeedbackWorld& w, FeedbackStepLog* log = nullptr) {
    return feedback_step_with([&](const EpcState& s) { return objective(s, w); }, state, cfg, log);
}

// Drive the EPC until the measured QBER drops below threshold or the
// iteration cap is hit. The voltage rails can trap the plain descent in a
// corner of the Euler-angle landscape, so a stalled search restarts from a
// deterministically re-seeded point; restarts share the iteration budget.
struct FeedbackRun {
    EpcState state;
    std::vector<double> qber_trace;
    bool converged = false;
    int restarts = 0;
};

inline FeedbackRun run_feedback(EpcState state, const FeedbackConfig& cfg, const FeedbackWorld& w) {
    FeedbackRun run;
    EpcState best = state;
    double best_q = 1.0;
    double stall_ref = 1.0;
    int stall = 0;
    for (int it = 0; it < cfg.max_iters; ++it) {
        const QberSample sample = measure_qber(state, w);
        const double q = sample.combined;
        run.qber_trace.push_back(q);
        if (q < best_q) {
            best_q = q;
            best = state;
        }
        if (qber_below_threshold(sample, cfg)) {
            run.state = state;
            run.converged = true;
            return run;
        }
        if (q < stall_ref - 0.003) {
            stall_ref = q;
            stall = 0;
        } else if (++stall >= 12) {
            ++run.restarts;
            Rng reseed(mix64(w.key + 0x9E37U * static_cast<std::uint64_t>(run.restarts)));
            for (auto& v : state.voltages) v = reseed.uniform(0.0, state.v_max);
            stall_ref = 1.0;
            stall = 0;
            continue;
        }
        state = feedback_step(state, cfg, w);
    }
    run.state = best;
    run.converged = best_q < cfg.qber_threshold;
    return run;
}

struct FeedbackLogRow {
    double t_s = 0.0;
    double qber_z = 0.0;
    double qber_x = 0.0;
    double qber_combined = 0.0;
    std::array<double, 3> voltages{};
    bool interval_skipped = false;
};

// Long-run loop over a drifting channel: every interval the QBER is
// re-estimated from disclosed bits and, when above threshold, the descent
// iterates on that interval's frozen channel snapshot.
inline std::vector<FeedbackLogRow> run_feedback_loop(double duration_s,
                                                     const DriftTrajectory& drift,
                                                     const FeedbackConfig& cfg,
                                                     const ProtocolConfig& proto, double e_mis,
                                                     std::uint64_t seed) {
    if (duration_s <= 0.0) throw std::domain_error("run_feedback_loop: duration must be > 0");
    std::vector<FeedbackLogRow> rows;
    EpcState state;
    const auto n_steps = static_cast<std::int64_t>(std::floor(duration_s / cfg.interval_s));
    for (std::int64_t i = 0; i < n_steps; ++i) {
        const double t = static_cast<double>(i) * cfg.interval_s;
        FeedbackLogRow row;
        row.t_s = t;
        const auto w = FeedbackWorld::freeze(drift.unitary(t), e_mis, proto, cfg.probe_bits,
                                             mix64(seed + static_cast<std::uint64_t>(i)));
        try {
            QberSample q = measure_qber(state, w);
            if (!qber_below_threshold(q, cfg)) {
                auto run = run_feedback(state, cfg, w);
                state = run.state;
                q = measure_qber(state, w);
            }
            row.qber_z = q.qber_z;
            row.qber_x = q.qber_x;
            row.qber_combined = q.combined;
        } catch (const ObjectiveError&) {
            row.interval_skipped = true;  // sync/sample loss: log and move on
        }
        row.voltages = state.voltages;
        rows.push_back(row);
    }
    return rows;
}

inline void write_feedback_csv(std::ostream& os, const std::vector<FeedbackLogRow>& rows) {
    os << "t_s,qber_z,qber_x,v1,v2,v3\n";
    for (const auto& r : rows) {
        os << r.t_s << ',' << r.qber_z << ',' << r.qber_x << ',' << r.voltages[0] << ','
           << r.voltages[1] << ',' << r.voltages[2] << '\n';
    }
}

}  // namespace qkdsim
