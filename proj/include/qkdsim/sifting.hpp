#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "qkdsim/frames.hpp"
#include "qkdsim/io.hpp"
#include "qkdsim/sync.hpp"

namespace qkdsim {

// Sifted counts per basis x intensity plus the accumulation metadata the
// finite-key analysis consumes. Fields are doubles so analytically expected
// counts fit the same container; accumulation is a commutative monoid.
struct CountStatistics {
    double n_z_mu = 0, n_z_nu = 0, n_x_mu = 0, n_x_nu = 0;
    double m_z_mu = 0, m_z_nu = 0, m_x_mu = 0, m_x_nu = 0;
    double t_s = 0;        // simulated accumulation span, N_pulses / f
    double N_pulses = 0;   // total transmitted pulses, sync included

    double n_z() const { return n_z_mu + n_z_nu; }
    double n_x() const { return n_x_mu + n_x_nu; }
    double m_z() const { return m_z_mu + m_z_nu; }
    double m_x() const { return m_x_mu + m_x_nu; }

    CountStatistics& operator+=(const CountStatistics& o) {
        n_z_mu += o.n_z_mu; n_z_nu += o.n_z_nu; n_x_mu += o.n_x_mu; n_x_nu += o.n_x_nu;
        m_z_mu += o.m_z_mu; m_z_nu += o.m_z_nu; m_x_mu += o.m_x_mu; m_x_nu += o.m_x_nu;
        t_s += o.t_s; N_pulses += o.N_pulses;
        return *this;
    }
    friend CountStatistics operator+(CountStatistics a, const CountStatistics& b) { return a += b; }

    void check() const {
        if (m_z_mu > n_z_mu || m_z_nu > n_z_nu || m_x_mu > n_x_mu || m_x_nu > n_x_nu)
            throw std::domain_error("CountStatistics: error count exceeds sifted count");
    }

    void write(std::ostream& os) const {
        os << "n_z_mu = " << std::int64_t(n_z_mu) << "\nn_z_nu = " << std::int64_t(n_z_nu)
           << "\nn_x_mu = " << std::int64_t(n_x_mu) << "\nn_x_nu = " << std::int64_t(n_x_nu)
           << "\nm_z_mu = " << std::int64_t(m_z_mu) << "\nm_z_nu = " << std::int64_t(m_z_nu)
           << "\nm_x_mu = " << std::int64_t(m_x_mu) << "\nm_x_nu = " << std::int64_t(m_x_nu)
           << "\nt_s = " << t_s << "\nN_pulses = " << N_pulses << '\n';
    }

    static CountStatistics from_key_values(const KeyValueFile& kv, const std::string& prefix = "") {
        auto key = [&](const char* k) { return prefix.empty() ? std::string(k) : prefix + "." + k; };
        CountStatistics s;
        s.n_z_mu = kv.get_double(key("n_z_mu"));
        s.n_z_nu = kv.get_double(key("n_z_nu"));
        s.n_x_mu = kv.get_double(key("n_x_mu"));
        s.n_x_nu = kv.get_double(key("n_x_nu"));
        s.m_z_mu = kv.get_double(key("m_z_mu"));
        s.m_z_nu = kv.get_double(key("m_z_nu"));
        s.m_x_mu = kv.get_double(key("m_x_mu"));
        s.m_x_nu = kv.get_double(key("m_x_nu"));
        s.t_s = kv.get_double(key("t_s"));
        s.N_pulses = kv.get_double(key("N_pulses"), 0.0);
        s.check();
        return s;
    }
};

struct QberEstimate {
    std::optional<double> qber_z;  // empty when a basis has no matched sample
    std::optional<double> qber_x;
    std::int64_t n_z_samples = 0;
    std::int64_t n_x_samples = 0;
};

namespace detail {

// Resolve double-assignment collisions: any slot hit by more than one event
// is discarded entirely (conservative; avoids biased error attribution).
inline std::vector<SlottedEvent> dedupe_slots(const std::vector<SlottedEvent>& assigned) {
    std::vector<SlottedEvent> sorted = assigned;
    std::sort(sorted.begin(), sorted.end(),
              [](const SlottedEvent& a, const SlottedEvent& b) { return a.slot < b.slot; });
    std::vector<SlottedEvent> out;
    out.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i + 1;
        while (j < sorted.size() && sorted[j].slot == sorted[i].slot) ++j;
        if (j == i + 1) out.push_back(sorted[i]);
        i = j;
    }
    return out;
}

}  // namespace detail

// Pair slot-assigned detections with Alice's records and accumulate the
// basis-matched counts. Sync slots and disclosed slots never enter counts.
inline CountStatistics sift(const FramePlan& plan, const std::vector<SlottedEvent>& assigned,
                            const DisclosureSet& disclosed) {
    CountStatistics stats;
    stats.N_pulses = static_cast<double>(plan.total_slots());
    stats.t_s = stats.N_pulses / plan.config().f;

    for (const auto& e : detail::dedupe_slots(assigned)) {
        if (e.slot < 0 || e.slot >= plan.total_slots()) continue;
        const PulseRecord alice = plan.pulse_at(e.slot);
        if (alice.role == SlotRole::Sync) continue;
        if (disclosed.contains(e.slot)) continue;
        const Basis bob_basis = detector_basis(e.detector);
        if (bob_basis != alice.state.basis) continue;
        const bool err = detector_bit(e.detector) != alice.state.bit;
        const bool sig = alice.intensity == IntensityClass::Signal;
        if (bob_basis == Basis::Z) {
            (sig ? stats.n_z_mu : stats.n_z_nu) += 1;
            if (err) (sig ? stats.m_z_mu : stats.m_z_nu) += 1;
        } else {
            (sig ? stats.n_x_mu : stats.n_x_nu) += 1;
            if (err) (sig ? stats.m_x_mu : stats.m_x_nu) += 1;
        }
    }
    return stats;
}

// QBER over the public sample only: sync slots feed the Z estimate, disclosed
// key slots feed the estimate of their own basis. Basis-matched events only;
// no event contributes to both this estimate and the key counts.
inline QberEstimate estimate_qber(const FramePlan& plan, const std::vector<SlottedEvent>& assigned,
                                  const DisclosureSet& disclosed) {
    std::int64_t nz = 0, mz = 0, nx = 0, mx = 0;
    for (const auto& e : detail::dedupe_slots(assigned)) {
        if (e.slot < 0 || e.slot >= plan.total_slots()) continue;
        if (!disclosed.contains(e.slot)) continue;
        const PulseRecord alice = plan.pulse_at(e.slot);
        const Basis bob_basis = detector_basis(e.detector);
        if (bob_basis != alice.state.basis) continue;
        const bool err = detector_bit(e.detector) != alice.state.bit;
        if (bob_basis == Basis::Z) {
            ++nz;
            mz += err;
        } else {
            ++nx;
            mx += err;
        }
    }
    QberEstimate q;
    q.n_z_samples = nz;
    q.n_x_samples = nx;
    if (nz > 0) q.qber_z = static_cast<double>(mz) / static_cast<double>(nz);
    if (nx > 0) q.qber_x = static_cast<double>(mx) / static_cast<double>(nx);
    return q;
}

}  // namespace qkdsim
