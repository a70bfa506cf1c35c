#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "qkdsim/code.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/rng.hpp"
#include "qkdsim/states.hpp"

namespace qkdsim {

enum class SlotRole : std::uint8_t { Sync = 0, Key = 1 };
enum class IntensityClass : std::uint8_t { Signal = 0, Decoy = 1 };

struct PulseRecord {
    std::int64_t slot = 0;
    SlotRole role = SlotRole::Key;
    QubitState state;
    IntensityClass intensity = IntensityClass::Signal;
};

// Transmission layout: R frames of L_code segments, each segment one sync
// qubit followed by M random qubits. Pulse content is a pure function of
// (config, code, seed, slot), so plans of any length can be streamed without
// materializing them; materialize() exists for small plans and tests.
//
// Sync qubits carry the code bit in the Z basis at signal intensity; key
// qubits draw basis ~ p_z_alice, bit ~ uniform, intensity ~ p_mu.
class FramePlan {
  public:
    FramePlan(CorrelationCode code, ProtocolConfig cfg, std::int64_t repetitions, const Rng& rng)
        : code_(std::move(code)), cfg_(cfg), repetitions_(repetitions),
          slot_rng_(rng.fork("frame-plan")) {
        cfg_.validate();
        if (code_.length() != cfg_.L_code)
            throw std::invalid_argument("FramePlan: code length does not match cfg.L_code");
        if (repetitions_ < 1) throw std::invalid_argument("FramePlan: R must be >= 1 (empty plan)");
    }

    std::int64_t total_slots() const { return repetitions_ * cfg_.frame_length(); }
    std::int64_t repetitions() const { return repetitions_; }
    const ProtocolConfig& config() const { return cfg_; }
    const CorrelationCode& code() const { return code_; }

    bool is_sync_slot(std::int64_t slot) const {
        return (slot % (cfg_.M + 1)) == 0;
    }

    PulseRecord pulse_at(std::int64_t slot) const {
        if (slot < 0) throw std::out_of_range("FramePlan::pulse_at: negative slot");
        PulseRecord rec;
        rec.slot = slot;
        const std::int64_t seg = cfg_.M + 1;
        if (slot % seg == 0) {
            rec.role = SlotRole::Sync;
            const std::int64_t idx = (slot % cfg_.frame_length()) / seg;
            rec.state = {Basis::Z, code_.bits[static_cast<std::size_t>(idx)]};
            rec.intensity = IntensityClass::Signal;
            return rec;
        }
        rec.role = SlotRole::Key;
        Rng r = slot_rng_.at(static_cast<std::uint64_t>(slot));
        rec.state.basis = r.bernoulli(cfg_.p_z_alice) ? Basis::Z : Basis::X;
        rec.state.bit = r.bernoulli(0.5) ? 1 : 0;
        rec.intensity = r.bernoulli(cfg_.p_mu) ? IntensityClass::Signal : IntensityClass::Decoy;
        return rec;
    }

    double intensity_value(IntensityClass c) const {
        return c == IntensityClass::Signal ? cfg_.mu : cfg_.nu;
    }

    std::vector<PulseRecord> materialize() const {
        std::vector<PulseRecord> out;
        out.reserve(static_cast<std::size_t>(total_slots()));
        for (std::int64_t s = 0; s < total_slots(); ++s) out.push_back(pulse_at(s));
        return out;
    }

    void export_records(std::ostream& os) const {
        os << "slot,role,basis,bit,intensity\n";
        for (std::int64_t s = 0; s < total_slots(); ++s) {
            const PulseRecord r = pulse_at(s);
            os << r.slot << ','
               << (r.role == SlotRole::Sync ? "sync" : "key") << ','
               << (r.state.basis == Basis::Z ? 'Z' : 'X') << ','
               << int(r.state.bit) << ','
               << (r.intensity == IntensityClass::Signal ? "mu" : "nu") << '\n';
        }
    }

  private:
    CorrelationCode code_;
    ProtocolConfig cfg_;
    std::int64_t repetitions_;
    Rng slot_rng_;
};

// Public-disclosure selection: all sync slots plus a random fraction of key
// slots. Membership is a pure function of (rng fork, slot), usable as a
// predicate on streamed plans; disclosed key slots are excluded from key
// accumulation downstream. Self-contained value type (copies the frame
// geometry, not the plan).
class DisclosureSet {
  public:
    DisclosureSet(const FramePlan& plan, double sample_fraction, const Rng& rng)
        : segment_(plan.config().M + 1), total_slots_(plan.total_slots()),
          fraction_(sample_fraction), pick_(rng.fork("disclosure")) {
        if (sample_fraction < 0.0 || sample_fraction > 1.0)
            throw std::domain_error("DisclosureSet: sample_fraction must be in [0,1]");
    }

    bool contains(std::int64_t slot) const {
        if (slot % segment_ == 0) return true;  // sync slots are always public
        if (fraction_ <= 0.0) return false;
        if (fraction_ >= 1.0) return true;
        Rng r = pick_.at(static_cast<std::uint64_t>(slot));
        return r.uniform() < fraction_;
    }

    double sample_fraction() const { return fraction_; }

    std::vector<std::int64_t> positions() const {
        std::vector<std::int64_t> out;
        for (std::int64_t s = 0; s < total_slots_; ++s) {
            if (contains(s)) out.push_back(s);
        }
        return out;
    }

  private:
    std::int64_t segment_;
    std::int64_t total_slots_;
    double fraction_;
    Rng pick_;
};

inline FramePlan build_frames(const CorrelationCode& code, const ProtocolConfig& cfg,
                              std::int64_t repetitions, const Rng& rng) {
    return FramePlan(code, cfg, repetitions, rng);
}

inline DisclosureSet disclosed_positions(const FramePlan& plan, double sample_fraction, const Rng& rng) {
    return DisclosureSet(plan, sample_fraction, rng);
}

}  // namespace qkdsim
