#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "qkdsim/channel.hpp"
#include "qkdsim/sifting.hpp"

using namespace qkdsim;

namespace {

struct Setup {
    ProtocolConfig cfg;
    CorrelationCode code;
    FramePlan plan;
    DisclosureSet disclosed;

    static Setup make(std::uint64_t seed, std::int64_t frames, double fraction,
                      std::int64_t L = 16, std::int64_t M = 3) {
        ProtocolConfig cfg;
        cfg.L_code = L;
        cfg.M = M;
        cfg.seed = seed;
        Rng rng(seed);
        Rng code_rng = rng.fork("code");
        CorrelationCode code = generate_code(L, code_rng);
        FramePlan plan(code, cfg, frames, rng);
        DisclosureSet disc(plan, fraction, rng);
        return Setup{cfg, code, std::move(plan), std::move(disc)};
    }
};

// every detection realized and perfectly slotted (ideal sync), per true slot
std::vector<SlottedEvent> perfect_assignment(const std::vector<DetectionEvent>& events) {
    std::vector<SlottedEvent> out;
    for (const auto& e : events) {
        if (e.truth_slot >= 0) out.push_back({e.truth_slot, e.detector, e.truth_slot});
    }
    return out;
}

}  // namespace

TEST_CASE("noiseless channel sifts with zero errors; sync and disclosed excluded") {
    auto su = Setup::make(41, 600, 0.05);
    ChannelModel ch;
    ch.loss_db = 0.0;
    ch.e_mis = 0.0;
    DetectorModel det;
    det.efficiency = 1.0;
    det.dark_rate_hz = 0.0;
    Rng rng(42);
    const auto events = transmit(su.plan, ch, det, ReceiverClock{}, su.cfg, rng);
    const auto assigned = perfect_assignment(events);
    const CountStatistics stats = sift(su.plan, assigned, su.disclosed);
    stats.check();
    CHECK(stats.m_z() == 0);
    CHECK(stats.m_x() == 0);
    CHECK(stats.n_z() > 0);
    CHECK(stats.t_s == Catch::Approx(double(su.plan.total_slots()) / su.cfg.f));

    for (const auto& e : assigned) {
        if (su.plan.pulse_at(e.slot).role == SlotRole::Sync || su.disclosed.contains(e.slot)) {
            // spot-check partitioning: these never enter counts, so removing
            // them from the assignment must not change the statistics
            continue;
        }
    }
    std::vector<SlottedEvent> key_only;
    for (const auto& e : assigned) {
        if (su.plan.pulse_at(e.slot).role == SlotRole::Key && !su.disclosed.contains(e.slot))
            key_only.push_back(e);
    }
    const CountStatistics again = sift(su.plan, key_only, su.disclosed);
    CHECK(again.n_z() == stats.n_z());
    CHECK(again.n_x() == stats.n_x());
}

TEST_CASE("basis sift keeps half the key detections on average") {
    auto su = Setup::make(43, 2500, 0.0, 16, 7);
    ChannelModel ch;
    ch.loss_db = 6.0;
    ch.e_mis = 0.0;
    DetectorModel det;
    det.dark_rate_hz = 0.0;
    Rng rng(44);
    const auto events = transmit(su.plan, ch, det, ReceiverClock{}, su.cfg, rng);
    const auto assigned = perfect_assignment(events);
    std::int64_t key_events = 0;
    for (const auto& e : assigned) {
        key_events += su.plan.pulse_at(e.slot).role == SlotRole::Key;
    }
    const CountStatistics stats = sift(su.plan, assigned, su.disclosed);
    const double kept = stats.n_z() + stats.n_x();
    REQUIRE(key_events > 3000);
    CHECK(std::abs(kept - 0.5 * key_events) < 3.0 * std::sqrt(0.25 * key_events));
}

TEST_CASE("sifted intensity split matches p_mu") {
    auto su = Setup::make(45, 4000, 0.0);
    ChannelModel ch;
    ch.loss_db = 3.0;
    DetectorModel det;
    det.dark_rate_hz = 0.0;
    Rng rng(46);
    const auto events = transmit(su.plan, ch, det, ReceiverClock{}, su.cfg, rng);
    const CountStatistics stats = sift(su.plan, perfect_assignment(events), su.disclosed);
    const double n = stats.n_z() + stats.n_x();
    const double sig = stats.n_z_mu + stats.n_x_mu;
    // intensity-dependent click probabilities tilt the split toward mu
    const double p_click_mu = click_probability(su.cfg.mu, system_efficiency(ch, det));
    const double p_click_nu = click_probability(su.cfg.nu, system_efficiency(ch, det));
    const double expect =
        su.cfg.p_mu * p_click_mu / (su.cfg.p_mu * p_click_mu + (1 - su.cfg.p_mu) * p_click_nu);
    CHECK(std::abs(sig / n - expect) < 3.0 * std::sqrt(expect * (1 - expect) / n));
}

TEST_CASE("double-assigned slots are discarded entirely") {
    auto su = Setup::make(47, 4, 0.0);
    std::vector<SlottedEvent> assigned;
    std::int64_t key_slot = -1, key_slot2 = -1;
    for (std::int64_t s = 0; s < su.plan.total_slots(); ++s) {
        const auto rec = su.plan.pulse_at(s);
        if (rec.role == SlotRole::Key && rec.state.basis == Basis::Z) {
            if (key_slot < 0) {
                key_slot = s;
            } else if (key_slot2 < 0) {
                key_slot2 = s;
                break;
            }
        }
    }
    REQUIRE(key_slot2 > 0);
    const auto bit = su.plan.pulse_at(key_slot).state.bit;
    const auto bit2 = su.plan.pulse_at(key_slot2).state.bit;
    // slot key_slot collides (one right, one wrong detector); key_slot2 is clean
    assigned.push_back({key_slot, bit, key_slot});
    assigned.push_back({key_slot, static_cast<std::uint8_t>(1 - bit), key_slot});
    assigned.push_back({key_slot2, bit2, key_slot2});
    const CountStatistics stats = sift(su.plan, assigned, su.disclosed);
    CHECK(stats.n_z() == 1);
    CHECK(stats.m_z() == 0);
}

TEST_CASE("counts are order-invariant and merge as a monoid") {
    auto su = Setup::make(48, 300, 0.02);
    ChannelModel ch;
    ch.loss_db = 3.0;
    Rng rng(49);
    const auto events = transmit(su.plan, ch, DetectorModel{}, ReceiverClock{}, su.cfg, rng);
    auto assigned = perfect_assignment(events);
    const CountStatistics a = sift(su.plan, assigned, su.disclosed);
    std::reverse(assigned.begin(), assigned.end());
    const CountStatistics b = sift(su.plan, assigned, su.disclosed);
    CHECK(a.n_z() == b.n_z());
    CHECK(a.m_x() == b.m_x());

    // split-and-merge equals whole
    std::vector<SlottedEvent> first(assigned.begin(), assigned.begin() + assigned.size() / 2);
    std::vector<SlottedEvent> second(assigned.begin() + assigned.size() / 2, assigned.end());
    CountStatistics merged = sift(su.plan, first, su.disclosed) + sift(su.plan, second, su.disclosed);
    CHECK(merged.n_z() == a.n_z());
    CHECK(merged.m_z() == a.m_z());
    CHECK(merged.n_x() == a.n_x());
    // t_s adds across partial accumulations by design
    CHECK(merged.t_s == Catch::Approx(2.0 * a.t_s));
}

TEST_CASE("counts serialize to key=value and back") {
    CountStatistics s;
    s.n_z_mu = 9157392;
    s.n_z_nu = 763967;
    s.n_x_mu = 735824;
    s.n_x_nu = 61775;
    s.m_z_mu = 84469;
    s.m_z_nu = 7293;
    s.m_x_mu = 6302;
    s.m_x_nu = 762;
    s.t_s = 145.5;
    s.N_pulses = 1.455e10;
    std::ostringstream os;
    s.write(os);
    const auto kv = KeyValueFile::parse_string(os.str());
    const CountStatistics r = CountStatistics::from_key_values(kv);
    CHECK(r.n_z() == s.n_z());
    CHECK(r.m_x() == s.m_x());
    CHECK(r.t_s == Catch::Approx(s.t_s));

    CountStatistics bad = s;
    bad.m_z_mu = bad.n_z_mu + 1;
    CHECK_THROWS_AS(bad.check(), std::domain_error);
}

TEST_CASE("disclosed QBER: zero in a clean channel, one-half when dark-dominated") {
    auto su = Setup::make(50, 800, 0.2);
    {
        ChannelModel ch;
        ch.loss_db = 0.0;
        ch.e_mis = 0.0;
        DetectorModel det;
        det.efficiency = 1.0;
        det.dark_rate_hz = 0.0;
        Rng rng(51);
        const auto events = transmit(su.plan, ch, det, ReceiverClock{}, su.cfg, rng);
        const auto q = estimate_qber(su.plan, perfect_assignment(events), su.disclosed);
        REQUIRE(q.qber_z.has_value());
        CHECK(*q.qber_z == 0.0);
        if (q.qber_x) CHECK(*q.qber_x == 0.0);
    }
    {
        // all clicks are darks: outcomes are uniform, both QBERs near 1/2
        ChannelModel ch;
        ch.loss_db = 200.0;
        DetectorModel det;
        det.dark_rate_hz = 2e6;
        det.jitter_sigma_s = 0.0;
        Rng rng(52);
        auto events = transmit(su.plan, ch, det, ReceiverClock{}, su.cfg, rng);
        REQUIRE(events.size() > 2000);
        // darks carry no truth slot; quantize them honestly onto the raster
        const auto slotted = assign_slots(events, 1.0 / su.cfg.f, 0.0);
        std::vector<SlottedEvent> assigned;
        for (const auto& e : slotted) assigned.push_back(e);
        const auto q = estimate_qber(su.plan, assigned, su.disclosed);
        REQUIRE(q.qber_z.has_value());
        const double sd_z = std::sqrt(0.25 / double(q.n_z_samples));
        CHECK(std::abs(*q.qber_z - 0.5) < 4 * sd_z);
        if (q.n_x_samples > 100) {
            const double sd_x = std::sqrt(0.25 / double(q.n_x_samples));
            CHECK(std::abs(*q.qber_x - 0.5) < 4 * sd_x);
        }
    }
}

TEST_CASE("empty basis sample is flagged undefined, not defaulted") {
    auto su = Setup::make(53, 2, 0.0);
    const auto q = estimate_qber(su.plan, {}, su.disclosed);
    CHECK(!q.qber_z.has_value());
    CHECK(!q.qber_x.has_value());
}
