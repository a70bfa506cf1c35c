#include <cmath>
#include <numbers>
#include <set>

#include "catch_amalgamated.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/rng.hpp"
#include "qkdsim/states.hpp"

using namespace qkdsim;
using std::numbers::pi;

TEST_CASE("phase to state mapping is the published bijection") {
    CHECK(state_from_phase(0.0) == QubitState{Basis::Z, 0});
    CHECK(state_from_phase(pi) == QubitState{Basis::Z, 1});
    CHECK(state_from_phase(0.5 * pi) == QubitState{Basis::X, 0});
    CHECK(state_from_phase(1.5 * pi) == QubitState{Basis::X, 1});
    for (Basis b : {Basis::Z, Basis::X}) {
        for (std::uint8_t bit : {0, 1}) {
            const QubitState s{b, bit};
            CHECK(state_from_phase(phase_of(s)) == s);
        }
    }
    CHECK_THROWS_AS(state_from_phase(0.3), std::domain_error);
}

TEST_CASE("jones vectors: unit norm, in-basis orthogonality, mutual unbiasedness") {
    const Jones z0 = jones_vector({Basis::Z, 0});
    const Jones z1 = jones_vector({Basis::Z, 1});
    CHECK(z0[0].real() == Catch::Approx(1.0 / std::sqrt(2.0)));
    CHECK(z0[1].real() == Catch::Approx(1.0 / std::sqrt(2.0)));
    CHECK(z1[1].real() == Catch::Approx(-1.0 / std::sqrt(2.0)));

    auto inner = [](const Jones& a, const Jones& b) {
        return std::conj(a[0]) * b[0] + std::conj(a[1]) * b[1];
    };
    for (Basis b : {Basis::Z, Basis::X}) {
        const auto v0 = jones_vector({b, 0});
        const auto v1 = jones_vector({b, 1});
        CHECK(std::abs(inner(v0, v0)) == Catch::Approx(1.0));
        CHECK(std::abs(inner(v0, v1)) == Catch::Approx(0.0).margin(1e-12));
    }
    for (std::uint8_t i : {0, 1}) {
        for (std::uint8_t j : {0, 1}) {
            const double overlap = std::norm(inner(jones_vector({Basis::Z, i}),
                                                   jones_vector({Basis::X, j})));
            CHECK(overlap == Catch::Approx(0.5).epsilon(1e-12));
        }
    }
}

TEST_CASE("detector index mapping round-trips") {
    for (int d = 0; d < 4; ++d) CHECK(detector_index(outcome_state(d)) == d);
    CHECK_THROWS_AS(outcome_state(4), std::domain_error);
}

TEST_CASE("config: derived quantities and q identity") {
    ProtocolConfig cfg;
    cfg.M = 7;
    CHECK(cfg.q() == Catch::Approx(0.875));
    cfg.M = 3;
    CHECK(cfg.frame_length() == 4 * cfg.L_code);
    for (std::int64_t m = 1; m <= 1000; ++m) {
        cfg.M = m;
        CHECK(cfg.q() * double(m + 1) == Catch::Approx(double(m)).epsilon(1e-15));
    }
}

TEST_CASE("config: each violated invariant reported by name") {
    ProtocolConfig cfg;
    cfg.mu = 0.1;
    cfg.nu = 0.2;
    try {
        cfg.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("nu >= mu") != std::string::npos);
    }
    cfg = ProtocolConfig{};
    CHECK_NOTHROW(cfg.validate());
    CHECK_NOTHROW(cfg.validate());  // validation is idempotent
}

TEST_CASE("config parses from key = value text") {
    const auto kv = KeyValueFile::parse_string(
        "[protocol]\nM = 3\nmu = 0.5\nnu = 0.12\nseed = 42\n");
    const ProtocolConfig cfg = ProtocolConfig::from_key_values(kv);
    CHECK(cfg.M == 3);
    CHECK(cfg.mu == 0.5);
    CHECK(cfg.seed == 42);
    CHECK(cfg.f == 1.0e8);  // defaults survive
}

TEST_CASE("rng: identical seeds give identical streams, forks are independent") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork("channel");
    Rng f2 = base.fork("darks");
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 100; ++i) {
        seen.insert(f1.next_u64());
        seen.insert(f2.next_u64());
    }
    CHECK(seen.size() == 200);

    // keyed-at streams do not depend on draw order
    Rng c(9), d(9);
    (void)c.next_u64();
    CHECK(c.at(5).next_u64() == d.at(5).next_u64());
}

TEST_CASE("rng: moment sanity for gaussian and poisson") {
    Rng r(2024);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = r.gaussian();
        sum += g;
        sum2 += g * g;
    }
    CHECK(sum / n == Catch::Approx(0.0).margin(0.01));
    CHECK(sum2 / n == Catch::Approx(1.0).margin(0.02));

    double psum = 0;
    for (int i = 0; i < n; ++i) psum += double(r.poisson(0.466));
    CHECK(psum / n == Catch::Approx(0.466).margin(0.01));
}
