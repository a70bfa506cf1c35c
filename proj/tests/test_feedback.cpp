#include <cmath>
#include <numbers>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "qkdsim/feedback.hpp"

using namespace qkdsim;

namespace {

Mat2 random_unitary(Rng& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return su2_rotation({r * std::cos(ph), r * std::sin(ph), z}, rng.uniform(0.0, 2.0 * std::numbers::pi));
}

FeedbackWorld world_for(const Mat2& drift, double e_mis, std::uint64_t key,
                        std::int64_t probe_bits = 4000) {
    ProtocolConfig cfg;
    return FeedbackWorld::freeze(drift, e_mis, cfg, probe_bits, key);
}

}  // namespace

TEST_CASE("epc unitary: identity at zero volts, half-wave at v_pi, always unitary") {
    EpcState s;
    const Mat2 id = epc_unitary(s);
    CHECK(std::abs(id.a - cplx(1, 0)) < 1e-14);
    CHECK(std::abs(id.b) < 1e-14);

    s.voltages = {s.v_pi, 0.0, 0.0};
    const Mat2 half = epc_unitary(s);
    // pi rotation about x: -i sigma_x, trace 0
    CHECK(std::abs(half.a + half.d) < 1e-12);
    CHECK(std::abs(half.b - cplx(0, -1)) < 1e-12);

    Rng rng(70);
    for (int i = 0; i < 200; ++i) {
        EpcState r;
        r.voltages = {rng.uniform(0, r.v_max), rng.uniform(0, r.v_max), rng.uniform(0, r.v_max)};
        CHECK(unitarity_defect(epc_unitary(r)) < 1e-12);
    }
}

TEST_CASE("out-of-range voltages clamp to the rails") {
    EpcState s;
    s.voltages = {-1.0, 7.5, 3.0};
    CHECK(clamp_voltages(s));
    CHECK(s.voltages[0] == 0.0);
    CHECK(s.voltages[1] == s.v_max);
    CHECK(s.voltages[2] == 3.0);
    CHECK(!clamp_voltages(s));
}

TEST_CASE("euler solve: the X-Y-X decomposition reproduces any drift rotation") {
    Rng rng(71);
    for (int i = 0; i < 50; ++i) {
        const Mat2 target = random_unitary(rng);
        const EpcState solved = epc_solve(target);
        const Mat2 u = epc_unitary(solved);
        // equality up to global phase: |tr(U^dagger T)| = 2
        const Mat2 p = u.adjoint() * target;
        CHECK(std::abs(p.a + p.d) == Catch::Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("compensability: full EPC coverage brings any drift back to the floor") {
    Rng rng(72);
    const double e_mis = 0.01;
    for (int i = 0; i < 50; ++i) {
        const Mat2 drift = random_unitary(rng);
        const auto w = world_for(drift, e_mis, 1000 + i);
        // exact Euler compensation reaches the misalignment floor
        const EpcState exact = epc_solve(drift.adjoint());
        CHECK(objective_analytic(exact, w) == Catch::Approx(e_mis).margin(1e-9));
    }
    // 20^3 voltage grid gets within its quantization error of the floor
    const Mat2 drift = random_unitary(rng);
    const auto w = world_for(drift, e_mis, 7777);
    double best = 1.0;
    EpcState s;
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 20; ++j) {
            for (int k = 0; k < 20; ++k) {
                s.voltages = {s.v_max * i / 19.0, s.v_max * j / 19.0, s.v_max * k / 19.0};
                best = std::min(best, objective_analytic(s, w));
            }
        }
    }
    CHECK(best < e_mis + 0.02);
}

TEST_CASE("objective: aligned channel sits at the floor and is deterministic") {
    const auto w = world_for(Mat2::identity(), 0.01, 99);
    EpcState zero;
    const double q1 = objective(zero, w);
    const double q2 = objective(zero, w);
    CHECK(q1 == q2);
    CHECK(q1 == Catch::Approx(0.01).margin(0.01));
    CHECK(objective_analytic(zero, w) == Catch::Approx(0.01).margin(1e-9));

    // exact compensation of a known drift also sits at the floor
    Rng rng(73);
    const Mat2 drift = random_unitary(rng);
    const auto wd = world_for(drift, 0.01, 100);
    const EpcState comp = epc_solve(drift.adjoint());
    CHECK(objective(comp, wd) == Catch::Approx(0.01).margin(0.012));
}

TEST_CASE("quadratic stub: the central-difference descent reaches the closed-form minimum") {
    // f(v) = (v1 - 2.5)^2 (+ flat in the other channels); x* = 2.5,
    // convergence to 1e-3 within 50 steps for lr below the 1/curvature limit
    FeedbackConfig cfg;
    cfg.step_v = 0.05;
    cfg.lr = 0.4;
    auto stub = [](const EpcState& s) {
        const double d = s.voltages[0] - 2.5;
        return d * d;
    };
    EpcState v;
    v.voltages = {0.3, 1.0, 1.0};
    for (int it = 0; it < 50; ++it) v = feedback_step_with(stub, v, cfg);
    CHECK(std::abs(v.voltages[0] - 2.5) < 1e-3);
    CHECK(v.voltages[1] == 1.0);  // flat direction untouched
}

TEST_CASE("at a numerically flat point the step leaves the voltages unchanged") {
    FeedbackConfig cfg;
    auto flat = [](const EpcState&) { return 0.25; };
    EpcState v;
    v.voltages = {1.0, 2.0, 3.0};
    const EpcState w = feedback_step_with(flat, v, cfg);
    for (int j = 0; j < 3; ++j) CHECK(w.voltages[j] == Catch::Approx(v.voltages[j]).margin(1e-12));
}

TEST_CASE("finite-difference gradient of the analytic surrogate matches a 10x finer stencil") {
    Rng rng(74);
    const Mat2 drift = random_unitary(rng);
    const auto w = world_for(drift, 0.01, 2020);
    EpcState v;
    v.voltages = {1.1, 2.2, 0.7};
    for (int j = 0; j < 3; ++j) {
        auto grad_at = [&](double h) {
            EpcState p = v, m = v;
            p.voltages[j] += h;
            m.voltages[j] -= h;
            return (objective_analytic(p, w) - objective_analytic(m, w)) / (2 * h);
        };
        const double coarse = grad_at(0.05);
        const double fine = grad_at(0.005);
        if (std::abs(fine) > 1e-6) {
            CHECK(std::abs(coarse - fine) / std::abs(fine) < 0.01);
        } else {
            CHECK(std::abs(coarse - fine) < 1e-6);
        }
    }
}

TEST_CASE("descent on the analytic surrogate is monotone for a line-searched lr") {
    Rng rng(75);
    const Mat2 drift = random_unitary(rng);
    const auto w = world_for(drift, 0.01, 3030);
    auto f = [&](const EpcState& s) { return objective_analytic(s, w); };

    FeedbackConfig cfg;
    cfg.step_v = 0.02;
    // crude line search for a safe step size
    double lr0 = 2.0;
    for (; lr0 > 1e-3; lr0 *= 0.5) {
        FeedbackConfig c = cfg;
        c.lr = lr0;
        EpcState v;
        v.voltages = {3.0, 1.5, 3.0};
        bool monotone = true;
        double prev = f(v);
        for (int it = 0; it < 40; ++it) {
            v = feedback_step_with(f, v, c);
            const double cur = f(v);
            if (cur > prev + 1e-12) {
                monotone = false;
                break;
            }
            prev = cur;
        }
        if (monotone) break;
    }
    REQUIRE(lr0 > 1e-3);

    FeedbackConfig c = cfg;
    c.lr = lr0;
    EpcState v;
    v.voltages = {3.0, 1.5, 3.0};
    double prev = f(v);
    for (int it = 0; it < 60; ++it) {
        v = feedback_step_with(f, v, c);
        const double cur = f(v);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("measured-objective descent converges from random drifts (small campaign)") {
    int converged = 0;
    const int trials = 20;
    for (int i = 0; i < trials; ++i) {
        Rng rng(8000 + std::uint64_t(i));
        const Mat2 drift = random_unitary(rng);
        const auto w = world_for(drift, 0.01, 8000 + std::uint64_t(i), 2000);
        FeedbackConfig cfg;
        const FeedbackRun run = run_feedback(EpcState{}, cfg, w);
        converged += run.converged;
    }
    CHECK(converged >= trials - 1);
}

TEST_CASE("feedback loop: static drift stays converged, rows carry the CSV columns") {
    ProtocolConfig proto;
    FeedbackConfig cfg;
    cfg.interval_s = 1.0;
    cfg.probe_bits = 3000;
    const DriftTrajectory drift = DriftTrajectory::make_static(0.9, {0, 0, 1});
    const auto rows = run_feedback_loop(60.0, drift, cfg, proto, 0.01, 424242);
    REQUIRE(rows.size() == 60);
    int below = 0;
    for (std::size_t i = 10; i < rows.size(); ++i) {
        below += rows[i].qber_combined < 0.05;
        // once converged the voltages stop moving
        if (i > 11) {
            CHECK(rows[i].voltages == rows[i - 1].voltages);
        }
    }
    CHECK(below == int(rows.size() - 10));

    std::ostringstream os;
    write_feedback_csv(os, rows);
    CHECK(os.str().rfind("t_s,qber_z,qber_x,v1,v2,v3\n", 0) == 0);
}

TEST_CASE("slow sinusoidal drift is tracked below threshold") {
    ProtocolConfig proto;
    FeedbackConfig cfg;
    cfg.interval_s = 2.0;
    cfg.probe_bits = 1500;
    const DriftTrajectory drift = DriftTrajectory::make_sinusoidal(1.2, 600.0, {0, 0.6, 0.8});
    const auto rows = run_feedback_loop(300.0, drift, cfg, proto, 0.01, 515151);
    REQUIRE(rows.size() >= 100);
    double mean = 0;
    double worst = 0;
    for (const auto& r : rows) {
        mean += r.qber_combined;
        worst = std::max(worst, r.qber_combined);
    }
    mean /= double(rows.size());
    CHECK(mean < 0.02);
    CHECK(worst < 0.05);
}
