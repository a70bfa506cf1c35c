#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "qkdsim/pipeline.hpp"

using namespace qkdsim;

namespace {

RunParams quick_params(std::uint64_t seed, double loss_db, double detections) {
    RunParams p;
    p.proto.L_code = 64;
    p.proto.M = 7;
    p.proto.seed = seed;
    p.loss_db = loss_db;
    p.target_detections = detections;
    p.e_mis = 0.01;
    return p;
}

}  // namespace

TEST_CASE("end-to-end simulate: sync locks, QBER sits at the floor, key is positive") {
    // finite-key positivity needs a decent check-basis decoy sample, hence
    // the 8e5-detection acquisition
    const RunParams p = quick_params(1001, 12.0, 8e5);
    const SimulationReport rep = run_simulate(p);
    CHECK(rep.detections >= 8e5);
    CHECK(rep.sync.score_peak > rep.sync.score_runner_up);
    CHECK(rep.keyrate.qber_z == Catch::Approx(0.01).margin(0.006));
    CHECK(rep.keyrate.l_bits > 0);
    CHECK(rep.counts.n_z() > 200000);
    // disclosed estimate agrees with the key-sample QBER at this scale
    REQUIRE(rep.disclosed_qber.qber_z.has_value());
    CHECK(*rep.disclosed_qber.qber_z == Catch::Approx(rep.keyrate.qber_z).margin(0.01));
}

TEST_CASE("same seed, same run: reports are bit-identical") {
    const RunParams p = quick_params(77, 10.0, 20000);
    const SimulationReport a = run_simulate(p);
    const SimulationReport b = run_simulate(p);
    CHECK(a.counts.n_z_mu == b.counts.n_z_mu);
    CHECK(a.counts.m_x_nu == b.counts.m_x_nu);
    CHECK(a.sync.frame_offset == b.sync.frame_offset);
    CHECK(a.keyrate.l_bits == b.keyrate.l_bits);
    CHECK(a.keyrate.phi_z_U == b.keyrate.phi_z_U);

    RunParams q = p;
    q.proto.seed = 78;
    const SimulationReport c = run_simulate(q);
    CHECK(a.counts.n_z_mu != c.counts.n_z_mu);
}

TEST_CASE("clock offset and ppm error are absorbed by the recovered raster") {
    RunParams p = quick_params(1002, 10.0, 8e5);
    p.clock.offset_s = 7.3e-6;  // hundreds of frames
    p.clock.drift_ppm = 20.0;
    const SimulationReport rep = run_simulate(p);
    CHECK(rep.keyrate.qber_z == Catch::Approx(0.01).margin(0.006));
    CHECK(std::abs(rep.sync.tau_b_s - 10e-9 * (1 + 20e-6)) / 10e-9 < 1e-6);
    CHECK(rep.keyrate.l_bits > 0);
}

TEST_CASE("sweep rows: decreasing key rate, per-point failure tolerated") {
    RunParams p = quick_params(1003, 18.0, 5000);
    const auto rows = run_sweep_loss(p, {12.0, 20.0}, false);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].predicted_skr.has_value());
    REQUIRE(rows[1].predicted_skr.has_value());
    CHECK(*rows[0].predicted_skr > *rows[1].predicted_skr);
    std::ostringstream os;
    write_sweep_csv(os, rows);
    CHECK(os.str().rfind("loss_db,predicted_skr,simulated_skr\n", 0) == 0);

    const auto deep = run_sweep_loss(p, {70.0}, false);
    REQUIRE(deep.size() == 1);  // zero-rate row, not a crash
    if (deep[0].predicted_skr) CHECK(*deep[0].predicted_skr == 0.0);
}

TEST_CASE("keyrate mode rejects malformed count files with a parse error") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "qkdsim_kr_test";
    fs::create_directories(dir);
    const auto bad = (dir / "bad.counts").string();
    {
        std::ofstream os(bad);
        os << "n_z_mu 12345\n";  // missing '='
    }
    CHECK_THROWS_AS(run_keyrate(bad, ProtocolConfig{}), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("sync bench: clean channel recovers the offset every time") {
    RunParams p = quick_params(1004, 5.0, 0);
    const SyncBenchRow row = run_sync_bench_point(p, 5.0, 7, 40, 25);
    CHECK(row.trials == 25);
    CHECK(row.successes == 25);
    CHECK(row.wilson_lo > 0.8);
}

TEST_CASE("wilson interval brackets the point estimate") {
    double lo = 0, hi = 0;
    wilson_ci(990, 1000, lo, hi);
    CHECK(lo < 0.99);
    CHECK(hi > 0.99);
    CHECK(lo > 0.97);
    wilson_ci(0, 0, lo, hi);
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
}
