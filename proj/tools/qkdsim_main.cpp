#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qkdsim/pipeline.hpp"
#include "qkdsim/timetags.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace qkdsim;

namespace {

struct CliError : std::runtime_error {
    int exit_code;
    CliError(int code, const std::string& what) : std::runtime_error(what), exit_code(code) {}
};

ordered_json keyrate_json(const KeyRateReport& r) {
    return ordered_json{{"s_z0_L", r.s_z0_L},
                        {"s_z1_L", r.s_z1_L},
                        {"phi_z_U", r.phi_z_U},
                        {"lambda_ec", r.lambda_ec},
                        {"l_bits", r.l_bits},
                        {"skr_bits_per_s", r.skr_bits_per_s},
                        {"skr_eq_norm_bits_per_s", r.skr_eq_norm_bits_per_s},
                        {"qber_z", r.qber_z},
                        {"feasible", r.feasible}};
}

ordered_json sync_json(const SyncResult& s) {
    return ordered_json{{"tau_b_s", s.tau_b_s},
                        {"t0_s", s.t0_s},
                        {"frame_offset", s.frame_offset},
                        {"score_peak", s.score_peak},
                        {"score_runner_up", s.score_runner_up},
                        {"votes_at_peak", s.votes_at_peak},
                        {"assigned_events", s.assigned.size()}};
}

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream os(p);
    if (!os) throw CliError(2, "cannot write " + p.string());
    os << body;
}

struct Manifest {
    std::string mode, config_path;
    std::uint64_t seed = 0;
    fs::path out_dir;
    ordered_json files = ordered_json::object();

    void record(const fs::path& p) { files[p.filename().string()] = fnv1a64_file(p.string()); }

    void write() const {
        ordered_json j{{"mode", mode},
                       {"config", config_path},
                       {"seed", seed},
                       {"out_dir", out_dir.string()},
                       {"format_version", 1},
                       {"checksums_fnv1a64", files}};
        std::ofstream os(out_dir / "manifest.json");
        os << j.dump(2) << '\n';
    }
};

std::vector<double> parse_loss_grid(const std::string& arg) {
    std::vector<double> out;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = KeyValueFile::trim(item);
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Discrete-event simulator and finite-key analysis toolkit for a "
                 "polarization-encoded one-decoy BB84 link with qubit-based frame synchronization"};
    std::string mode, config_path, out_dir = "out", counts_file, loss_arg;
    std::int64_t seed = -1;
    std::int64_t trials = 100;
    double max_pulses = -1;
    app.add_option("--mode", mode,
                   "simulate | keyrate | optimize | sweep-loss | sync-bench | feedback-demo")
        ->required();
    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--seed", seed, "override [protocol] seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--counts", counts_file, "counts file for keyrate mode");
    app.add_option("--loss-db", loss_arg, "loss override, or comma grid for sweep-loss");
    app.add_option("--max-pulses", max_pulses, "cap on transmitted pulses");
    app.add_option("--trials", trials, "trials for sync-bench");
    CLI11_PARSE(app, argc, argv);

    RunParams params;
    if (!config_path.empty()) {
        try {
            params = RunParams::from_file(config_path);
        } catch (const std::exception& e) {
            throw CliError(2, e.what());
        }
    }
    if (seed >= 0) params.proto.seed = static_cast<std::uint64_t>(seed);
    if (max_pulses > 0) params.max_pulses = static_cast<std::uint64_t>(max_pulses);
    if (!loss_arg.empty() && mode != "sweep-loss") params.loss_db = std::stod(loss_arg);
    try {
        params.proto.validate();
    } catch (const std::exception& e) {
        throw CliError(2, e.what());
    }

    fs::create_directories(out_dir);
    Manifest manifest{mode, config_path, params.proto.seed, out_dir};

    if (mode == "simulate") {
        SimulationReport rep;
        try {
            rep = run_simulate(params);
        } catch (const SyncError& e) {
            throw CliError(3, e.what());
        }
        {
            std::ostringstream counts;
            counts << "mu = " << params.proto.mu << "\nnu = " << params.proto.nu
                   << "\np_mu = " << params.proto.p_mu << "\np_z_alice = " << params.proto.p_z_alice
                   << "\nM = " << params.proto.M << '\n';
            rep.counts.write(counts);
            write_text(fs::path(out_dir) / "counts.txt", counts.str());
        }
        write_text(fs::path(out_dir) / "sync.json", sync_json(rep.sync).dump(2) + "\n");
        write_text(fs::path(out_dir) / "keyrate.json", keyrate_json(rep.keyrate).dump(2) + "\n");
        manifest.record(fs::path(out_dir) / "counts.txt");
        manifest.record(fs::path(out_dir) / "sync.json");
        manifest.record(fs::path(out_dir) / "keyrate.json");
        manifest.write();
        std::cout << "simulate: pulses=" << rep.pulses << " detections=" << rep.detections
                  << " qber_z=" << rep.keyrate.qber_z << " l=" << rep.keyrate.l_bits
                  << " skr=" << rep.keyrate.skr_bits_per_s << " bit/s\n";
        if (rep.keyrate.l_bits <= 0) throw CliError(4, "key length is zero (infeasible)");
        return 0;
    }

    if (mode == "keyrate") {
        if (counts_file.empty()) throw CliError(2, "keyrate mode needs --counts");
        KeyRateReport rep;
        try {
            rep = run_keyrate(counts_file, params.proto);
        } catch (const ParseError& e) {
            throw CliError(2, e.what());
        }
        write_text(fs::path(out_dir) / "keyrate.json", keyrate_json(rep).dump(2) + "\n");
        manifest.record(fs::path(out_dir) / "keyrate.json");
        manifest.write();
        std::cout << "keyrate: l=" << rep.l_bits << " skr=" << rep.skr_bits_per_s
                  << " bit/s phi_z_U=" << rep.phi_z_U << " s_z1_L=" << rep.s_z1_L << '\n';
        if (rep.l_bits <= 0) throw CliError(4, "key length is zero (infeasible)");
        return 0;
    }

    if (mode == "optimize") {
        const OptimizeResult opt = optimize_parameters(params.loss_db, params.det, params.e_mis,
                                                       1e7, params.proto);
        ordered_json j{{"loss_db", params.loss_db}, {"mu", opt.mu},       {"nu", opt.nu},
                       {"p_mu", opt.p_mu},          {"p_z", opt.p_z},     {"predicted_skr", opt.predicted_skr},
                       {"feasible", opt.feasible}};
        write_text(fs::path(out_dir) / "optimize.json", j.dump(2) + "\n");
        manifest.record(fs::path(out_dir) / "optimize.json");
        manifest.write();
        std::cout << j.dump(2) << '\n';
        return 0;
    }

    if (mode == "sweep-loss") {
        std::vector<double> grid = loss_arg.empty()
                                       ? std::vector<double>{18, 24, 30, 35, 40}
                                       : parse_loss_grid(loss_arg);
        const auto rows = run_sweep_loss(params, grid);
        std::ostringstream csv;
        write_sweep_csv(csv, rows);
        write_text(fs::path(out_dir) / "sweep.csv", csv.str());
        manifest.record(fs::path(out_dir) / "sweep.csv");
        manifest.write();
        std::cout << csv.str();
        return 0;
    }

    if (mode == "sync-bench") {
        if (trials < 1) throw CliError(2, "sync-bench needs --trials >= 1");
        // acquisition sized for >= 300 expected sync detections at each point
        std::ostringstream csv;
        csv << "loss_db,M,trials,successes,rate,wilson_lo,wilson_hi\n";
        for (const auto& [loss, M] : std::vector<std::pair<double, std::int64_t>>{
                 {params.loss_db, params.proto.M}, {params.loss_db, 3}}) {
            ChannelModel loss_only;
            loss_only.loss_db = loss;
            const double p_sync = click_probability(params.proto.mu,
                                                    system_efficiency(loss_only, params.det));
            const double per_frame = static_cast<double>(params.proto.L_code) * p_sync;
            const auto frames = static_cast<std::int64_t>(std::ceil(320.0 / per_frame));
            ProtocolConfig proto = params.proto;
            proto.M = M;
            RunParams p = params;
            p.proto = proto;
            const auto row = run_sync_bench_point(p, loss, M, frames, static_cast<int>(trials));
            csv << row.loss_db << ',' << row.M << ',' << row.trials << ',' << row.successes << ','
                << row.rate << ',' << row.wilson_lo << ',' << row.wilson_hi << '\n';
        }
        write_text(fs::path(out_dir) / "sync_bench.csv", csv.str());
        manifest.record(fs::path(out_dir) / "sync_bench.csv");
        manifest.write();
        std::cout << csv.str();
        return 0;
    }

    if (mode == "feedback-demo") {
        Rng rng(params.proto.seed);
        const DriftTrajectory drift = DriftTrajectory::parse(
            params.drift_kind, params.drift_amplitude_rad, params.drift_period_s,
            params.drift_step_rad, rng);
        const auto rows = run_feedback_loop(params.duration_s, drift, params.feedback,
                                            params.proto, params.e_mis, params.proto.seed);
        std::ostringstream csv;
        write_feedback_csv(csv, rows);
        write_text(fs::path(out_dir) / "feedback.csv", csv.str());
        manifest.record(fs::path(out_dir) / "feedback.csv");
        manifest.write();
        std::cout << "feedback-demo: " << rows.size() << " samples written\n";
        return 0;
    }

    throw CliError(2, "unknown mode: " + mode);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CliError& e) {
        ordered_json err{{"error", e.what()}, {"exit_code", e.exit_code}};
        std::cerr << err.dump() << '\n';
        return e.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << ordered_json{{"error", e.what()}, {"exit_code", 2}}.dump() << '\n';
        return 2;
    } catch (const SyncError& e) {
        std::cerr << ordered_json{{"error", e.what()}, {"exit_code", 3}}.dump() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << ordered_json{{"error", e.what()}, {"exit_code", 1}}.dump() << '\n';
        return 1;
    }
}
