#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkdsim/io.hpp"

namespace qkdsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Protocol-level parameters shared by every module. Defaults follow the
// 18 dB field operating point (one-decoy BB84 at 100 MHz, 1:7 sync ratio).
struct ProtocolConfig {
    double f = 1.0e8;           // pulse repetition rate, Hz
    std::int64_t L_code = 64;   // correlation-code length (sync qubits per frame)
    std::int64_t M = 7;         // random qubits per sync qubit
    double mu = 0.466;          // signal intensity, mean photons/pulse
    double nu = 0.127;          // decoy intensity
    double p_mu = 0.761;        // probability of sending the signal intensity
    double p_z_alice = 0.935;   // Alice Z-basis probability (key slots)
    double p_z_bob = 0.5;       // Bob basis choice is a passive 50/50 split
    double eps_sec = 1e-9;
    double eps_cor = 1e-9;
    double f_e = 1.16;          // error-correction efficiency factor
    std::uint64_t seed = 1;

    std::int64_t frame_length() const { return L_code * (M + 1); }
    double q() const { return static_cast<double>(M) / static_cast<double>(M + 1); }

    // Every violated invariant is reported by name in one exception.
    void validate() const {
        std::vector<std::string> bad;
        if (!(f > 0)) bad.push_back("f must be > 0");
        if (L_code < 2) bad.push_back("L_code must be >= 2");
        if (M < 1) bad.push_back("M must be >= 1");
        if (!(nu > 0)) bad.push_back("nu must be > 0");
        if (!(nu < mu)) bad.push_back("nu >= mu (decoy bounds need nu < mu)");
        if (!(mu < 1)) bad.push_back("mu must be < 1");
        if (!(p_mu > 0 && p_mu < 1)) bad.push_back("p_mu must be in (0,1)");
        if (!(p_z_alice > 0 && p_z_alice < 1)) bad.push_back("p_z_alice must be in (0,1)");
        if (p_z_bob != 0.5) bad.push_back("p_z_bob is fixed at 0.5");
        if (!(eps_sec > 0 && eps_sec < 1)) bad.push_back("eps_sec must be in (0,1)");
        if (!(eps_cor > 0 && eps_cor < 1)) bad.push_back("eps_cor must be in (0,1)");
        if (!(f_e >= 1)) bad.push_back("f_e must be >= 1");
        if (!bad.empty()) {
            std::string msg = "invalid ProtocolConfig:";
            for (const auto& b : bad) msg += "\n  - " + b;
            throw ConfigError(msg);
        }
    }

    static ProtocolConfig from_key_values(const KeyValueFile& kv, const std::string& section = "protocol") {
        ProtocolConfig c;
        auto k = [&](const char* name) { return section.empty() ? std::string(name) : section + "." + name; };
        c.f = kv.get_double(k("f"), c.f);
        c.L_code = kv.get_int(k("L_code"), c.L_code);
        c.M = kv.get_int(k("M"), c.M);
        c.mu = kv.get_double(k("mu"), c.mu);
        c.nu = kv.get_double(k("nu"), c.nu);
        c.p_mu = kv.get_double(k("p_mu"), c.p_mu);
        c.p_z_alice = kv.get_double(k("p_z_alice"), c.p_z_alice);
        c.p_z_bob = kv.get_double(k("p_z_bob"), c.p_z_bob);
        c.eps_sec = kv.get_double(k("eps_sec"), c.eps_sec);
        c.eps_cor = kv.get_double(k("eps_cor"), c.eps_cor);
        c.f_e = kv.get_double(k("f_e"), c.f_e);
        c.seed = static_cast<std::uint64_t>(kv.get_int(k("seed"), static_cast<std::int64_t>(c.seed)));
        c.validate();
        return c;
    }
};

}  // namespace qkdsim
