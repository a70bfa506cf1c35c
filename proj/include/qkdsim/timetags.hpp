#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "qkdsim/channel.hpp"
#include "qkdsim/io.hpp"

namespace qkdsim {

// Detection-event persistence, mirroring a TDC dump: integer picoseconds plus
// detector id. Two encodings share the unit so they round-trip bit-exactly:
//   csv     "timestamp_ps,detector" per line with a header
//   binary  "QKDT" magic, u32 version, u64 count, then (i64 ps, u8 det) records
inline std::int64_t to_picoseconds(double seconds) {
    return static_cast<std::int64_t>(std::llround(seconds * 1e12));
}

inline void write_timetags_csv(const std::string& path, const std::vector<DetectionEvent>& events) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os << "timestamp_ps,detector\n";
    for (const auto& e : events) {
        os << to_picoseconds(e.timestamp_s) << ',' << int(e.detector) << '\n';
    }
}

inline std::vector<DetectionEvent> read_timetags_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path);
    std::vector<DetectionEvent> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (lineno == 1 && line.rfind("timestamp_ps", 0) == 0) continue;
        if (KeyValueFile::trim(line).empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected ps,detector");
        try {
            const std::int64_t ps = std::stoll(line.substr(0, comma));
            const int det = std::stoi(line.substr(comma + 1));
            if (det < 0 || det > 3) throw std::out_of_range("detector");
            out.push_back({static_cast<double>(ps) * 1e-12, static_cast<std::uint8_t>(det), -1});
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad record: " + line);
        }
    }
    return out;
}

inline void write_timetags_binary(const std::string& path, const std::vector<DetectionEvent>& events) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    const char magic[4] = {'Q', 'K', 'D', 'T'};
    const std::uint32_t version = 1;
    const std::uint64_t count = events.size();
    os.write(magic, 4);
    os.write(reinterpret_cast<const char*>(&version), sizeof(version));
    os.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& e : events) {
        const std::int64_t ps = to_picoseconds(e.timestamp_s);
        os.write(reinterpret_cast<const char*>(&ps), sizeof(ps));
        os.write(reinterpret_cast<const char*>(&e.detector), 1);
    }
}

inline std::vector<DetectionEvent> read_timetags_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open " + path);
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t count = 0;
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "QKDT", 4) != 0) throw ParseError(path + ": not a timetag file");
    is.read(reinterpret_cast<char*>(&version), sizeof(version));
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!is || version != 1) throw ParseError(path + ": unsupported timetag version");
    std::vector<DetectionEvent> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::int64_t ps;
        std::uint8_t det;
        is.read(reinterpret_cast<char*>(&ps), sizeof(ps));
        is.read(reinterpret_cast<char*>(&det), 1);
        if (!is) throw ParseError(path + ": truncated record");
        out.push_back({static_cast<double>(ps) * 1e-12, det, -1});
    }
    return out;
}

}  // namespace qkdsim
