#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "less/errors.hpp"

// Point cloud files
// -----------------
// First line: "<N> 6" for the text form, "<N> 6 f64le" for the binary form.
// Text form: N lines of "x y z r g b", printed with 17 significant digits so
// values round-trip exactly. Binary form: immediately after the header's
// newline, N*6 IEEE-754 binary64 values in little-endian byte order,
// row-major (x y z r g b per point).

namespace less {

// One row per point: x, y, z in meters, then r, g, b in [0, 1].
struct PointCloud {
    std::vector<std::array<double, 6>> points;

    std::size_t size() const { return points.size(); }

    void validate() const {
        if (points.empty()) throw ContractError("point cloud is empty");
        for (const auto& p : points)
            for (double v : p)
                if (!std::isfinite(v)) throw ContractError("point cloud has a non-finite attribute");
    }
};

enum class PointFileFormat { text, binary };

namespace detail {
inline void put_le(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(b, 8);
}
inline double get_le(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("point file: truncated binary payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}
}  // namespace detail

inline void write_point_cloud(std::ostream& os, const PointCloud& pc, PointFileFormat fmt = PointFileFormat::text) {
    if (fmt == PointFileFormat::binary) {
        os << pc.size() << " 6 f64le\n";
        for (const auto& p : pc.points)
            for (double v : p) detail::put_le(os, v);
        return;
    }
    os << pc.size() << " 6\n";
    char buf[32];
    for (const auto& p : pc.points) {
        for (int i = 0; i < 6; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", p[i]);
            os << buf << (i == 5 ? '\n' : ' ');
        }
    }
}

inline PointCloud read_point_cloud(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw FormatError("point file: missing header");
    std::istringstream hs(header);
    long long n = -1;
    int width = 0;
    std::string tag;
    hs >> n >> width;
    if (!hs || n < 1 || width != 6) throw FormatError("point file: bad header '" + header + "'");
    hs >> tag;
    PointCloud pc;
    pc.points.resize(static_cast<std::size_t>(n));
    if (tag == "f64le") {
        for (auto& p : pc.points)
            for (auto& v : p) v = detail::get_le(is);
    } else if (tag.empty()) {
        for (auto& p : pc.points)
            for (auto& v : p)
                if (!(is >> v)) throw FormatError("point file: expected " + std::to_string(n) + " rows of 6 values");
    } else {
        throw FormatError("point file: unknown encoding '" + tag + "'");
    }
    return pc;
}

inline void save_point_cloud(const std::filesystem::path& path, const PointCloud& pc,
                             PointFileFormat fmt = PointFileFormat::text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    write_point_cloud(os, pc, fmt);
}

inline PointCloud load_point_cloud(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read " + path.string());
    return read_point_cloud(is);
}

}  // namespace less
