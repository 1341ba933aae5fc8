#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/tensor.hpp"

// Checkpoint file, all integers and floats little-endian:
//   8 bytes   magic "LESSCKPT"
//   u32       format version (1)
//   u64       manifest length in bytes
//   manifest  UTF-8 text:
//               epoch <e>
//               adam_steps <t>
//               config <k>          followed by k "key = value" lines
//               arrays <n>          followed by n lines "<name> <rank> <d0> .. <offset>"
//   payload   fp64 values of every array, in manifest order; <offset> counts values

namespace less {

inline constexpr char kCheckpointMagic[8] = {'L', 'E', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::size_t epoch = 0;
    std::size_t adam_steps = 0;
    std::string config;  // key = value lines
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw FormatError("checkpoint has no array '" + name + "'");
    }
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>)
        bits = std::bit_cast<std::uint64_t>(v);
    else
        bits = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>)
        return std::bit_cast<double>(bits);
    else
        return static_cast<T>(bits);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
    std::ostringstream man;
    man << "epoch " << c.epoch << "\nadam_steps " << c.adam_steps << '\n';
    std::vector<std::string> lines;
    std::istringstream cfg(c.config);
    for (std::string l; std::getline(cfg, l);)
        if (!l.empty()) lines.push_back(l);
    man << "config " << lines.size() << '\n';
    for (const auto& l : lines) man << l << '\n';
    man << "arrays " << c.arrays.size() << '\n';
    std::size_t offset = 0;
    for (const auto& a : c.arrays) {
        if (a.name.find_first_of(" \n") != std::string::npos) throw FormatError("checkpoint: bad array name " + a.name);
        if (shape_numel(a.shape) != a.values.size()) throw DimensionError("checkpoint: array " + a.name + " size mismatch");
        man << a.name << ' ' << a.shape.size();
        for (auto d : a.shape) man << ' ' << d;
        man << ' ' << offset << '\n';
        offset += a.values.size();
    }
    const std::string text = man.str();
    os.write(kCheckpointMagic, 8);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    detail::write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : c.arrays)
        for (double v : a.values) detail::write_le(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw FormatError("checkpoint: bad magic");
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto len = detail::read_le<std::uint64_t>(is);
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated manifest");

    Checkpoint c;
    std::istringstream man(text);
    auto expect = [&](const char* key) {
        std::string k;
        if (!(man >> k) || k != key) throw FormatError(std::string("checkpoint: expected '") + key + "' in manifest");
    };
    std::size_t n = 0;
    expect("epoch");
    man >> c.epoch;
    expect("adam_steps");
    man >> c.adam_steps;
    expect("config");
    man >> n;
    std::string line;
    std::getline(man, line);
    for (std::size_t i = 0; i < n; ++i) {
        std::getline(man, line);
        c.config += line + '\n';
    }
    expect("arrays");
    man >> n;
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        NamedArray a;
        std::size_t rank = 0, offset = 0;
        man >> a.name >> rank;
        a.shape.resize(rank);
        for (auto& d : a.shape) man >> d;
        man >> offset;
        if (!man || offset != total) throw FormatError("checkpoint: malformed array entry " + std::to_string(i));
        total += shape_numel(a.shape);
        c.arrays.push_back(std::move(a));
    }
    for (auto& a : c.arrays) {
        a.values.resize(shape_numel(a.shape));
        for (auto& v : a.values) v = detail::read_le<double>(is);
    }
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    write_checkpoint(os, c);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read " + path.string());
    return read_checkpoint(is);
}

}  // namespace less
