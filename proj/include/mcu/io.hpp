#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mcu/model.hpp"

namespace mcu {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ConfigError("read: truncated file while reading " + what);
    return v;
}
inline void write_f64(std::ostream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline void read_f64(std::istream& is, double* p, std::size_t n, const std::string& what) {
    if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double))))
        throw ConfigError("read: truncated file while reading " + what);
}
inline void expect_magic(std::istream& is, const char* magic, const std::string& path) {
    char buf[4];
    if (!is.read(buf, 4) || std::string(buf, 4) != magic)
        throw ConfigError(path + ": bad magic, expected " + magic);
}
inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    return os;
}
inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    return is;
}

} // namespace detail

// ---------------------------------------------------------------------------
// HCUB: hyperspectral cube. magic "HCUB", version, P, N1, N2, then f64 data
// band-major row-major (the HsiCube memory order).
// ---------------------------------------------------------------------------

inline void write_cube(const std::string& path, const HsiCube& cube) {
    auto os = detail::open_out(path);
    os.write("HCUB", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(cube.P));
    detail::write_u32(os, static_cast<std::uint32_t>(cube.N1));
    detail::write_u32(os, static_cast<std::uint32_t>(cube.N2));
    detail::write_f64(os, cube.data.data.data(), cube.data.numel());
    if (!os) throw ConfigError("write failed: " + path);
}

inline HsiCube read_cube(const std::string& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "HCUB", path);
    std::uint32_t version = detail::read_u32(is, "version");
    if (version != 1) throw ConfigError(path + ": unsupported HCUB version " + std::to_string(version));
    std::size_t P = detail::read_u32(is, "P");
    std::size_t N1 = detail::read_u32(is, "N1");
    std::size_t N2 = detail::read_u32(is, "N2");
    HsiCube cube(P, N1, N2);
    detail::read_f64(is, cube.data.data.data(), cube.data.numel(), path);
    return cube;
}

// ---------------------------------------------------------------------------
// HMAT: dense matrix. magic "HMAT", version, rows, cols, f64 row-major.
// ---------------------------------------------------------------------------

inline void write_matrix(const std::string& path, const Array& m) {
    if (m.rank() != 2) throw ShapeError("write_matrix: want rank-2, got " + shape_str(m.shape));
    auto os = detail::open_out(path);
    os.write("HMAT", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(m.shape[0]));
    detail::write_u32(os, static_cast<std::uint32_t>(m.shape[1]));
    detail::write_f64(os, m.data.data(), m.numel());
    if (!os) throw ConfigError("write failed: " + path);
}

inline Array read_matrix(const std::string& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "HMAT", path);
    std::uint32_t version = detail::read_u32(is, "version");
    if (version != 1) throw ConfigError(path + ": unsupported HMAT version " + std::to_string(version));
    std::size_t rows = detail::read_u32(is, "rows");
    std::size_t cols = detail::read_u32(is, "cols");
    Array m({rows, cols});
    detail::read_f64(is, m.data.data(), m.numel(), path);
    return m;
}

// ---------------------------------------------------------------------------
// MCKP: checkpoint of named arrays (network parameters, guidance, RED state).
// ---------------------------------------------------------------------------

using NamedArrays = std::vector<std::pair<std::string, Array>>;

inline void write_checkpoint(const std::string& path, const NamedArrays& arrays) {
    auto os = detail::open_out(path);
    os.write("MCKP", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, arr] : arrays) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(arr.rank()));
        for (std::size_t d : arr.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
        detail::write_f64(os, arr.data.data(), arr.numel());
    }
    if (!os) throw ConfigError("write failed: " + path);
}

inline NamedArrays read_checkpoint(const std::string& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, "MCKP", path);
    std::uint32_t version = detail::read_u32(is, "version");
    if (version != 1) throw ConfigError(path + ": unsupported MCKP version " + std::to_string(version));
    std::size_t count = detail::read_u32(is, "count");
    NamedArrays out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
            throw ConfigError(path + ": truncated name");
        std::size_t ndim = detail::read_u32(is, "rank");
        Shape shape(ndim);
        for (auto& d : shape) d = detail::read_u32(is, "dim");
        Array arr(shape);
        detail::read_f64(is, arr.data.data(), arr.numel(), name);
        out.emplace_back(std::move(name), std::move(arr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV writing (numbers serialized with %.17g so re-reads are exact)
// ---------------------------------------------------------------------------

inline std::string fmt_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : os_(detail::open_out(path)) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i) os_ << ',';
            os_ << header[i];
        }
        os_ << '\n';
        cols_ = header.size();
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != cols_)
            throw ContractError("CsvWriter: row width " + std::to_string(cells.size()) +
                                " != header width " + std::to_string(cols_));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << cells[i];
        }
        os_ << '\n';
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
    std::size_t cols_ = 0;
};

} // namespace mcu
