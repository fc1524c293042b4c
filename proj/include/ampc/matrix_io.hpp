#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>
#include <Eigen/Core>

#include "ampc/checksum.hpp"
#include "ampc/errors.hpp"

namespace ampc {

// Flat binary matrix file: 8-byte magic "AMPCMAT1", then rows and cols as
// little-endian uint64, then rows*cols float64 little-endian, row-major.

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode_matrix(const Eigen::MatrixXd& m) {
    std::string out;
    out.reserve(24 + static_cast<std::size_t>(m.size()) * 8);
    out.append("AMPCMAT1");
    detail::put_u64_le(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64_le(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double d = m(r, c);
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            detail::put_u64_le(out, bits);
        }
    }
    return out;
}

inline Eigen::MatrixXd decode_matrix(const std::string& buf) {
    if (buf.size() < 24 || buf.compare(0, 8, "AMPCMAT1") != 0)
        throw IoError("bad matrix header");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    std::uint64_t rows = detail::get_u64_le(p + 8);
    std::uint64_t cols = detail::get_u64_le(p + 16);
    if (buf.size() != 24 + rows * cols * 8) throw IoError("matrix payload size mismatch");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t off = 24;
    for (std::uint64_t r = 0; r < rows; ++r) {
        for (std::uint64_t c = 0; c < cols; ++c) {
            std::uint64_t bits = detail::get_u64_le(p + off);
            double d;
            std::memcpy(&d, &bits, 8);
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = d;
            off += 8;
        }
    }
    return m;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("short write to " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void save_matrix(const std::string& path, const Eigen::MatrixXd& m) {
    write_file(path, encode_matrix(m));
}

inline Eigen::MatrixXd load_matrix(const std::string& path) {
    return decode_matrix(read_file(path));
}

/// Deterministic text rendering of a double (round-trips exactly).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// CSV with a header row, one series per column.
inline void save_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& columns) {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    std::size_t rows = 0;
    for (const auto& c : columns) rows = std::max(rows, c.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (c) out << ",";
            if (r < columns[c].size()) out << format_double(columns[c][r]);
        }
        out << "\n";
    }
    write_file(path, out.str());
}

}  // namespace ampc
