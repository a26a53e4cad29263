#include "lorafuse/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

#include "lorafuse/errors.hpp"

namespace lorafuse {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a_doubles(const double* data, std::size_t count, std::uint64_t h) {
    std::vector<unsigned char> buf;
    buf.reserve(8);
    for (std::size_t i = 0; i < count; ++i) {
        buf.clear();
        append_le_double(buf, data[i]);
        h = fnv1a(buf.data(), buf.size(), h);
    }
    return h;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

void append_le64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void append_le_double(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_le64(out, bits);
}

std::uint64_t read_le64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

double read_le_double(const unsigned char* p) {
    std::uint64_t bits = read_le64(p);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

void write_f64(std::ostream& os, const std::vector<Eigen::MatrixXd>& planes) {
    std::vector<unsigned char> buf;
    for (const auto& m : planes) {
        buf.clear();
        buf.reserve(static_cast<std::size_t>(m.size()) * 8);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) append_le_double(buf, m(r, c));
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
}

void write_pgm(std::ostream& os, const Eigen::MatrixXd& plane) {
    const double lo = plane.minCoeff();
    const double hi = plane.maxCoeff();
    const double span = hi - lo;
    os << "P5\n" << plane.cols() << " " << plane.rows() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(plane.cols()));
    for (Eigen::Index r = 0; r < plane.rows(); ++r) {
        for (Eigen::Index c = 0; c < plane.cols(); ++c) {
            double v = span > 0.0 ? (plane(r, c) - lo) / span : 0.0;
            row[static_cast<std::size_t>(c)] = static_cast<unsigned char>(v * 255.0 + 0.5);
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path);
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << text;
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace lorafuse
