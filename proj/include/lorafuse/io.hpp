#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lorafuse {

// FNV-1a 64-bit over raw bytes; the published digest for weight and
// latent checksums. Doubles are hashed in row-major little-endian order.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a_doubles(const double* data, std::size_t count, std::uint64_t h = 0xcbf29ce484222325ull);
std::string to_hex(std::uint64_t v);

// Fixed-width decimal formatting used by every CSV/JSON writer so that
// re-running a command reproduces artifacts byte for byte. %.17g round-trips
// IEEE doubles exactly.
std::string format_double(double v);

void append_le64(std::vector<unsigned char>& out, std::uint64_t v);
void append_le_double(std::vector<unsigned char>& out, double v);
std::uint64_t read_le64(const unsigned char* p);
double read_le_double(const unsigned char* p);

// Row-major float64 dump of a stack of equally sized planes.
void write_f64(std::ostream& os, const std::vector<Eigen::MatrixXd>& planes);

// 8-bit binary PGM of one plane, min-max normalized (flat planes map to 0).
void write_pgm(std::ostream& os, const Eigen::MatrixXd& plane);

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace lorafuse
