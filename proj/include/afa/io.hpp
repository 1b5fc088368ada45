#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace afa {

// Bit-faithful textual encoding of doubles (C99 hexfloat).
std::string hex_double(double x);
double parse_hex_double(const std::string& token);

void write_vector(std::ostream& out, const Eigen::VectorXd& v);
Eigen::VectorXd read_vector(std::istream& in, int size);
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);  // row-major
Eigen::MatrixXd read_matrix(std::istream& in, int rows, int cols);

// Reads the next whitespace-separated token; throws DataError on EOF.
std::string expect_token(std::istream& in);
// Reads a token and checks it equals `expected`.
void expect_keyword(std::istream& in, const std::string& expected);
int read_int(std::istream& in);

// FNV-1a over a canonical serialization; used to stamp checkpoints.
std::uint64_t fnv1a_hash(const std::string& text);

}  // namespace afa
