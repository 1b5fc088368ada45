#include "afa/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "afa/types.hpp"

namespace afa {

std::string hex_double(double x) {
  if (!std::isfinite(x)) throw NumericError("cannot serialize non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

double parse_hex_double(const std::string& token) {
  char* end = nullptr;
  double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0')
    throw DataError("malformed number: '" + token + "'");
  return v;
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  for (int i = 0; i < v.size(); ++i) {
    if (i) out << ' ';
    out << hex_double(v[i]);
  }
  out << '\n';
}

Eigen::VectorXd read_vector(std::istream& in, int size) {
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) v[i] = parse_hex_double(expect_token(in));
  return v;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << hex_double(m(r, c));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = parse_hex_double(expect_token(in));
  return m;
}

std::string expect_token(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw DataError("unexpected end of model file");
  return tok;
}

void expect_keyword(std::istream& in, const std::string& expected) {
  std::string tok = expect_token(in);
  if (tok != expected)
    throw DataError("expected '" + expected + "', got '" + tok + "'");
}

int read_int(std::istream& in) {
  std::string tok = expect_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw DataError("expected integer, got '" + tok + "'");
  }
}

std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace afa
