#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pacd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

// Violated precondition or malformed argument (CLI exit code 1).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside a function's mathematical domain.
class DomainError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed input file; the message carries the offending row.
class ParseError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Non-finite values or divergence during optimization (CLI exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

// Axis-aligned feasible box for inputs. The default is the pixel range.
struct Box {
  double lo = 0.0;
  double hi = 1.0;

  static Box unbounded() {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream that can derive independent child streams.
///
/// Children are keyed by up to two integers, so a child for (point, chunk)
/// is the same no matter which order the parent hands them out. This is what
/// makes chunked Monte-Carlo sampling reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::uint64_t a, std::uint64_t b = 0) const {
    return Rng(splitmix64(splitmix64(seed_ ^ 0x5851f42d4c957f2dULL) + a * 0x2545f4914f6cdd1dULL) ^
               splitmix64(b + 0x632be59bd9b4e019ULL));
  }

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    double* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = normal_(engine_);
    return m;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Index of the largest entry; ties go to the smallest index.
template <class Row>
int argmax(const Row& row) {
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = static_cast<int>(c);
  return best;
}

inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  require(v.size() == rows * cols, "unflatten: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace pacd
