#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hsphere {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using NodeId = std::int64_t;

// Numerical tolerances shared by every module. All arithmetic is double.
namespace tol {
inline constexpr double kUnitNorm = 1e-9;   // allowed drift of a sphere point's norm
inline constexpr double kTangency = 1e-10;  // |x . t| for a tangent vector
inline constexpr double kZeroNorm = 1e-12;  // denominators below this are rejected
}  // namespace tol

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). The modulo bias is below 2^-50 for the sizes used here.
inline std::size_t uniform_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

/// Fisher-Yates shuffle driven only by raw engine output, so the permutation
/// does not depend on the standard library's distribution implementations.
template <typename T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

/// Malformed hierarchy file or CSV input.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tree that violates the hierarchy invariants.
class TreeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure of a sphere primitive (non-unit base point, zero-norm retraction).
class ManifoldError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or a failed sphere update during training.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch, long column = -1)
      : std::runtime_error(what), epoch_(epoch), column_(column) {}

  int epoch() const { return epoch_; }
  /// Offending Delta column, or -1 when the failure is not column specific.
  long column() const { return column_; }

 private:
  int epoch_;
  long column_;
};

}  // namespace hsphere
