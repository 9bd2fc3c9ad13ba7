#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Label value standing for "not one of the known classes".
inline constexpr int kUnknown = -1;

/// Probabilities are clamped to this floor inside logarithms.
inline constexpr double kLogEps = 1e-12;

/// Operands with centered norm below this are treated as zero-variance.
inline constexpr double kVarianceEps = 1e-12;

struct InconsistentStateError : std::runtime_error {
  explicit InconsistentStateError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainingDivergedError : std::runtime_error {
  explicit TrainingDivergedError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// True when p is a valid probability vector: entries in [0,1], sum within tol of 1.
inline bool is_prob_vector(const Vector& p, double tol = 1e-6) {
  if (p.size() == 0 || !p.allFinite()) return false;
  if ((p.array() < -tol).any() || (p.array() > 1.0 + tol).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

inline Vector one_hot(int hot, int size) {
  require(size > 0 && hot >= 0 && hot < size, "one_hot: index out of range");
  Vector y = Vector::Zero(size);
  y[hot] = 1.0;
  return y;
}

}  // namespace rcd
