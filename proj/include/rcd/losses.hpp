#pragma once

#include <cmath>
#include <algorithm>
#include <vector>

#include "rcd/core.hpp"

// Training losses. Batches are row-major: one sample per matrix row.
// Every loss reduces over the batch by the arithmetic mean, and every
// gradient below is the gradient of that batch mean.

namespace rcd {

/// Numerically stable normalized-exponential map.
inline Vector softmax(const Vector& logits) {
  require(logits.size() > 0, "softmax: empty logit vector");
  require(logits.allFinite(), "softmax: non-finite logits");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Row-wise softmax over a batch of logit vectors.
inline Matrix softmax_rows(const Matrix& logits) {
  require(logits.rows() > 0 && logits.cols() > 0, "softmax_rows: empty batch");
  require(logits.allFinite(), "softmax_rows: non-finite logits");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    p.row(i) = softmax(logits.row(i).transpose()).transpose();
  return p;
}

namespace detail {
inline double clamped_log(double p) { return std::log(std::max(p, kLogEps)); }

inline void check_prob_batch(const Matrix& probs, const char* who) {
  require(probs.rows() > 0, std::string(who) + ": empty batch");
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    require(is_prob_vector(probs.row(i).transpose()),
            std::string(who) + ": row is not a probability vector");
}

inline void check_labels(const std::vector<int>& labels, Eigen::Index n, int k, const char* who) {
  require(static_cast<Eigen::Index>(labels.size()) == n,
          std::string(who) + ": batch/label length mismatch");
  for (int y : labels)
    require(y >= 0 && y < k, std::string(who) + ": label outside known classes");
}
}  // namespace detail

/// Maximum entropy loss, (1/N) sum_ij p_ij log p_ij, with 0*log0 := 0.
/// Minimized at -log(k+u) when every row is uniform.
inline double max_entropy_loss(const Matrix& probs) {
  detail::check_prob_batch(probs, "max_entropy_loss");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < probs.rows(); ++j)
    for (Eigen::Index i = 0; i < probs.cols(); ++i) {
      const double p = probs(j, i);
      if (p > 0.0) acc += p * detail::clamped_log(p);
    }
  return acc / static_cast<double>(probs.rows());
}

/// Gradient of max_entropy_loss(softmax_rows(logits)) w.r.t. the logits.
inline Matrix max_entropy_grad_logits(const Matrix& logits) {
  const Matrix p = softmax_rows(logits);
  const double n = static_cast<double>(logits.rows());
  Matrix g(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < p.rows(); ++j) {
    double h = 0.0;  // sum_i p_i log p_i
    for (Eigen::Index i = 0; i < p.cols(); ++i) h += p(j, i) * detail::clamped_log(p(j, i));
    for (Eigen::Index i = 0; i < p.cols(); ++i)
      g(j, i) = p(j, i) * (detail::clamped_log(p(j, i)) - h) / n;
  }
  return g;
}

/// Causal effect loss, the cross-entropy -(1/N) sum_ij y_ij log p_ij.
inline double causal_effect_loss(const Matrix& probs, const std::vector<int>& labels) {
  detail::check_prob_batch(probs, "causal_effect_loss");
  detail::check_labels(labels, probs.rows(), static_cast<int>(probs.cols()), "causal_effect_loss");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < probs.rows(); ++j)
    acc -= detail::clamped_log(probs(j, labels[j]));
  return acc / static_cast<double>(probs.rows());
}

/// Gradient of causal_effect_loss(softmax_rows(logits), labels) w.r.t. the logits.
inline Matrix causal_effect_grad_logits(const Matrix& logits, const std::vector<int>& labels) {
  detail::check_labels(labels, logits.rows(), static_cast<int>(logits.cols()),
                       "causal_effect_grad_logits");
  Matrix g = softmax_rows(logits);
  for (Eigen::Index j = 0; j < g.rows(); ++j) g(j, labels[j]) -= 1.0;
  return g / static_cast<double>(logits.rows());
}

/// Pearson correlation across the feature dimensions of two vectors.
/// Returns 0 when either operand has zero variance.
inline double pearson_correlation(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "pearson_correlation: length mismatch");
  require(a.size() >= 2, "pearson_correlation: need at least two dimensions");
  require(a.allFinite() && b.allFinite(), "pearson_correlation: non-finite input");
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double na = ac.norm(), nb = bc.norm();
  if (na < kVarianceEps || nb < kVarianceEps) return 0.0;
  return ac.dot(bc) / (na * nb);
}

/// Gradient of pearson_correlation(a, b) with respect to b.
inline Vector pearson_correlation_grad_b(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "pearson_correlation_grad_b: length mismatch");
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double na = ac.norm(), nb = bc.norm();
  if (na < kVarianceEps || nb < kVarianceEps) return Vector::Zero(b.size());
  const double cor = ac.dot(bc) / (na * nb);
  Vector g = ac / (na * nb) - (cor / (nb * nb)) * bc;
  return g.array() - g.mean();  // chain rule through the centering
}

namespace detail {
inline void check_nc_inputs(const Matrix& x, const std::vector<Matrix>& cf, int count,
                            const char* who) {
  require(count >= 1, std::string(who) + ": count must be >= 1");
  require(static_cast<int>(cf.size()) >= count,
          std::string(who) + ": count exceeds available counterfactual batches");
  for (int i = 0; i < count; ++i)
    require(cf[i].rows() == x.rows() && cf[i].cols() == x.cols(),
            std::string(who) + ": counterfactual batch shape mismatch");
  require(x.rows() > 0 && x.cols() >= 2, std::string(who) + ": empty or degenerate batch");
}
}  // namespace detail

/// Negative correlation loss. Per sample the correlations between each
/// counterfactual feature and the feature left after subtracting the pool
/// up to it, averaged over the first `count` pool entries and the batch.
/// Eq. 5 uses count = t-1 (learning phase); Eq. 8 uses count = t.
inline double negative_correlation_loss(const Matrix& x, const std::vector<Matrix>& cf,
                                        int count) {
  detail::check_nc_inputs(x, cf, count, "negative_correlation_loss");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    Vector residual = x.row(j).transpose();
    for (int s = 0; s < count; ++s) {
      residual -= cf[s].row(j).transpose();
      acc += pearson_correlation(cf[s].row(j).transpose(), residual);
    }
  }
  return acc / (static_cast<double>(x.rows()) * count);
}

/// Gradient of negative_correlation_loss w.r.t. the trainable features x.
inline Matrix negative_correlation_grad_x(const Matrix& x, const std::vector<Matrix>& cf,
                                          int count) {
  detail::check_nc_inputs(x, cf, count, "negative_correlation_grad_x");
  Matrix g = Matrix::Zero(x.rows(), x.cols());
  const double scale = 1.0 / (static_cast<double>(x.rows()) * count);
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    Vector residual = x.row(j).transpose();
    for (int s = 0; s < count; ++s) {
      residual -= cf[s].row(j).transpose();
      // d residual / d x_j = I for every subtraction depth
      g.row(j) += scale *
                  pearson_correlation_grad_b(cf[s].row(j).transpose(), residual).transpose();
    }
  }
  return g;
}

/// Potential confounder learning loss: per sample the gap between the
/// largest logit over all dimensions and the largest over the dimensions
/// with the ground truth removed, batch-averaged. Zero whenever the ground
/// truth dimension is not the unique argmax.
inline double pcl_loss(const Matrix& causal_logits, const std::vector<int>& labels, int k,
                       int u) {
  require(k >= 1 && u >= 0, "pcl_loss: invalid k/u");
  require(causal_logits.cols() == k + u, "pcl_loss: logit length must be k+u");
  require(k + u >= 2, "pcl_loss: needs at least two logit dimensions");
  require(causal_logits.rows() > 0, "pcl_loss: empty batch");
  detail::check_labels(labels, causal_logits.rows(), k, "pcl_loss");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < causal_logits.rows(); ++j) {
    double full_max = -std::numeric_limits<double>::infinity();
    double excl_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k + u; ++i) {
      const double v = causal_logits(j, i);
      full_max = std::max(full_max, v);
      if (i != labels[j]) excl_max = std::max(excl_max, v);
    }
    acc += std::abs(full_max - excl_max);  // L2 norm of a scalar difference
  }
  return acc / static_cast<double>(causal_logits.rows());
}

/// Gradient of pcl_loss w.r.t. the causal logits (subgradient at ties).
inline Matrix pcl_grad_logits(const Matrix& causal_logits, const std::vector<int>& labels,
                              int k, int u) {
  require(causal_logits.cols() == k + u && k + u >= 2, "pcl_grad_logits: invalid shape");
  detail::check_labels(labels, causal_logits.rows(), k, "pcl_grad_logits");
  Matrix g = Matrix::Zero(causal_logits.rows(), causal_logits.cols());
  const double n = static_cast<double>(causal_logits.rows());
  for (Eigen::Index j = 0; j < causal_logits.rows(); ++j) {
    int full_arg = 0, excl_arg = -1;
    for (int i = 1; i < k + u; ++i)
      if (causal_logits(j, i) > causal_logits(j, full_arg)) full_arg = i;
    for (int i = 0; i < k + u; ++i) {
      if (i == labels[j]) continue;
      if (excl_arg < 0 || causal_logits(j, i) > causal_logits(j, excl_arg)) excl_arg = i;
    }
    if (full_arg != excl_arg) {  // loss is zero with zero gradient otherwise
      g(j, full_arg) += 1.0 / n;
      g(j, excl_arg) -= 1.0 / n;
    }
  }
  return g;
}

/// Mean Shannon entropy (natural log) of a batch of probability rows.
/// Equals -max_entropy_loss for the same batch.
inline double mean_prediction_entropy(const Matrix& probs) {
  return -max_entropy_loss(probs);
}

/// Component values entering the composite step losses.
struct LossTerms {
  double me = 0.0;   ///< maximum entropy term
  double ce = 0.0;   ///< causal effect (cross-entropy) term
  double nc = 0.0;   ///< negative correlation term
  double pcl = 0.0;  ///< potential confounder learning term
};

/// Counterfactual-learning loss: L_ME at the first step, otherwise
/// L_CE + lambda1 * L_NC + lambda2 * L_PCL.
inline double loss_s1(int t, const LossTerms& parts, double lambda1, double lambda2) {
  require(t >= 1, "loss_s1: step index must be >= 1");
  if (t == 1) return parts.me;
  return parts.ce + lambda1 * parts.nc + lambda2 * parts.pcl;
}

/// Deconfounding loss: L_CE + lambda1 * L_NC' (the correlation term is
/// expected to be computed with count = t).
inline double loss_s2(const LossTerms& parts, double lambda1, int t) {
  require(t >= 1, "loss_s2: step index must be >= 1");
  return parts.ce + lambda1 * parts.nc;
}

}  // namespace rcd
