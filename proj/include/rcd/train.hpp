#pragma once

#include <numeric>
#include <vector>

#include "rcd/causal.hpp"
#include "rcd/core.hpp"
#include "rcd/losses.hpp"
#include "rcd/model.hpp"

// Assembles the step losses through a backbone + head and trains one
// phase with minibatch SGD. Gradients flow only through the model under
// training; pooled counterfactual features are constants.

namespace rcd {

/// A loss value with its components, plus optional parameter gradients
/// aligned with trainable_parameters(): backbone tensors then the head.
struct LossBreakdown {
  double total = 0.0;
  LossTerms terms;
};

inline std::vector<Matrix*> trainable_parameters(Model& model) {
  auto params = model.backbone->parameters();
  params.push_back(&model.head.A);
  return params;
}

namespace detail {
inline void finish_grads(const Model& model, const FeatureExtractor::Tape& tape,
                         const Matrix& d_logits, const Matrix& causal_feats,
                         const Matrix& d_feat_extra, std::vector<Matrix>* grads) {
  if (!grads) return;
  const Matrix d_feat = d_logits * model.head.A + d_feat_extra;
  model.backbone->backward(tape, d_feat, *grads);
  grads->push_back(d_logits.transpose() * causal_feats);  // head gradient
}
}  // namespace detail

/// L_S1 with gradients: the maximum entropy loss at t = 1; at t > 1 the
/// causal-effect, negative-correlation (count = t-1) and potential-
/// confounder terms on causal features built from the existing pool.
inline LossBreakdown s1_loss_and_grad(const Model& model, const CounterfactualPool& pool,
                                      int t, const Matrix& X, const std::vector<int>& labels,
                                      const HyperParams& hp,
                                      std::vector<Matrix>* grads = nullptr) {
  require(t >= 1, "s1_loss_and_grad: step index must be >= 1");
  require(pool.size() >= t - 1, "s1_loss_and_grad: pool too small for step");
  FeatureExtractor::Tape tape;
  const Matrix feats = model.backbone->forward(X, tape);
  LossBreakdown out;

  if (t == 1) {
    const Matrix logits = model.head.classify(feats);
    out.terms.me = max_entropy_loss(softmax_rows(logits));
    out.total = loss_s1(t, out.terms, hp.lambda1, hp.lambda2);
    detail::finish_grads(model, tape, max_entropy_grad_logits(logits), feats,
                         Matrix::Zero(feats.rows(), feats.cols()), grads);
    return out;
  }

  const auto cf = pool.counterfactual_features(X, t - 1);
  const Matrix causal = causal_feature(feats, cf);
  const Matrix logits = model.head.classify(causal);
  out.terms.ce = causal_effect_loss(softmax_rows(logits), labels);
  out.terms.nc = negative_correlation_loss(feats, cf, t - 1);
  out.terms.pcl = pcl_loss(logits, labels, hp.k, hp.u);
  out.total = loss_s1(t, out.terms, hp.lambda1, hp.lambda2);
  if (grads) {
    const Matrix d_logits = causal_effect_grad_logits(logits, labels) +
                            hp.lambda2 * pcl_grad_logits(logits, labels, hp.k, hp.u);
    const Matrix d_feat_nc = hp.lambda1 * negative_correlation_grad_x(feats, cf, t - 1);
    detail::finish_grads(model, tape, d_logits, causal, d_feat_nc, grads);
  }
  return out;
}

/// L_S2 with gradients: causal-effect plus negative correlation over the
/// full pool (count = t).
inline LossBreakdown s2_loss_and_grad(const Model& model, const CounterfactualPool& pool,
                                      int t, const Matrix& X, const std::vector<int>& labels,
                                      const HyperParams& hp,
                                      std::vector<Matrix>* grads = nullptr) {
  require(t >= 1, "s2_loss_and_grad: step index must be >= 1");
  require(pool.size() >= t, "s2_loss_and_grad: pool too small for step");
  FeatureExtractor::Tape tape;
  const Matrix feats = model.backbone->forward(X, tape);
  const auto cf = pool.counterfactual_features(X, t);
  const Matrix causal = causal_feature(feats, cf);
  const Matrix logits = model.head.classify(causal);

  LossBreakdown out;
  out.terms.ce = causal_effect_loss(softmax_rows(logits), labels);
  out.terms.nc = negative_correlation_loss(feats, cf, t);
  out.total = loss_s2(out.terms, hp.lambda1, t);
  if (grads) {
    const Matrix d_logits = causal_effect_grad_logits(logits, labels);
    const Matrix d_feat_nc = hp.lambda1 * negative_correlation_grad_x(feats, cf, t);
    detail::finish_grads(model, tape, d_logits, causal, d_feat_nc, grads);
  }
  return out;
}

/// Plain cross-entropy on raw features; the backbone-baseline objective.
inline LossBreakdown ce_loss_and_grad(const Model& model, const Matrix& X,
                                      const std::vector<int>& labels,
                                      std::vector<Matrix>* grads = nullptr) {
  FeatureExtractor::Tape tape;
  const Matrix feats = model.backbone->forward(X, tape);
  const Matrix logits = model.head.classify(feats);
  LossBreakdown out;
  out.terms.ce = causal_effect_loss(softmax_rows(logits), labels);
  out.total = out.terms.ce;
  detail::finish_grads(model, tape, causal_effect_grad_logits(logits, labels), feats,
                       Matrix::Zero(feats.rows(), feats.cols()), grads);
  return out;
}

enum class Phase { counterfactual, deconfound, baseline };

/// Minibatch SGD over one phase. Returns the mean total loss of the last
/// epoch. Throws TrainingDivergedError on a non-finite loss.
inline double train_phase(Model& model, const CounterfactualPool& pool, int t, Phase phase,
                          const Matrix& X, const std::vector<int>& labels,
                          const HyperParams& hp, Rng& rng) {
  const int n = static_cast<int>(X.rows());
  require(n > 0, "train_phase: empty training set");
  const int epochs = phase == Phase::counterfactual ? hp.epochs_phase1 : hp.epochs_phase2;
  Sgd opt(hp.lr, hp.weight_decay, hp.momentum);
  const auto params = trainable_parameters(model);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += hp.batch_size) {
      const int len = std::min(hp.batch_size, n - start);
      Matrix xb(len, X.cols());
      std::vector<int> yb(len);
      for (int i = 0; i < len; ++i) {
        xb.row(i) = X.row(order[start + i]);
        yb[i] = labels[order[start + i]];
      }
      std::vector<Matrix> grads;
      LossBreakdown lb;
      switch (phase) {
        case Phase::counterfactual: lb = s1_loss_and_grad(model, pool, t, xb, yb, hp, &grads); break;
        case Phase::deconfound: lb = s2_loss_and_grad(model, pool, t, xb, yb, hp, &grads); break;
        case Phase::baseline: lb = ce_loss_and_grad(model, xb, yb, &grads); break;
      }
      if (!std::isfinite(lb.total))
        throw TrainingDivergedError("train_phase: non-finite loss at step " + std::to_string(t));
      opt.step(params, grads);
      // Catch runaway parameters here, before a later forward pass would
      // overflow; 1e100 is far beyond anything a converging run produces.
      for (const Matrix* p : params)
        if (!p->allFinite() || p->lpNorm<Eigen::Infinity>() > 1e100)
          throw TrainingDivergedError("train_phase: parameters diverged at step " +
                                      std::to_string(t));
      epoch_loss += lb.total;
      ++batches;
    }
    last_epoch_loss = epoch_loss / std::max(batches, 1);
  }
  return last_epoch_loss;
}

}  // namespace rcd
