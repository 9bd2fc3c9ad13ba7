#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "rcd/core.hpp"
#include "rcd/model.hpp"

namespace rcd {

/// Causal feature: the raw feature with every pooled counterfactual
/// feature subtracted, x - x_1 - ... - x_t. An empty list returns x.
inline Vector causal_feature(const Vector& x, const std::vector<Vector>& counterfactuals) {
  Vector out = x;
  for (const Vector& cf : counterfactuals) {
    require(cf.size() == x.size(), "causal_feature: length mismatch");
    out -= cf;
  }
  return out;
}

/// Batch form: one row per sample, one counterfactual batch per pool entry.
inline Matrix causal_feature(const Matrix& x, const std::vector<Matrix>& counterfactuals) {
  Matrix out = x;
  for (const Matrix& cf : counterfactuals) {
    require(cf.rows() == x.rows() && cf.cols() == x.cols(), "causal_feature: shape mismatch");
    out -= cf;
  }
  return out;
}

/// A frozen feature extractor captured at one recursion step, plus
/// creation metadata. Immutable after construction: the extractor is a
/// deep copy and only const access is exposed.
class CounterfactualSnapshot {
 public:
  CounterfactualSnapshot(int snapshot_id, std::unique_ptr<FeatureExtractor> extractor,
                         std::uint64_t seed, int trained_epochs)
      : snapshot_id_(snapshot_id), seed_(seed), trained_epochs_(trained_epochs),
        extractor_(std::move(extractor)) {
    require(extractor_ != nullptr, "CounterfactualSnapshot: null extractor");
  }

  CounterfactualSnapshot(const CounterfactualSnapshot& other)
      : snapshot_id_(other.snapshot_id_), seed_(other.seed_),
        trained_epochs_(other.trained_epochs_), extractor_(other.extractor_->clone()) {}
  CounterfactualSnapshot& operator=(const CounterfactualSnapshot& other) {
    if (this != &other) *this = CounterfactualSnapshot(other);
    return *this;
  }
  CounterfactualSnapshot(CounterfactualSnapshot&&) = default;
  CounterfactualSnapshot& operator=(CounterfactualSnapshot&&) = default;

  int snapshot_id() const { return snapshot_id_; }
  std::uint64_t seed() const { return seed_; }
  int trained_epochs() const { return trained_epochs_; }
  const FeatureExtractor& extractor() const { return *extractor_; }

  Matrix features(const Matrix& inputs) const { return extractor_->extract(inputs); }

 private:
  int snapshot_id_;
  std::uint64_t seed_;
  int trained_epochs_;
  std::unique_ptr<FeatureExtractor> extractor_;
};

/// Deep-copies the extractor into an immutable snapshot.
inline CounterfactualSnapshot freeze(const FeatureExtractor& extractor, int snapshot_id,
                                     std::uint64_t seed, int trained_epochs) {
  return CounterfactualSnapshot(snapshot_id, extractor.clone(), seed, trained_epochs);
}

/// Ordered collection of frozen snapshots; the subtraction order of the
/// causal feature is the append order. Append-only within a run.
class CounterfactualPool {
 public:
  int size() const { return static_cast<int>(snapshots_.size()); }
  bool empty() const { return snapshots_.empty(); }

  void add(CounterfactualSnapshot snapshot) { snapshots_.push_back(std::move(snapshot)); }

  const CounterfactualSnapshot& at(int i) const { return snapshots_.at(i); }

  /// One feature batch per snapshot (pool order); empty pool yields an
  /// empty list. `count` restricts to the first entries.
  std::vector<Matrix> counterfactual_features(const Matrix& inputs) const {
    return counterfactual_features(inputs, size());
  }

  std::vector<Matrix> counterfactual_features(const Matrix& inputs, int count) const {
    require(count >= 0 && count <= size(),
            "CounterfactualPool: count exceeds available snapshots");
    std::vector<Matrix> feats;
    feats.reserve(count);
    for (int i = 0; i < count; ++i) feats.push_back(snapshots_[i].features(inputs));
    return feats;
  }

 private:
  std::vector<CounterfactualSnapshot> snapshots_;
};

}  // namespace rcd
