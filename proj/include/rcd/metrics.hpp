#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rcd/core.hpp"

// Closed-set and open-set evaluation. Scores follow the max-known-logit
// rule; a sample is rejected as unknown when its score falls below the
// threshold. All metrics are pure functions.

namespace rcd {

/// Per-sample record produced by open-set inference.
struct ScoredPrediction {
  double score = 0.0;               ///< max logit over the known dimensions
  int predicted_known_class = 0;    ///< argmax over the known dimensions
  bool is_known_ground_truth = false;
  int ground_truth_class = kUnknown;
};

/// Open-set score: the maximum logit over the first k (known) dimensions.
/// Expanded dimensions never contribute.
inline double score(const Vector& causal_logits, int k) {
  require(k >= 1 && causal_logits.size() >= k, "score: k exceeds logit length");
  return causal_logits.head(k).maxCoeff();
}

/// Open-set prediction: the known argmax when score >= theta, else kUnknown.
/// Ties break toward the lowest index.
inline int predict(const Vector& causal_logits, int k, double theta) {
  require(k >= 1 && causal_logits.size() >= k, "predict: k exceeds logit length");
  int arg = 0;
  for (int i = 1; i < k; ++i)
    if (causal_logits[i] > causal_logits[arg]) arg = i;
  return causal_logits[arg] >= theta ? arg : kUnknown;
}

/// Closed-set Top-1 accuracy.
inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  require(!preds.empty() && preds.size() == labels.size(), "accuracy: empty or mismatched input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// AUROC between known and unknown score populations, computed as the
/// Mann-Whitney rank statistic. Ties count one half, so the result equals
/// the pairwise probability P(known > unknown) + 0.5 * P(tie) exactly.
inline double auroc(const std::vector<double>& known_scores,
                    const std::vector<double>& unknown_scores) {
  require(!known_scores.empty() && !unknown_scores.empty(), "auroc: empty score list");
  struct Entry {
    double s;
    bool known;
  };
  std::vector<Entry> all;
  all.reserve(known_scores.size() + unknown_scores.size());
  for (double s : known_scores) all.push_back({s, true});
  for (double s : unknown_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.s < b.s; });

  // Sum of midranks of the known population.
  double known_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].s == all[i].s) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (all[t].known) known_rank_sum += midrank;
    i = j;
  }
  const double nk = static_cast<double>(known_scores.size());
  const double nu = static_cast<double>(unknown_scores.size());
  return (known_rank_sum - nk * (nk + 1.0) / 2.0) / (nk * nu);
}

/// One known-class test sample: its open-set score and whether the
/// closed-set prediction was correct.
struct KnownRecord {
  double score = 0.0;
  bool correct = false;
};

/// Open-Set Classification Rate: area under CCR vs FPR, swept over every
/// distinct score with the strictly-greater convention and integrated by
/// trapezoids. CCR(th) counts known samples that are correct with score >
/// th; FPR(th) counts unknown samples with score > th.
inline double oscr(const std::vector<KnownRecord>& known_records,
                   const std::vector<double>& unknown_scores) {
  require(!known_records.empty() && !unknown_scores.empty(), "oscr: empty input");

  std::vector<double> thresholds;
  thresholds.reserve(known_records.size() + unknown_scores.size());
  for (const auto& r : known_records) thresholds.push_back(r.score);
  for (double s : unknown_scores) thresholds.push_back(s);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double nk = static_cast<double>(known_records.size());
  const double nu = static_cast<double>(unknown_scores.size());
  auto point_at = [&](double th) {
    double ccr = 0.0, fpr = 0.0;
    for (const auto& r : known_records)
      if (r.correct && r.score > th) ccr += 1.0;
    for (double s : unknown_scores)
      if (s > th) fpr += 1.0;
    return std::pair<double, double>{fpr / nu, ccr / nk};
  };

  // Sweep thresholds from high to low; FPR and CCR grow monotonically.
  // The highest threshold pins the curve at FPR = 0, the -inf end at FPR = 1.
  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(0.0, 0.0);
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) pts.push_back(point_at(*it));
  pts.push_back(point_at(-std::numeric_limits<double>::infinity()));
  pts.emplace_back(1.0, pts.back().second);

  double area = 0.0;
  for (std::size_t p = 1; p < pts.size(); ++p)
    area += 0.5 * (pts[p].first - pts[p - 1].first) * (pts[p].second + pts[p - 1].second);
  return area;
}

/// Threshold under which 90% of validation known-class scores stay
/// accepted: the ceil(0.9 n)-th largest score.
inline double calibrate_threshold(std::vector<double> validation_known_scores) {
  require(!validation_known_scores.empty(), "calibrate_threshold: empty score list");
  std::sort(validation_known_scores.begin(), validation_known_scores.end(),
            std::greater<double>());
  const std::size_t n = validation_known_scores.size();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.9 * static_cast<double>(n)));  // 1-based index of the cut
  return validation_known_scores[std::max<std::size_t>(rank, 1) - 1];
}

/// Macro-averaged F1 over the k known classes plus the unknown class.
/// Classes absent from both predictions and labels contribute F1 = 0.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
  require(preds.size() == labels.size(), "macro_f1: length mismatch");
  require(k >= 1, "macro_f1: k must be >= 1");
  double f1_sum = 0.0;
  for (int c = -1; c < k; ++c) {  // c == -1 is the unknown class
    const int cls = (c < 0) ? kUnknown : c;
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == cls, l = labels[i] == cls;
      if (p && l) tp += 1.0;
      else if (p) fp += 1.0;
      else if (l) fn += 1.0;
    }
    const double denom = 2.0 * tp + fp + fn;
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return f1_sum / static_cast<double>(k + 1);
}

}  // namespace rcd
