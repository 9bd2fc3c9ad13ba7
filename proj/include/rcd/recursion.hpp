#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rcd/causal.hpp"
#include "rcd/core.hpp"
#include "rcd/data.hpp"
#include "rcd/losses.hpp"
#include "rcd/metrics.hpp"
#include "rcd/model.hpp"
#include "rcd/serialize.hpp"
#include "rcd/train.hpp"

// The two-phase recursion controller. Each step first trains a clone of
// the main model into a counterfactual feature producer and freezes it
// into the pool, then trains the main model on causal features against
// the updated pool.

namespace rcd {

/// Logits of the causal features under a model and pool.
inline Matrix model_causal_logits(const Model& model, const CounterfactualPool& pool,
                                  const Matrix& X) {
  const Matrix feats = model.backbone->extract(X);
  return model.head.classify(causal_feature(feats, pool.counterfactual_features(X)));
}

struct EvalReport {
  double acc = std::numeric_limits<double>::quiet_NaN();
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double oscr = std::numeric_limits<double>::quiet_NaN();
  double macro_f1 = std::numeric_limits<double>::quiet_NaN();
  double theta = std::numeric_limits<double>::quiet_NaN();
  bool open_set_valid = false;  // false when the unknown test set is empty
};

/// Full evaluation of a model + pool on the four splits: closed-set ACC,
/// AUROC/OSCR against the unknowns, and macro-F1 with the threshold
/// calibrated so 90% of validation knowns stay accepted (unless hp.theta
/// overrides it).
inline EvalReport evaluate_model(const Model& model, const CounterfactualPool& pool,
                                 const OpenSetSplits& data, const HyperParams& hp) {
  require(data.test_known.size() > 0, "evaluate_model: empty known test split");
  const int k = hp.k;
  EvalReport report;

  const Matrix known_logits = model_causal_logits(model, pool, data.test_known.X);
  std::vector<int> closed_preds(data.test_known.size());
  std::vector<double> known_scores(data.test_known.size());
  std::vector<KnownRecord> known_records(data.test_known.size());
  for (int i = 0; i < data.test_known.size(); ++i) {
    const Vector row = known_logits.row(i).transpose();
    closed_preds[i] = predict(row, k, -std::numeric_limits<double>::infinity());
    known_scores[i] = score(row, k);
    known_records[i] = {known_scores[i], closed_preds[i] == data.test_known.labels[i]};
  }
  report.acc = accuracy(closed_preds, data.test_known.labels);

  if (std::isfinite(hp.theta)) {
    report.theta = hp.theta;
  } else {
    const Matrix val_logits = model_causal_logits(model, pool, data.val_known.X);
    std::vector<double> val_scores(data.val_known.size());
    for (int i = 0; i < data.val_known.size(); ++i)
      val_scores[i] = score(val_logits.row(i).transpose(), k);
    report.theta = calibrate_threshold(val_scores);
  }

  std::vector<int> open_preds = closed_preds;
  for (int i = 0; i < data.test_known.size(); ++i)
    if (known_scores[i] < report.theta) open_preds[i] = kUnknown;
  std::vector<int> open_labels = data.test_known.labels;

  if (data.test_unknown.size() > 0) {
    const Matrix unknown_logits = model_causal_logits(model, pool, data.test_unknown.X);
    std::vector<double> unknown_scores(data.test_unknown.size());
    for (int i = 0; i < data.test_unknown.size(); ++i) {
      const Vector row = unknown_logits.row(i).transpose();
      unknown_scores[i] = score(row, k);
      open_preds.push_back(predict(row, k, report.theta));
      open_labels.push_back(kUnknown);
    }
    report.auroc = auroc(known_scores, unknown_scores);
    report.oscr = oscr(known_records, unknown_scores);
    report.open_set_valid = true;
  }
  report.macro_f1 = macro_f1(open_preds, open_labels, k);
  return report;
}

struct StepResult {
  int step = 0;
  std::string checkpoint_ref;  // step directory when the run persists checkpoints
  EvalReport eval;
  int pool_size = 0;
  double phase1_final_loss = 0.0;
  double phase2_final_loss = 0.0;
  double phase1_mean_entropy = 0.0;  // prediction entropy of the frozen counterfactual model
  double nc_before_phase2 = 0.0;     // Eq. 8 correlation on the train set, before/after
  double nc_after_phase2 = 0.0;      //   the deconfounding phase
};

namespace detail {
inline std::string hyper_line(const HyperParams& hp) {
  std::ostringstream os;
  os << "lambda1=" << hp.lambda1 << " lambda2=" << hp.lambda2 << " u=" << hp.u
     << " T=" << hp.T << " k=" << hp.k << " lr=" << hp.lr << " weight_decay=" << hp.weight_decay
     << " epochs_phase1=" << hp.epochs_phase1 << " epochs_phase2=" << hp.epochs_phase2
     << " batch_size=" << hp.batch_size << " seed=" << hp.seed;
  return os.str();
}

inline double pool_residual_correlation(const Model& model, const CounterfactualPool& pool,
                                        const Matrix& X, int count) {
  const Matrix feats = model.backbone->extract(X);
  return negative_correlation_loss(feats, pool.counterfactual_features(X, count), count);
}
}  // namespace detail

/// One recursion step: learn counterfactual features on a clone, freeze
/// them into the pool, deconfound the main model, evaluate. The pool must
/// hold exactly t-1 snapshots on entry and holds t on exit.
inline StepResult run_step(int t, Model& main, CounterfactualPool& pool,
                           const OpenSetSplits& data, const HyperParams& hp, Rng& rng,
                           const std::filesystem::path& run_dir = {}) {
  require(t >= 1 && t <= hp.T, "run_step: step index outside 1..T");
  if (pool.size() != t - 1)
    throw InconsistentStateError("run_step: pool holds " + std::to_string(pool.size()) +
                                 " snapshots, expected " + std::to_string(t - 1));

  StepResult result;
  result.step = t;

  // Phase 1: learn counterfactual features on a clone of the main model.
  Model cf_model = main.clone();
  result.phase1_final_loss = train_phase(cf_model, pool, t, Phase::counterfactual,
                                         data.train_known.X, data.train_known.labels, hp, rng);
  {
    const Matrix feats = cf_model.backbone->extract(data.train_known.X);
    const auto cf = pool.counterfactual_features(data.train_known.X, t - 1);
    const Matrix logits = cf_model.head.classify(causal_feature(feats, cf));
    result.phase1_mean_entropy = mean_prediction_entropy(softmax_rows(logits));
  }
  pool.add(freeze(*cf_model.backbone, t, hp.seed, hp.epochs_phase1));

  // Phase 2: deconfound the main model against the updated pool.
  result.nc_before_phase2 =
      detail::pool_residual_correlation(main, pool, data.train_known.X, t);
  result.phase2_final_loss = train_phase(main, pool, t, Phase::deconfound, data.train_known.X,
                                         data.train_known.labels, hp, rng);
  result.nc_after_phase2 =
      detail::pool_residual_correlation(main, pool, data.train_known.X, t);

  result.eval = evaluate_model(main, pool, data, hp);
  result.pool_size = pool.size();

  if (!run_dir.empty()) {
    const auto step_dir = run_dir / ("step_" + std::to_string(t));
    const ManifestInfo info{t, hp.seed, detail::hyper_line(hp)};
    save_model(step_dir / "main", main, info);
    for (int i = 0; i < pool.size(); ++i) {
      const ManifestInfo pool_info{pool.at(i).snapshot_id(), pool.at(i).seed(),
                                   detail::hyper_line(hp)};
      save_extractor(step_dir / ("pool_" + std::to_string(i + 1)), pool.at(i).extractor(),
                     pool_info);
    }
    result.checkpoint_ref = step_dir.string();
  }
  return result;
}

using StepCallback =
    std::function<void(const StepResult&, const Model&, const CounterfactualPool&)>;

struct PipelineResult {
  std::vector<StepResult> steps;
  Model main;
  CounterfactualPool pool;
};

/// Runs the full recursion for t = 1..T from a fresh model. Final
/// predictions come from the last step's main model and pool.
inline PipelineResult run_pipeline(const OpenSetSplits& data, const HyperParams& hp,
                                   const std::string& backbone_kind = "mlp",
                                   const std::filesystem::path& run_dir = {},
                                   const StepCallback& on_step = {}) {
  hp.validate();
  require(data.k() == hp.k, "run_pipeline: hp.k does not match the split's known classes");
  Rng rng(hp.seed);

  PipelineResult out;
  out.main.backbone = make_backbone(backbone_kind, data.train_known.dim(), rng);
  out.main.head = ClassifierHead::init(hp.k + hp.u, out.main.backbone->feature_dim(), rng);
  if (hp.epochs_pretrain > 0) {
    // Stands in for the pretrained-backbone initialization of the full-scale
    // setup: the recursion starts from a model that already fits the data.
    HyperParams warm = hp;
    warm.epochs_phase2 = hp.epochs_pretrain;
    CounterfactualPool no_pool;
    train_phase(out.main, no_pool, 1, Phase::baseline, data.train_known.X,
                data.train_known.labels, warm, rng);
  }
  for (int t = 1; t <= hp.T; ++t) {
    out.steps.push_back(run_step(t, out.main, out.pool, data, hp, rng, run_dir));
    if (on_step) on_step(out.steps.back(), out.main, out.pool);
  }
  return out;
}

/// The plain backbone baseline: a k-way classifier (u = 0) trained with
/// cross-entropy only, on the main model's total epoch budget.
inline std::pair<Model, EvalReport> train_backbone_baseline(
    const OpenSetSplits& data, const HyperParams& hp, const std::string& backbone_kind = "mlp") {
  hp.validate();
  Rng rng(hp.seed);
  Model model;
  model.backbone = make_backbone(backbone_kind, data.train_known.dim(), rng);
  model.head = ClassifierHead::init(hp.k, model.backbone->feature_dim(), rng);
  CounterfactualPool empty_pool;
  HyperParams budget = hp;
  budget.epochs_phase2 = hp.epochs_pretrain + hp.T * hp.epochs_phase2;
  train_phase(model, empty_pool, 1, Phase::baseline, data.train_known.X,
              data.train_known.labels, budget, rng);
  HyperParams eval_hp = hp;
  eval_hp.u = 0;
  EvalReport report = evaluate_model(model, empty_pool, data, eval_hp);
  return {std::move(model), report};
}

}  // namespace rcd
