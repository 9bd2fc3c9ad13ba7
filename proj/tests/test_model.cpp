#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "rcd/data.hpp"
#include "rcd/model.hpp"
#include "rcd/recursion.hpp"
#include "rcd/serialize.hpp"
#include "rcd/train.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace rcd;
using Catch::Approx;

TEST_CASE("mlp shape contracts") {
  Rng rng(3);
  auto mlp = MlpBackbone::make_default(12, rng);
  CHECK(mlp->input_dim() == 12);
  CHECK(mlp->feature_dim() == 16);

  const Matrix batch = testutil::random_matrix(4, 12, rng);
  const Matrix feats = mlp->extract(batch);
  CHECK(feats.rows() == 4);
  CHECK(feats.cols() == 16);

  CHECK_THROWS_AS(mlp->extract(testutil::random_matrix(4, 7, rng)), std::invalid_argument);
}

TEST_CASE("cloned extractor is frozen against source mutation") {
  Rng rng(5);
  auto mlp = MlpBackbone::make_default(6, rng);
  const Matrix batch = testutil::random_matrix(3, 6, rng);
  auto snapshot = mlp->clone();
  const Matrix before = snapshot->extract(batch);

  for (Matrix* p : mlp->parameters()) p->array() += 0.5;
  const Matrix after = snapshot->extract(batch);
  CHECK((before - after).norm() == 0.0);
  CHECK((mlp->extract(batch) - before).norm() > 0.0);

  // repeated evaluation is bit-stable
  CHECK((snapshot->extract(batch) - before).norm() == 0.0);
}

TEST_CASE("classifier head is linear with zero bias") {
  Rng rng(7);
  ClassifierHead head = ClassifierHead::init(5, 4, rng);
  CHECK(head.A.rows() == 5);
  CHECK(head.A.cols() == 4);

  const Vector x = testutil::random_matrix(4, 1, rng).col(0);
  const Vector y = testutil::random_matrix(4, 1, rng).col(0);
  const Vector lhs = head.classify(Vector(2.0 * x + 3.0 * y));
  const Vector rhs = 2.0 * head.classify(x) + 3.0 * head.classify(y);
  CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-9);

  CHECK(head.classify(Vector(Vector::Zero(4))).norm() == 0.0);  // no bias

  head.A.setZero();
  CHECK(head.classify(x).norm() == 0.0);

  CHECK_THROWS_AS(head.classify(Vector(Vector::Zero(3))), std::invalid_argument);
}

TEST_CASE("head init stays within the fan-in bound") {
  Rng rng(11);
  const ClassifierHead head = ClassifierHead::init(8, 16, rng);
  const double limit = 1.0 / std::sqrt(16.0);
  CHECK(head.A.maxCoeff() <= limit);
  CHECK(head.A.minCoeff() >= -limit);
}

TEST_CASE("sgd applies weight decay and momentum") {
  Matrix w = Matrix::Constant(1, 1, 2.0);
  Matrix g = Matrix::Constant(1, 1, 1.0);
  Sgd opt(0.1, 0.5, 0.9);
  opt.step({&w}, {g});
  const double v1 = 1.0 + 0.5 * 2.0;  // first step: velocity = grad + wd * w
  const double w1 = 2.0 - 0.1 * v1;
  CHECK(w(0, 0) == Approx(w1).epsilon(1e-12));
  opt.step({&w}, {g});
  const double v2 = 0.9 * v1 + 1.0 + 0.5 * w1;
  CHECK(w(0, 0) == Approx(w1 - 0.1 * v2).epsilon(1e-12));
}

TEST_CASE("mlp backward matches finite differences") {
  Rng rng(13);
  Model model;
  model.backbone = std::make_unique<MlpBackbone>(std::vector<int>{5, 8, 6, 4}, rng);
  model.head = ClassifierHead::init(4, 4, rng);

  const Matrix X = testutil::random_matrix(3, 5, rng);
  const std::vector<int> y = {0, 2, 1};
  std::vector<Matrix> grads;
  ce_loss_and_grad(model, X, y, &grads);
  const double err = testutil::model_grad_error(
      model, [&] { return ce_loss_and_grad(model, X, y).total; }, grads);
  CHECK(err < 1e-6);
}

TEST_CASE("conv backbone forward and backward") {
  Rng rng(17);
  ConvBackbone conv(8, 8, 1, rng, {4, 6}, 8);
  CHECK(conv.input_dim() == 64);
  CHECK(conv.feature_dim() == 8);

  const Matrix batch = testutil::random_matrix(2, 64, rng, 0.5);
  const Matrix feats = conv.extract(batch);
  CHECK(feats.rows() == 2);
  CHECK(feats.cols() == 8);
  CHECK(feats.allFinite());

  Model model;
  model.backbone = std::make_unique<ConvBackbone>(conv);
  model.head = ClassifierHead::init(3, 8, rng);
  const std::vector<int> y = {0, 2};
  std::vector<Matrix> grads;
  ce_loss_and_grad(model, batch, y, &grads);
  const double err = testutil::model_grad_error(
      model, [&] { return ce_loss_and_grad(model, batch, y).total; }, grads);
  CHECK(err < 1e-6);
}

TEST_CASE("extractor serialization round-trips bit-exactly") {
  Rng rng(19);
  auto mlp = MlpBackbone::make_default(6, rng);
  const auto dir = std::filesystem::temp_directory_path() / "rcd_test_ckpt" / "fx";
  std::filesystem::remove_all(dir.parent_path());
  save_extractor(dir, *mlp, {2, 42, "lambda1=1"});

  auto loaded = load_extractor(dir);
  CHECK(loaded->kind() == "mlp");
  const Matrix batch = testutil::random_matrix(4, 6, rng);
  CHECK((loaded->extract(batch) - mlp->extract(batch)).norm() == 0.0);

  const auto orig = std::as_const(*mlp).parameters();
  const auto back = std::as_const(*loaded).parameters();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) CHECK((*orig[i] - *back[i]).norm() == 0.0);
  std::filesystem::remove_all(dir.parent_path());
}

TEST_CASE("model serialization round-trips bit-exactly") {
  Rng rng(23);
  Model model;
  model.backbone = MlpBackbone::make_default(6, rng);
  model.head = ClassifierHead::init(7, 16, rng);
  const auto dir = std::filesystem::temp_directory_path() / "rcd_test_ckpt2" / "model";
  std::filesystem::remove_all(dir.parent_path());
  save_model(dir, model, {1, 7, "u=3"});

  const Model loaded = load_model(dir);
  const Matrix batch = testutil::random_matrix(3, 6, rng);
  CHECK((loaded.head.A - model.head.A).norm() == 0.0);
  CHECK((loaded.backbone->extract(batch) - model.backbone->extract(batch)).norm() == 0.0);
  std::filesystem::remove_all(dir.parent_path());

  CHECK_THROWS_AS(load_model("/nonexistent/rcd/path"), std::invalid_argument);
}

TEST_CASE("toy backbone fits the separable synthetic data") {
  SyntheticSpec spec;
  spec.k = 4;
  spec.m = 0;
  spec.confound_strength = 0.0;
  spec.train_size = 2000;
  spec.test_size = 200;
  spec.seed = 1;
  const auto data = generate_synthetic(spec);
  auto splits = make_open_set_splits(data, 0.1, 1);
  standardize(splits);

  HyperParams hp;
  hp.k = 4;
  hp.u = 0;
  hp.T = 1;
  hp.seed = 1;
  auto [model, report] = train_backbone_baseline(splits, hp);

  const Matrix logits = model.head.classify(model.backbone->extract(splits.train_known.X));
  std::vector<int> preds(splits.train_known.size());
  for (int i = 0; i < splits.train_known.size(); ++i)
    preds[i] = predict(logits.row(i).transpose(), hp.k,
                       -std::numeric_limits<double>::infinity());
  CHECK(accuracy(preds, splits.train_known.labels) >= 0.95);
}

TEST_CASE("u = 0 keeps every loss well-defined") {
  Rng rng(29);
  Model model;
  model.backbone = std::make_unique<MlpBackbone>(std::vector<int>{4, 8, 6}, rng);
  model.head = ClassifierHead::init(3, 6, rng);  // k = 3, u = 0

  HyperParams hp;
  hp.k = 3;
  hp.u = 0;
  const Matrix X = testutil::random_matrix(5, 4, rng);
  const std::vector<int> y = {0, 1, 2, 0, 1};

  CounterfactualPool pool;
  const auto s1 = s1_loss_and_grad(model, pool, 1, X, y, hp);
  CHECK(std::isfinite(s1.total));

  pool.add(freeze(*model.backbone, 1, 0, 0));
  const auto s2 = s2_loss_and_grad(model, pool, 1, X, y, hp);
  CHECK(std::isfinite(s2.total));
  const auto s1b = s1_loss_and_grad(model, pool, 2, X, y, hp);
  CHECK(std::isfinite(s1b.total));
}

TEST_CASE("hyper parameter validation") {
  HyperParams hp;
  hp.k = 4;
  CHECK_NOTHROW(hp.validate());
  hp.T = 0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp.T = 2;
  hp.lambda1 = -0.5;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp.lambda1 = 1.0;
  hp.k = 1;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
}

TEST_CASE("backbone factory") {
  Rng rng(31);
  auto mlp = make_backbone("mlp", 10, rng);
  CHECK(mlp->kind() == "mlp");
  auto conv = make_backbone("conv", 16 * 16, rng);
  CHECK(conv->kind() == "conv");
  CHECK(conv->input_dim() == 256);
  CHECK_THROWS_AS(make_backbone("transformer", 10, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_backbone("conv", 37, rng), std::invalid_argument);
}
