#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "rcd/data.hpp"
#include "rcd/metrics.hpp"
#include "rcd/recursion.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace rcd;
using Catch::Approx;

namespace {
Dataset toy_corpus(int classes, int per_class, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  const int n = classes * per_class;
  ds.X.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    ds.labels.push_back(i % classes);
    ds.ids.push_back(i);
    ds.is_test.push_back(i % 4 == 0 ? 1 : 0);  // a quarter tagged as test
    for (int j = 0; j < dim; ++j) ds.X(i, j) = normal(rng);
  }
  return ds;
}

std::set<std::int64_t> id_set(const Dataset& ds) {
  return {ds.ids.begin(), ds.ids.end()};
}
}  // namespace

TEST_CASE("standard split separates knowns and unknowns") {
  const Dataset ds = toy_corpus(6, 40, 3, 7);
  SplitSpec spec;
  spec.known_class_ids = {0, 1, 2, 3};
  spec.unknown_class_ids = {4, 5};
  spec.validation_fraction = 0.1;
  spec.seed = 9;
  const auto splits = split(ds, spec);

  for (int y : splits.train_known.labels) CHECK((y >= 0 && y < 4));
  for (int y : splits.val_known.labels) CHECK((y >= 0 && y < 4));
  for (int y : splits.test_known.labels) CHECK((y >= 0 && y < 4));
  for (int y : splits.test_unknown.labels) CHECK((y == 4 || y == 5));

  // partitions are disjoint by sample id
  std::set<std::int64_t> seen;
  for (const Dataset* d :
       {&splits.train_known, &splits.val_known, &splits.test_known, &splits.test_unknown})
    for (std::int64_t id : d->ids) CHECK(seen.insert(id).second);

  CHECK(splits.k() == 4);
}

TEST_CASE("validation fraction carves the stated count") {
  Dataset ds = toy_corpus(2, 100, 3, 11);
  ds.is_test.assign(ds.is_test.size(), 0);
  // keep exactly 100 known train samples
  std::vector<int> keep;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 0) keep.push_back(i);
  Dataset known_only = ds.select(keep);
  for (auto& y : known_only.labels) y = 0;

  SplitSpec spec;
  spec.known_class_ids = {0};
  spec.validation_fraction = 0.1;
  const auto splits = split(known_only, spec);
  CHECK(splits.val_known.size() == 10);
  CHECK(splits.train_known.size() == 90);
}

TEST_CASE("split rejects overlapping class lists") {
  const Dataset ds = toy_corpus(4, 10, 3, 13);
  SplitSpec spec;
  spec.known_class_ids = {0, 1};
  spec.unknown_class_ids = {1, 2};
  CHECK_THROWS_AS(split(ds, spec), std::invalid_argument);

  spec.unknown_class_ids = {2};
  spec.known_class_ids = {0, 0};
  CHECK_THROWS_AS(split(ds, spec), std::invalid_argument);
}

TEST_CASE("cross-dataset split takes every unknown from the second corpus") {
  const Dataset known = toy_corpus(3, 30, 4, 17);
  const Dataset other = toy_corpus(5, 8, 4, 19);
  SplitSpec spec;
  spec.known_class_ids = {0, 1, 2};
  spec.validation_fraction = 0.2;
  const auto splits = split(known, other, spec);
  CHECK(splits.test_unknown.size() == other.size());
  CHECK(id_set(splits.test_unknown) == id_set(other));

  const Dataset bad = toy_corpus(2, 4, 5, 23);
  CHECK_THROWS_AS(split(known, bad, spec), std::invalid_argument);
}

TEST_CASE("synthetic generation is deterministic with exact histograms") {
  SyntheticSpec spec;
  spec.k = 4;
  spec.m = 2;
  spec.train_size = 2000;
  spec.test_size = 500;
  spec.seed = 31;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK((a.train.X - b.train.X).norm() == 0.0);
  CHECK((a.test.X - b.test.X).norm() == 0.0);
  CHECK(a.train.labels == b.train.labels);

  std::map<int, int> train_hist, test_hist;
  for (int y : a.train.labels) train_hist[y]++;
  for (int y : a.test.labels) test_hist[y]++;
  CHECK(train_hist.size() == 4);  // train holds known classes only
  for (const auto& [y, c] : train_hist) CHECK(c == 500);
  CHECK(test_hist.size() == 6);
  int total = 0;
  for (const auto& [y, c] : test_hist) {
    CHECK(c >= 500 / 6);
    total += c;
  }
  CHECK(total == 500);

  // ids unique across the three subsets
  std::set<std::int64_t> seen;
  for (const Dataset* d : {&a.train, &a.test, &a.test_confounded})
    for (std::int64_t id : d->ids) CHECK(seen.insert(id).second);
}

TEST_CASE("zero confound strength removes the train/test shift") {
  SyntheticSpec spec;
  spec.k = 3;
  spec.m = 1;
  spec.causal_dims = 4;
  spec.confound_dims = 4;
  spec.confound_strength = 0.0;
  spec.train_size = 4000;
  spec.test_size = 4000;
  spec.seed = 37;
  const auto data = generate_synthetic(spec);

  // confound block is plain noise in both phases: compare moments
  const auto confound_block = [&](const Dataset& ds) {
    return ds.X.rightCols(spec.confound_dims);
  };
  const double train_mean = confound_block(data.train).mean();
  const double test_mean = confound_block(data.test).mean();
  const double train_var = confound_block(data.train).array().square().mean();
  const double test_var = confound_block(data.test).array().square().mean();
  CHECK(std::abs(train_mean - test_mean) < 0.1);
  CHECK(std::abs(train_var - test_var) < 0.1);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.k = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec.k = 4;
  spec.causal_dims = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec.causal_dims = 5;
  spec.train_size = 3;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
}

TEST_CASE("confounded generator actually confounds a plain classifier") {
  // With correlated confound dims, the plain classifier must (a) put first
  // layer weight on them and (b) lose OSCR when they decorrelate at test.
  double oscr_shifted = 0.0, oscr_confounded = 0.0;
  const int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    SyntheticSpec spec;
    spec.k = 4;
    spec.m = 2;
    spec.causal_dims = 5;
    spec.confound_dims = 6;
    spec.separation = 5.0;
    spec.confound_strength = 3.0;
    spec.train_size = 1000;
    spec.test_size = 400;
    spec.seed = s;
    const auto data = generate_synthetic(spec);

    auto splits = make_open_set_splits(data, 0.1, s);
    // a second pair of test splits drawn with train-style confounding
    OpenSetSplits confounded = splits;
    std::vector<int> kn, un;
    for (int i = 0; i < data.test_confounded.size(); ++i)
      (data.test_confounded.labels[i] < data.k ? kn : un).push_back(i);
    confounded.test_known = data.test_confounded.select(kn);
    confounded.test_unknown = data.test_confounded.select(un);

    const Standardizer stdz = standardize(splits);
    stdz.apply_in_place(confounded);

    HyperParams hp;
    hp.k = 4;
    hp.u = 0;
    hp.T = 1;
    hp.seed = s;
    auto [model, shifted_report] = train_backbone_baseline(splits, hp);
    oscr_shifted += shifted_report.oscr;
    oscr_confounded += evaluate_model(model, CounterfactualPool(), confounded, hp).oscr;

    // first-layer weight mass on the confound columns is nonzero
    const Matrix& w1 = *std::as_const(*model.backbone).parameters().front();
    const double confound_mass = w1.rightCols(spec.confound_dims).norm();
    CHECK(confound_mass > 0.05);
  }
  CHECK(oscr_shifted / seeds < oscr_confounded / seeds);
}

TEST_CASE("dataset csv round-trip") {
  const Dataset ds = toy_corpus(3, 5, 4, 41);
  const auto dir = std::filesystem::temp_directory_path() / "rcd_test_data";
  std::filesystem::create_directories(dir);
  save_dataset_csv(dir / "samples.csv", ds);
  const Dataset back = load_dataset_csv(dir / "samples.csv");
  CHECK(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  CHECK(back.ids == ds.ids);
  CHECK(back.is_test == ds.is_test);
  CHECK((back.X - ds.X).norm() == 0.0);  // %.17g preserves doubles exactly
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset binary round-trip") {
  const Dataset ds = toy_corpus(2, 6, 3, 43);
  const auto dir = std::filesystem::temp_directory_path() / "rcd_test_data_bin";
  std::filesystem::remove_all(dir);
  save_dataset_binary(dir, ds);
  const Dataset back = load_dataset_binary(dir);
  CHECK(back.labels == ds.labels);
  CHECK(back.ids == ds.ids);
  CHECK((back.X - ds.X).norm() == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("image folder ingestion") {
  const auto root = std::filesystem::temp_directory_path() / "rcd_test_imgs";
  std::filesystem::remove_all(root);
  // two classes, 3x2 grayscale PGMs (one binary, one ascii)
  std::filesystem::create_directories(root / "cats");
  std::filesystem::create_directories(root / "dogs");
  {
    std::ofstream os(root / "cats" / "a.pgm", std::ios::binary);
    os << "P5\n3 2\n255\n";
    const unsigned char px[6] = {0, 128, 255, 10, 20, 30};
    os.write(reinterpret_cast<const char*>(px), 6);
  }
  {
    std::ofstream os(root / "dogs" / "b.pgm");
    os << "P2\n# comment\n3 2\n255\n0 50 100 150 200 250\n";
  }
  const Dataset ds = load_image_folder(root, 0.0, 1);
  REQUIRE(ds.size() == 2);
  CHECK(ds.dim() == 6);
  CHECK(ds.labels == std::vector<int>{0, 1});  // sorted subdirectory order
  CHECK(ds.X(0, 1) == Approx(128.0 / 255.0));
  CHECK(ds.X(1, 5) == Approx(250.0 / 255.0));
  std::filesystem::remove_all(root);
}

TEST_CASE("standardizer round-trip and application") {
  Rng rng(47);
  const Matrix X = testutil::random_matrix(50, 4, rng, 3.0);
  const Standardizer s = Standardizer::fit(X);
  const Matrix Z = s.apply(X);
  CHECK(Z.colwise().mean().norm() < 1e-9);
  CHECK((Z.array().square().colwise().mean().sqrt() - 1.0).matrix().norm() < 1e-9);

  const auto file = std::filesystem::temp_directory_path() / "rcd_stdz.txt";
  s.save(file);
  const Standardizer back = Standardizer::load(file);
  CHECK((back.mean - s.mean).norm() == 0.0);
  CHECK((back.scale - s.scale).norm() == 0.0);
  std::filesystem::remove(file);
}
