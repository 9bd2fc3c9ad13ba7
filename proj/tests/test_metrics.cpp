#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "rcd/metrics.hpp"

#include "oracles.hpp"

using namespace rcd;
using Catch::Approx;

namespace {
Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<double> random_scores(int n, Rng& rng, bool quantize) {
  std::vector<double> s(n);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : s) {
    v = dist(rng);
    if (quantize) v = std::round(v * 4.0) / 4.0;  // force ties
  }
  return s;
}
}  // namespace

TEST_CASE("score over known dimensions only") {
  CHECK(score(vec({2, 5, 1, 9}), 3) == 5.0);
  CHECK(score(vec({-1, -3}), 2) == -1.0);
  CHECK(score(vec({4.5}), 1) == 4.5);
  CHECK_THROWS_AS(score(vec({1, 2}), 3), std::invalid_argument);
}

TEST_CASE("open-set prediction rule") {
  CHECK(predict(vec({2, 5, 1}), 3, 4.0) == 1);
  CHECK(predict(vec({2, 5, 1}), 3, 6.0) == kUnknown);
  CHECK(predict(vec({2, 5, 1}), 3, 5.0) == 1);  // score == theta stays known
  CHECK(predict(vec({7, 7, 1}), 3, 0.0) == 0);  // ties break to the lowest index
  CHECK(predict(vec({2, 5, 1}), 3, -std::numeric_limits<double>::infinity()) == 1);
  CHECK(predict(vec({2, 5, 1}), 3, std::numeric_limits<double>::infinity()) == kUnknown);
}

TEST_CASE("accuracy counting") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
  CHECK(accuracy({1, 2, 3, 0}, {1, 2, 3, 1}) == 0.75);
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
}

TEST_CASE("auroc examples") {
  CHECK(auroc({0.9, 0.8}, {0.2, 0.1}) == 1.0);
  CHECK(auroc({0.9, 0.3}, {0.5, 0.1}) == 0.75);
  CHECK(auroc({0.5, 0.5}, {0.5, 0.5}) == 0.5);
  CHECK_THROWS_AS(auroc({}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.5}, {}), std::invalid_argument);
}

TEST_CASE("auroc equals pairwise oracle exactly, ties included") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const int nk = 1 + static_cast<int>(rng() % 50);
    const int nu = 1 + static_cast<int>(rng() % 50);
    const auto ks = random_scores(nk, rng, trial % 2 == 0);
    const auto us = random_scores(nu, rng, trial % 2 == 0);
    CHECK(auroc(ks, us) == oracle::auroc_pairwise(ks, us));
  }
}

TEST_CASE("auroc invariances") {
  Rng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ks = random_scores(20, rng, false);
    const auto us = random_scores(15, rng, false);
    const double base = auroc(ks, us);

    auto monotone = [](std::vector<double> v) {
      for (double& s : v) s = std::tanh(s) * 3.0 + s;  // strictly increasing
      return v;
    };
    CHECK(auroc(monotone(ks), monotone(us)) == Approx(base).epsilon(1e-12));
    CHECK(auroc(ks, us) + auroc(us, ks) == Approx(1.0).epsilon(1e-12));
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
  }
}

TEST_CASE("oscr examples") {
  CHECK(oscr({{0.9, true}, {0.6, false}}, {0.7}) == Approx(0.5).epsilon(1e-12));
  CHECK(oscr({{0.9, true}, {0.8, true}}, {0.2, 0.1}) == Approx(1.0).epsilon(1e-12));
  CHECK(oscr({{0.9, false}, {0.8, false}}, {0.2, 0.7}) == Approx(0.0).margin(1e-12));
  CHECK_THROWS_AS(oscr({}, {0.5}), std::invalid_argument);
}

TEST_CASE("oscr equals dense sweep oracle and respects the accuracy bound") {
  Rng rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const int nk = 1 + static_cast<int>(rng() % 50);
    const int nu = 1 + static_cast<int>(rng() % 50);
    const auto ks = random_scores(nk, rng, trial % 2 == 0);
    const auto us = random_scores(nu, rng, trial % 2 == 0);
    std::vector<KnownRecord> recs(nk);
    std::vector<std::pair<double, bool>> recs_oracle(nk);
    int correct = 0;
    for (int i = 0; i < nk; ++i) {
      const bool ok = rng() % 3 != 0;
      recs[i] = {ks[i], ok};
      recs_oracle[i] = {ks[i], ok};
      correct += ok ? 1 : 0;
    }
    const double v = oscr(recs, us);
    CHECK(v == Approx(oracle::oscr_sweep(recs_oracle, us)).margin(1e-9));
    CHECK(v <= static_cast<double>(correct) / nk + 1e-12);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("threshold calibration") {
  CHECK(calibrate_threshold({0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05}) ==
        Approx(0.1));
  CHECK(calibrate_threshold({0.42}) == Approx(0.42));
  CHECK(calibrate_threshold({0.7, 0.7, 0.7}) == Approx(0.7));
  CHECK_THROWS_AS(calibrate_threshold({}), std::invalid_argument);

  // at least 90% of scores stay at or above the threshold
  Rng rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_scores(1 + static_cast<int>(rng() % 100), rng, trial % 2 == 0);
    const double theta = calibrate_threshold(s);
    int kept = 0;
    for (double v : s)
      if (v >= theta) ++kept;
    CHECK(kept >= static_cast<int>(std::ceil(0.9 * s.size())));
  }
}

TEST_CASE("macro f1") {
  CHECK(macro_f1({0, 1, kUnknown}, {0, 1, kUnknown}, 2) == Approx(1.0));
  CHECK(macro_f1({0, kUnknown, kUnknown, kUnknown}, {0, 0, kUnknown, kUnknown}, 1) ==
        Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-9));
  CHECK(macro_f1({kUnknown, kUnknown}, {0, 1}, 2) == Approx(0.0).margin(1e-12));
  CHECK_THROWS_AS(macro_f1({0}, {0, 1}, 2), std::invalid_argument);
}

TEST_CASE("metrics stay in range on fuzzed inputs") {
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 80);
    const int k = 2 + static_cast<int>(rng() % 5);
    std::vector<int> preds(n), labels(n);
    std::uniform_int_distribution<int> cls(-1, k - 1);
    for (int i = 0; i < n; ++i) {
      preds[i] = cls(rng);
      labels[i] = cls(rng);
    }
    const double f1 = macro_f1(preds, labels, k);
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);

    std::vector<int> cpred(n), clab(n);
    std::uniform_int_distribution<int> kc(0, k - 1);
    for (int i = 0; i < n; ++i) {
      cpred[i] = kc(rng);
      clab[i] = kc(rng);
    }
    const double acc = accuracy(cpred, clab);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}
