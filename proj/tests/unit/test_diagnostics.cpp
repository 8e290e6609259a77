#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/diagnostics.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace conformal_triage;

namespace {

std::vector<double> one_to_ten() {
  std::vector<double> v;
  for (int i = 1; i <= 10; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("calibration curve bins by confidence") {
  const std::vector<ConfidencePoint> points{{0.05, false}, {0.1, true}, {0.15, true},
                                            {0.95, true},  {1.0, true}, {0.9, false}};
  const auto curve = calibration_curve(points, 10);
  REQUIRE(curve.bins.size() == 10);
  CHECK(curve.bins[0].count == 1);
  CHECK(curve.bins[1].count == 2);
  CHECK(curve.bins[9].count == 3);
  CHECK(curve.bins[1].accuracy == 1.0);
  CHECK(curve.bins[1].mean_confidence == doctest::Approx(0.125));
  CHECK(curve.bins[9].accuracy == doctest::Approx(2.0 / 3.0));
  const double expected = (0.05 + 0.875 + std::abs(2.0 / 3.0 - 0.95)) / 3.0;
  CHECK(curve.mae == doctest::Approx(expected));
  const double weighted = (1 * 0.05 + 2 * 0.875 + 3 * std::abs(2.0 / 3.0 - 0.95)) / 6.0;
  CHECK(calibration_curve(points, 10, BinWeighting::count).mae == doctest::Approx(weighted));
  CHECK_THROWS_AS(calibration_curve(points, 0), ConfigError);
}

TEST_CASE("bin boundaries are half-open at exact multiples") {
  for (int b = 1; b < 10; ++b) {
    const std::vector<ConfidencePoint> points{{b / 10.0, true}};
    const auto curve = calibration_curve(points, 10);
    CHECK(curve.bins[static_cast<std::size_t>(b)].count == 1);
  }
}

TEST_CASE("confidence points use the top class of each horizon") {
  const auto ds = fixture::tiny_dataset();
  const auto points = confidence_points(ds, Split::test);
  REQUIRE(points.size() == 5);
  CHECK(points[0].confidence == 0.7);
  CHECK(points[0].correct);
  CHECK_FALSE(points[1].correct);
  CHECK(points[3].confidence == 0.5);
  CHECK_FALSE(points[3].correct);
}

TEST_CASE("overconfidence is visible pointwise and corrected by conformal sets") {
  SyntheticConfig gen;
  gen.n_profiles = 800;
  gen.num_classes = 20;
  gen.mcd_runs = 0;
  gen.miscalibration_temperature = 0.5;
  gen.split_ratios = {0.0, 0.0, 0.5, 0.5};
  gen.seed = 10;
  const auto ds = generate_synthetic(gen);
  const double reliability = calibration_curve(confidence_points(ds, Split::test)).mae;
  CHECK(reliability > 0.05);
  std::vector<ProbabilityRow> rows;
  std::vector<int> labels;
  for (std::size_t i : ds.indices(Split::test)) {
    const auto& s = ds.samples[i];
    const auto& p = ds.predictions.at(s.id);
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      rows.push_back(p.softmax[t]);
      labels.push_back(s.true_labels[t]);
    }
  }
  const auto calib = classification_scores(ds, Split::calib);
  const auto targets = default_coverage_targets();
  CHECK(targets.size() == 10);
  CHECK(targets.front() == 0.5);
  CHECK(targets.back() == 0.95);
  const auto curve = coverage_curve(calib, rows, labels, targets);
  CHECK(curve.mae < reliability);
  for (const auto& level : curve.levels) CHECK(std::abs(level.coverage - level.target) < 0.05);
}

TEST_CASE("unreachable coverage targets fall back to full sets") {
  std::vector<double> calib(100);
  std::iota(calib.begin(), calib.end(), 0.0);
  for (auto& s : calib) s /= 100.0;
  const std::vector<ProbabilityRow> rows{{0.9, 0.1}, {0.2, 0.8}};
  const std::vector<int> labels{2, 1};
  const std::vector<double> targets{0.999};
  const auto curve = coverage_curve(calib, rows, labels, targets);
  CHECK(curve.levels[0].q == kUnboundedQuantile);
  CHECK(curve.levels[0].coverage == 1.0);
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(coverage_curve(calib, rows, labels, bad), ConfigError);
  const std::vector<double> none;
  CHECK_THROWS_AS(coverage_curve(none, rows, labels, targets), EmptyScores);
}

TEST_CASE("regression coverage curve recalibrates per target") {
  std::vector<DepthUnit> units;
  std::vector<double> calib;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int i = 0; i < 3000; ++i) {
    const double truth = 0.5;
    const double pred = truth + noise(rng);
    if (i < 1500) {
      calib.push_back(std::abs(pred - truth) / 0.05);
    } else {
      units.push_back({"p", 0, pred, truth, 0.05});
    }
  }
  const auto curve = coverage_curve(calib, units, default_coverage_targets());
  CHECK(curve.mae < 0.03);
  for (std::size_t i = 1; i < curve.levels.size(); ++i) CHECK(curve.levels[i].q >= curve.levels[i - 1].q);
}

TEST_CASE("cumulative distribution of simple values") {
  const auto cdf = cumulative_distribution(one_to_ten());
  CHECK(cdf.at(5.0) == 0.5);
  CHECK(cdf.at(0.5) == 0.0);
  CHECK(cdf.at(10.0) == 1.0);
  CHECK(cdf.at(5.5) == 0.5);
  const std::vector<double> single{3.0};
  const auto step = cumulative_distribution(single);
  CHECK(step.at(2.999) == 0.0);
  CHECK(step.at(3.0) == 1.0);
  const std::vector<double> none;
  CHECK_THROWS_AS(cumulative_distribution(none), EmptyScores);
}

TEST_CASE("cumulative distribution matches the counting oracle") {
  std::mt19937_64 rng(6);
  std::vector<double> v(300);
  for (auto& x : v) x = static_cast<double>(rng() % 40);
  const auto cdf = cumulative_distribution(v);
  for (double x = -1.0; x <= 41.0; x += 0.5) CHECK(cdf.at(x) == doctest::Approx(oracle::ecdf(v, x)));
}

TEST_CASE("KS distance is symmetric and small for exchangeable samples") {
  const auto a = cumulative_distribution(one_to_ten());
  std::vector<double> shifted = one_to_ten();
  for (auto& x : shifted) x += 5.0;
  const auto b = cumulative_distribution(shifted);
  CHECK(ks_distance(a, b) == doctest::Approx(0.5));
  CHECK(ks_distance(a, b) == ks_distance(b, a));
  CHECK(ks_distance(a, a) == 0.0);
  std::mt19937_64 rng(9);
  std::exponential_distribution<double> e(2.0);
  std::vector<double> x(2000), y(2000);
  for (auto& v : x) v = e(rng);
  for (auto& v : y) v = e(rng);
  CHECK(ks_distance(cumulative_distribution(x), cumulative_distribution(y)) < 0.05);
}

TEST_CASE("threshold inference on a simple multiset") {
  const auto v = one_to_ten();
  const auto r = infer_threshold(v, 0.3);
  CHECK(r.threshold == 8.0);
  CHECK(r.realized_fraction == doctest::Approx(0.3));
  CHECK(r.deferred == 3);
  CHECK(infer_threshold(v, 1.0).threshold == 1.0);
  CHECK(infer_threshold(v, 1.0).deferred == 10);
  const auto tiny = infer_threshold(v, 0.05);
  CHECK(tiny.threshold > 10.0);
  CHECK(tiny.deferred == 0);
  CHECK_THROWS_AS(infer_threshold(v, 0.0), ConfigError);
  CHECK_THROWS_AS(infer_threshold(v, 1.5), ConfigError);
  const std::vector<double> none;
  CHECK_THROWS_AS(infer_threshold(none, 0.1), EmptyScores);
}

TEST_CASE("threshold inference matches the brute-force oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> u(1 + rng() % 80);
    for (auto& x : u) x = static_cast<double>(rng() % 12);
    for (double budget : {0.05, 0.1, 0.25, 0.5}) {
      const auto got = infer_threshold(u, budget);
      const auto want = oracle::threshold(u, budget);
      CHECK(got.threshold == want.theta);
      CHECK(got.deferred == want.deferred);
      CHECK(got.realized_fraction <= budget);
      CHECK(defer(u, got.threshold).size() == got.deferred);
    }
  }
}

TEST_CASE("defer selects values at or above the threshold") {
  const std::vector<double> u{0.2, 0.9, 0.5, 0.9};
  CHECK(defer(u, 0.5) == std::vector<std::size_t>{1, 2, 3});
  CHECK(defer(u, 0.95).empty());
}

TEST_CASE("rank correlations") {
  const auto v = one_to_ten();
  auto r = v;
  std::reverse(r.begin(), r.end());
  CHECK(spearman_rank_correlation(v, v) == doctest::Approx(1.0));
  CHECK(spearman_rank_correlation(v, r) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 2, 2, 3}, other{4, 1, 3, 3};
  CHECK(spearman_rank_correlation(ties, other) == doctest::Approx(oracle::spearman(ties, other)));
  CHECK(average_ranks(ties) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
  const std::vector<double> flat{2, 2, 2, 2};
  CHECK(std::isnan(spearman_rank_correlation(flat, ties)));
  const std::vector<double> one{1.0};
  CHECK_THROWS(pearson_correlation(one, one));
  CHECK_THROWS_AS(spearman_rank_correlation(v, one), DimensionMismatch);
}

TEST_CASE("spearman matches the quadratic oracle on random data") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(2 + rng() % 40), b(a.size());
    for (auto& x : a) x = static_cast<double>(rng() % 7);
    for (auto& x : b) x = static_cast<double>(rng() % 7);
    const double want = oracle::spearman(a, b);
    const double got = spearman_rank_correlation(a, b);
    if (std::isnan(want)) {
      CHECK(std::isnan(got));
    } else {
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("diagnostic tables have stable headers") {
  const std::vector<ConfidencePoint> points{{0.95, true}};
  const auto cal_csv = calibration_curve_csv(calibration_curve(points, 2));
  CHECK(cal_csv == "bin_lower,bin_upper,mean_confidence,accuracy,count\n0,0.5,,,0\n0.5,1,0.95,1,1\n");
  CoverageCurve cov;
  cov.levels.push_back({0.9, kUnboundedQuantile, 1.0});
  CHECK(coverage_curve_csv(cov) == "target,q,coverage\n0.9,inf,1\n");
  const std::vector<double> v{1.0, 2.0};
  CHECK(cdf_csv({{"calib", cumulative_distribution(v)}}) ==
        "split,value,cumulative_fraction\ncalib,1,0.5\ncalib,2,1\n");
  CHECK(thresholds_csv({{"set_size", infer_threshold(v, 0.5)}}) ==
        "uncertainty,budget,threshold,realized_fraction,deferred\nset_size,0.5,2,0.5,1\n");
}
