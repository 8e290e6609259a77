#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace conformal_triage;

TEST_CASE("quantile of small multisets") {
  const std::vector<double> nine{0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6};
  CHECK(conformal_quantile(nine, 0.1) == 0.9);
  const std::vector<double> four{1, 2, 3, 4};
  CHECK(conformal_quantile(four, 0.5) == 3.0);
  const std::vector<double> three{1, 2, 3};
  CHECK(conformal_quantile(three, 0.1) == kUnboundedQuantile);
  CHECK(conformal_rank(9, 0.1) == 9);
  CHECK(conformal_rank(3, 0.1) == 4);
}

TEST_CASE("quantile rejects empty scores and invalid alpha") {
  const std::vector<double> none;
  CHECK_THROWS_AS(conformal_quantile(none, 0.1), EmptyScores);
  const std::vector<double> one{1.0};
  CHECK_THROWS(conformal_quantile(one, 0.0));
  CHECK_THROWS(conformal_quantile(one, 1.0));
}

TEST_CASE("quantile matches the exact integer oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(rng() % 20) / 4.0;
    const long long m = 1 + static_cast<long long>(rng() % 99);
    CHECK(conformal_quantile(scores, m / 100.0) == oracle::quantile(scores, m, 100));
  }
}

TEST_CASE("quantile is monotone in alpha") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<double> scores(200);
  for (auto& s : scores) s = u(rng);
  double previous = kUnboundedQuantile;
  for (int m = 1; m < 100; ++m) {
    const double q = conformal_quantile(scores, m / 100.0);
    CHECK(q <= previous);
    previous = q;
  }
}

TEST_CASE("interval is clamped to the unit depth range") {
  RegressionCalibration cal{0.1, 100, 1.9168};
  const auto iv = predict_interval(0.5, 0.1, cal);
  CHECK(iv.lo == doctest::Approx(0.30832).epsilon(1e-12));
  CHECK(iv.hi == doctest::Approx(0.69168).epsilon(1e-12));
  CHECK(predict_interval(0.95, 0.1, cal).hi == 1.0);
  CHECK(predict_interval(0.05, 0.1, cal).lo == 0.0);
  cal.q = kUnboundedQuantile;
  CHECK(predict_interval(0.5, 0.1, cal) == DepthInterval{0.0, 1.0});
}

TEST_CASE("non-positive residuals are rejected") {
  std::vector<DepthUnit> units{{"p", 0, 0.5, 0.4, 0.0}};
  CHECK_THROWS_AS(regression_scores(units), NonpositiveResidual);
  units[0].residual = -1.0;
  CHECK_THROWS_AS(regression_scores(units), NonpositiveResidual);
  units[0].residual = 0.2;
  CHECK(regression_scores(units)[0] == doctest::Approx(0.5));
}

TEST_CASE("label set thresholds probabilities at 1 - q") {
  const std::vector<double> probs{0.6, 0.3, 0.05, 0.04, 0.01};
  CHECK(predict_set(probs, {0.1, 100, 0.9942}).members == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(predict_set(probs, {0.1, 100, 0.5}).members == std::vector<int>{1});
  CHECK(predict_set(probs, {0.1, 100, 0.2}).members.empty());
  CHECK(predict_set(probs, {0.1, 100, kUnboundedQuantile}).size() == 5);
}

TEST_CASE("label sets are nested in q and intervals nested in alpha") {
  std::mt19937_64 rng(5);
  std::gamma_distribution<double> g(0.5, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> row(12);
    double sum = 0.0;
    for (auto& p : row) sum += (p = g(rng));
    for (auto& p : row) p /= sum;
    LabelSet previous;
    for (int i = 0; i <= 20; ++i) {
      const auto set = predict_set(row, {0.1, 10, i / 20.0});
      CHECK(std::includes(set.members.begin(), set.members.end(), previous.members.begin(),
                          previous.members.end()));
      CHECK(std::is_sorted(set.members.begin(), set.members.end()));
      previous = set;
    }
  }
  std::vector<double> scores(100);
  for (auto& s : scores) s = g(rng);
  DepthInterval previous{0.5, 0.5};
  for (int m = 99; m >= 1; --m) {
    const auto iv = predict_interval(0.5, 0.05, calibrate_regression(scores, m / 100.0));
    CHECK(iv.lo <= previous.lo);
    CHECK(iv.hi >= previous.hi);
    previous = iv;
  }
}

TEST_CASE("classification scores use the true class probability") {
  auto ds = fixture::tiny_dataset();
  const auto scores = classification_scores(ds, Split::test);
  REQUIRE(scores.size() == 5);
  CHECK(scores[0] == doctest::Approx(0.3));
  CHECK(scores[1] == doctest::Approx(0.7));
  CHECK(scores[2] == doctest::Approx(0.2));
  CHECK(scores[3] == doctest::Approx(0.7));
  CHECK(scores[4] == doctest::Approx(0.6));
  ds.predictions.erase("b");
  CHECK_THROWS_AS(classification_scores(ds, Split::test), MissingPrediction);
}

TEST_CASE("depth units include padded markers") {
  const auto ds = fixture::tiny_dataset();
  ResidualTable table;
  DepthVector half;
  half.fill(0.5);
  table["a"] = half;
  table["b"] = half;
  const auto units = collect_depth_units(ds, Split::test, table);
  CHECK(units.size() == 2 * kMarkers);
  const auto scores = regression_scores(units);
  CHECK(scores[0] == doctest::Approx(0.2));
  CHECK(scores[7] == 0.0);
}

TEST_CASE("empirical coverage counts inclusive bounds") {
  const std::vector<double> truths{0.2, 0.5, 0.9};
  const std::vector<DepthInterval> ivs{{0.2, 0.3}, {0.0, 0.4}, {0.8, 0.9}};
  CHECK(empirical_coverage_regression(truths, ivs) == doctest::Approx(2.0 / 3.0));
  const std::vector<int> labels{1, 2};
  const std::vector<LabelSet> sets{{{1, 3}}, {{1}}};
  CHECK(empirical_coverage_classification(labels, sets) == 0.5);
}

TEST_CASE("calibration JSON round-trips including the unbounded sentinel") {
  RegressionCalibration reg{0.1, 3, kUnboundedQuantile};
  const auto text = to_json(reg);
  CHECK(text.find("\"inf\"") != std::string::npos);
  CHECK(regression_calibration_from_json(text) == reg);
  ClassificationCalibration cls{0.05, 1234, 0.987654321};
  CHECK(classification_calibration_from_json(to_json(cls)) == cls);
  CHECK_THROWS(classification_calibration_from_json(to_json(reg)));
}

TEST_CASE("coverage holds on exchangeable synthetic scores") {
  std::mt19937_64 rng(19);
  std::exponential_distribution<double> e(1.0);
  double total = 0.0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> calib(300), test(300);
    for (auto& s : calib) s = e(rng);
    for (auto& s : test) s = e(rng);
    const double q = conformal_quantile(calib, 0.1);
    total += static_cast<double>(std::count_if(test.begin(), test.end(),
                                               [&](double s) { return s <= q; })) /
             300.0;
  }
  CHECK(total / trials >= 0.895);
}
