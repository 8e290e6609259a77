#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "conformal_triage/diagnostics.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"
#include "conformal_triage/ranking.hpp"
#include "fixtures.hpp"

using namespace conformal_triage;

namespace {

std::vector<UnitKey> keys(std::size_t n) {
  std::vector<UnitKey> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i / 3), i % 3, Task::depth});
  return out;
}

std::vector<QueryUnit> with_scores(const std::vector<double>& scores) {
  std::vector<QueryUnit> units;
  const auto k = keys(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    units.push_back({k[i].profile_id, k[i].horizon, k[i].task, scores[i], Strategy::entropy});
  }
  return units;
}

}  // namespace

TEST_CASE("width scores are interval widths") {
  const auto k = keys(3);
  const std::vector<DepthInterval> ivs{{0.4, 0.4}, {0.0, 1.0}, {0.30832, 0.69168}};
  const auto units = width_scores(k, ivs);
  CHECK(units[0].uncertainty == 0.0);
  CHECK(units[1].uncertainty == 1.0);
  CHECK(units[2].uncertainty == doctest::Approx(0.38336).epsilon(1e-12));
  CHECK(units[2].strategy == Strategy::conformal_width);
}

TEST_CASE("mcd scores are population standard deviations") {
  const auto k = keys(3);
  const std::vector<std::vector<double>> reps{{0.3, 0.3, 0.3}, {0.0, 1.0}, {0.1, 0.2, 0.3}};
  const auto units = mcd_std_scores(k, reps);
  CHECK(units[0].uncertainty == 0.0);
  CHECK(units[1].uncertainty == doctest::Approx(0.5));
  CHECK(units[2].uncertainty == doctest::Approx(std::sqrt(2.0 / 300.0)).epsilon(1e-12));
  CHECK(units[2].uncertainty == doctest::Approx(0.081650).epsilon(1e-5));
  const std::vector<std::vector<double>> single{{0.1}, {0.2}, {0.3}};
  CHECK_THROWS_AS(mcd_std_scores(k, single), InsufficientReplicates);
}

TEST_CASE("entropy uses natural logs with 0 ln 0 = 0") {
  CHECK(entropy(fixture::one_hot(5, 3)) == 0.0);
  const std::vector<double> uniform(99, 1.0 / 99.0);
  CHECK(entropy(uniform) == doctest::Approx(std::log(99.0)).epsilon(1e-12));
  CHECK(entropy(uniform) == doctest::Approx(4.59512).epsilon(1e-6));
  const std::vector<double> half{0.5, 0.5, 0.0, 0.0};
  CHECK(entropy(half) == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("entropy is maximal on uniform rows and zero only on one-hot rows") {
  std::mt19937_64 rng(2);
  std::gamma_distribution<double> g(0.3, 1.0);
  const std::size_t h = 9;
  const double top = std::log(static_cast<double>(h));
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> row(h);
    double sum = 0.0;
    for (auto& p : row) sum += (p = g(rng));
    for (auto& p : row) p /= sum;
    const double e = entropy(row);
    CHECK(e <= top + 1e-12);
    if (*std::max_element(row.begin(), row.end()) < 1.0) CHECK(e > 0.0);
  }
}

TEST_CASE("set size scores are cardinalities") {
  const auto k = keys(3);
  const std::vector<LabelSet> sets{{{2}}, {{1, 2, 3, 4, 5}}, {{1, 2, 3, 4, 5, 6, 7}}};
  const auto units = set_size_scores(k, sets);
  CHECK(units[0].uncertainty == 1.0);
  CHECK(units[1].uncertainty == 5.0);
  CHECK(units[2].uncertainty == 7.0);
}

TEST_CASE("random scores are seeded uniforms") {
  const auto k = keys(50);
  const auto a = random_scores(k, 7);
  CHECK(a == random_scores(k, 7));
  CHECK(rank(a) != rank(random_scores(k, 8)));
  for (const auto& u : a) CHECK((u.uncertainty >= 0.0 && u.uncertainty < 1.0));
  const auto one = keys(1);
  CHECK(rank(random_scores(one, 123)).size() == 1);
}

TEST_CASE("rank sorts descending with lexicographic tie-breaking") {
  auto ranked = rank(with_scores({0.1, 0.9, 0.5, 0.7}));
  CHECK(ranked[0].uncertainty == 0.9);
  CHECK(ranked[3].uncertainty == 0.1);
  ranked = rank(with_scores(std::vector<double>(7, 0.3)));
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].key() < ranked[i].key());
}

TEST_CASE("rank is an order-independent permutation") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(40);
    for (auto& s : scores) s = static_cast<double>(rng() % 6);
    auto units = with_scores(scores);
    const auto reference = rank(units);
    std::shuffle(units.begin(), units.end(), rng);
    const auto again = rank(units);
    CHECK(again == reference);
    std::multiset<double> in(scores.begin(), scores.end()), out;
    std::set<UnitKey> seen;
    for (const auto& u : reference) {
      out.insert(u.uncertainty);
      seen.insert(u.key());
    }
    CHECK(in == out);
    CHECK(seen.size() == units.size());
    for (std::size_t i = 1; i < reference.size(); ++i) {
      CHECK(reference[i - 1].uncertainty >= reference[i].uncertainty);
    }
  }
}

TEST_CASE("rank rejects duplicates and non-finite scores") {
  auto units = with_scores({0.1, 0.2});
  units[1].horizon = units[0].horizon;
  units[1].profile_id = units[0].profile_id;
  CHECK_THROWS_AS(rank(units), InvariantError);
  units = with_scores({0.1, std::nan("")});
  CHECK_THROWS_AS(rank(units), InvariantError);
}

TEST_CASE("profile aggregation takes max or mean") {
  const auto units = with_scores({0.1, 0.4, 0.7, 0.2, 0.2});
  const auto mx = aggregate_by_profile(units, Aggregation::max);
  REQUIRE(mx.size() == 2);
  CHECK(mx[0].profile_id == "p0");
  CHECK(mx[0].uncertainty == 0.7);
  CHECK(mx[1].uncertainty == 0.2);
  const auto mean = aggregate_by_profile(units, Aggregation::mean);
  CHECK(mean[0].uncertainty == doctest::Approx(0.4));
}

TEST_CASE("query pool excludes padded markers") {
  const auto ds = fixture::tiny_dataset();
  CHECK(query_pool(ds, Split::test, Task::depth).size() == 5);
  CHECK(query_pool(ds, Split::test, Task::horizon_label).size() == 5);
  CHECK(query_pool(ds, Split::calib, Task::depth).empty());
}

TEST_CASE("canonical depths and top label") {
  const auto d = canonical_depths(fixture::depths({0.6, 0.2, 0.9}), 3);
  CHECK(d == fixture::depths({0.2, 0.6, 0.9}));
  const std::vector<double> tie{0.4, 0.4, 0.2};
  CHECK(top_label(tie) == 1);
  const std::vector<double> last{0.1, 0.2, 0.7};
  CHECK(top_label(last) == 3);
}

TEST_CASE("strategy applicability and names") {
  CHECK(applies_to(Strategy::conformal_width, Task::depth));
  CHECK_FALSE(applies_to(Strategy::conformal_width, Task::horizon_label));
  CHECK(applies_to(Strategy::entropy, Task::horizon_label));
  CHECK_FALSE(applies_to(Strategy::set_size, Task::depth));
  CHECK(applies_to(Strategy::random, Task::depth));
  for (auto s : {Strategy::conformal_width, Strategy::mcd_std, Strategy::entropy, Strategy::set_size,
                 Strategy::random, Strategy::oracle}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK_THROWS(parse_strategy("bogus"));
}

TEST_CASE("scoring on a dataset uses the artifacts it needs") {
  const auto ds = fixture::tiny_dataset();
  ScoringInputs inputs;
  CHECK_THROWS_AS(score_units(ds, Split::test, Task::depth, Strategy::conformal_width, inputs),
                  MissingArtifact);
  CHECK_THROWS_AS(score_units(ds, Split::test, Task::depth, Strategy::mcd_std, inputs),
                  MissingArtifact);
  const auto entropy_units = score_units(ds, Split::test, Task::horizon_label, Strategy::entropy, inputs);
  REQUIRE(entropy_units.size() == 5);
  CHECK(entropy_units[0].uncertainty == doctest::Approx(entropy(std::vector<double>{0.7, 0.2, 0.1})));

  ResidualTable table;
  DepthVector u;
  u.fill(0.1);
  table["a"] = u;
  table["b"] = u;
  inputs.residuals = &table;
  inputs.regression = RegressionCalibration{0.1, 10, 2.0};
  const auto widths = score_units(ds, Split::test, Task::depth, Strategy::conformal_width, inputs);
  REQUIRE(widths.size() == 5);
  CHECK(widths[0].uncertainty == doctest::Approx(0.4));
  CHECK(widths[1].uncertainty == doctest::Approx(0.2));

  inputs.classification = ClassificationCalibration{0.1, 10, 0.75};
  const auto sizes = score_units(ds, Split::test, Task::horizon_label, Strategy::set_size, inputs);
  CHECK(sizes[0].uncertainty == 1.0);
  CHECK(sizes[2].uncertainty == 1.0);
  CHECK(sizes[3].uncertainty == 2.0);
  CHECK(sizes[4].uncertainty == 3.0);

  const auto oracle = score_units(ds, Split::test, Task::depth, Strategy::oracle, inputs);
  CHECK(oracle[0].uncertainty == doctest::Approx(0.1));
  CHECK(oracle[1].uncertainty == doctest::Approx(0.0));
}

TEST_CASE("set size and entropy rankings agree on tempered softmax") {
  SyntheticConfig gen;
  gen.n_profiles = 600;
  gen.num_classes = 30;
  gen.mcd_runs = 0;
  gen.miscalibration_temperature = 2.0;
  gen.split_ratios = {0.0, 0.0, 0.5, 0.5};
  gen.seed = 8;
  const auto ds = generate_synthetic(gen);
  const auto cal = calibrate_classification(classification_scores(ds, Split::calib), 0.1);
  ScoringInputs inputs;
  inputs.classification = cal;
  const auto e = score_units(ds, Split::test, Task::horizon_label, Strategy::entropy, inputs);
  const auto s = score_units(ds, Split::test, Task::horizon_label, Strategy::set_size, inputs);
  REQUIRE(e.size() >= 1000);
  std::vector<double> ev, sv;
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(e[i].key() == s[i].key());
    ev.push_back(e[i].uncertainty);
    sv.push_back(s[i].uncertainty);
  }
  CHECK(spearman_rank_correlation(ev, sv) >= 0.8);
}

TEST_CASE("rankings export with one-based horizons and ranks") {
  const auto ranked = rank(with_scores({0.2, 0.8}));
  const auto csv = rankings_csv(ranked);
  const auto header = csv.substr(0, csv.find('\n'));
  CHECK(header == "profile_id,horizon_index,task,strategy,uncertainty,rank");
  const auto second = csv.substr(header.size() + 1, csv.find('\n', header.size() + 1) - header.size() - 1);
  CHECK(io::split_csv(second) ==
        std::vector<std::string>{"p0", "2", "depth", "entropy", "0.8", "1"});
}
