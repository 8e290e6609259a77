#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "conformal_triage/diagnostics.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/residual_model.hpp"

using namespace conformal_triage;

namespace {

TrainingSet random_set(std::size_t features, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainingSet set;
  set.inputs.resize(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(n));
  set.targets.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j) {
    for (Eigen::Index i = 0; i < set.inputs.rows(); ++i) set.inputs(i, j) = normal(rng);
    set.targets(j) = std::abs(normal(rng));
  }
  return set;
}

MlpParams with_random_biases(MlpParams params, unsigned seed) {
  std::srand(seed);
  for (auto& b : params.biases) b = Eigen::VectorXd::Random(b.size()) * 0.5;
  return params;
}

}  // namespace

TEST_CASE("initialization is seeded Glorot-uniform with zero biases") {
  const auto a = init_mlp({4, 8, 8, 1}, 3);
  CHECK(a.identical(init_mlp({4, 8, 8, 1}, 3)));
  CHECK_FALSE(a.identical(init_mlp({4, 8, 8, 1}, 4)));
  CHECK(a.parameter_count() == 4 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(a.layer_dims[l] + a.layer_dims[l + 1]));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= limit);
    CHECK(a.biases[l].isZero());
  }
  CHECK_THROWS_AS(init_mlp({4, 8, 2}, 0), ConfigError);
  CHECK_THROWS_AS(init_mlp({0, 8, 1}, 0), ConfigError);
}

TEST_CASE("zero parameters predict softplus(0) + epsilon") {
  auto params = init_mlp({3, 5, 5, 1}, 0);
  for (auto& w : params.weights) w.setZero();
  const std::vector<double> x{1.0, -2.0, 3.0};
  CHECK(predict_residual(params, x) == doctest::Approx(std::log(2.0) + 1e-6).epsilon(1e-12));
}

TEST_CASE("predictions are strictly positive and pure") {
  const auto params = init_mlp({4, 16, 16, 1}, 9);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> wide(0.0, 1000.0);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> x(4);
    for (auto& v : x) v = wide(rng);
    const double u = predict_residual(params, x);
    CHECK(u > 0.0);
    CHECK(std::isfinite(u));
    CHECK(predict_residual(params, x) == u);
  }
  const std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(predict_residual(params, wrong), DimensionMismatch);
}

TEST_CASE("batch prediction agrees with single prediction") {
  const auto params = init_mlp({4, 8, 8, 1}, 2);
  const auto set = random_set(4, 30, 5);
  const auto batch = predict_residuals(params, set.inputs);
  for (Eigen::Index j = 0; j < set.inputs.cols(); ++j) {
    const Eigen::VectorXd col = set.inputs.col(j);
    CHECK(batch(j) == doctest::Approx(predict_residual(params, {col.data(), 4})).epsilon(1e-14));
  }
}

TEST_CASE("backprop matches finite differences on random small networks") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto params = with_random_biases(init_mlp({4, 8, 8, 1}, seed), seed + 100);
    CHECK(gradient_check(params, random_set(4, 16, seed)) < 1e-4);
  }
}

TEST_CASE("gradients are exact in the kink-free linear region") {
  auto params = init_mlp({3, 6, 6, 1}, 1);
  for (auto& w : params.weights) w = w.cwiseAbs();
  for (auto& b : params.biases) b.setConstant(1.0);
  auto batch = random_set(3, 8, 2);
  batch.inputs = batch.inputs.cwiseAbs();
  CHECK(gradient_check(params, batch) < 1e-7);
}

TEST_CASE("single-parameter network matches the closed-form derivative") {
  auto params = init_mlp({1, 1}, 0);
  params.weights[0](0, 0) = 0.7;
  params.biases[0](0) = -0.2;
  TrainingSet set;
  set.inputs.resize(1, 1);
  set.inputs(0, 0) = 1.5;
  set.targets.resize(1);
  set.targets(0) = 0.4;
  const double z = 0.7 * 1.5 - 0.2;
  const double pred = std::log1p(std::exp(z)) + 1e-6;
  const double sigmoid = 1.0 / (1.0 + std::exp(-z));
  const auto g = loss_gradients(params, set);
  CHECK(g.loss == doctest::Approx((pred - 0.4) * (pred - 0.4)).epsilon(1e-12));
  CHECK(g.weights[0](0, 0) == doctest::Approx(2.0 * (pred - 0.4) * sigmoid * 1.5).epsilon(1e-12));
  CHECK(g.biases[0](0) == doctest::Approx(2.0 * (pred - 0.4) * sigmoid).epsilon(1e-12));
}

TEST_CASE("zero epochs return the initialization unchanged") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.hidden = {8, 8};
  cfg.seed = 4;
  const auto set = random_set(5, 20, 1);
  const auto result = train_residual(set, cfg);
  CHECK(result.params.identical(init_mlp({5, 8, 8, 1}, 4)));
  CHECK(result.loss_history.size() == 1);
  CHECK(result.best_epoch == 0);
}

TEST_CASE("constant targets are learned") {
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.hidden = {16, 16};
  cfg.learning_rate = 1e-2;
  auto set = random_set(3, 128, 6);
  const double c = 0.25;
  set.targets.setConstant(c);
  const auto result = train_residual(set, cfg);
  const auto pred = predict_residuals(result.params, set.inputs);
  CHECK((pred.array() - c).abs().maxCoeff() <= 0.05 * c);
}

TEST_CASE("training is reproducible and never ends above the initial loss") {
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.hidden = {8, 8};
  cfg.seed = 12;
  const auto set = random_set(4, 100, 3);
  const auto a = train_residual(set, cfg);
  const auto b = train_residual(set, cfg);
  CHECK(a.params.identical(b.params));
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.loss_history.size() == cfg.epochs + 1);
  CHECK(mean_squared_error(a.params, set) <= a.loss_history.front());
  CHECK(mean_squared_error(a.params, set) == a.loss_history[a.best_epoch]);
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e-2;
  const auto s = train_residual(set, cfg);
  CHECK(mean_squared_error(s.params, set) <= s.loss_history.front());
}

TEST_CASE("invalid training inputs are rejected") {
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainingSet empty;
  empty.inputs.resize(3, 0);
  CHECK_THROWS_AS(train_residual(empty, cfg), ConfigError);
  auto set = random_set(3, 10, 0);
  set.targets(2) = -0.1;
  CHECK_THROWS_AS(train_residual(set, cfg), ConfigError);
  set = random_set(3, 10, 0);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train_residual(set, cfg), ConfigError);
}

TEST_CASE("non-finite loss aborts with the epoch index") {
  TrainConfig cfg;
  cfg.epochs = 3;
  auto set = random_set(3, 10, 0);
  set.inputs *= 1e300;
  try {
    train_residual(set, cfg);
    FAIL("expected NumericalDivergence");
  } catch (const NumericalDivergence& e) {
    CHECK(e.epoch() == 0);
  }
}

TEST_CASE("parameters round-trip through JSON exactly") {
  const auto params = with_random_biases(init_mlp({6, 4, 3, 1}, 8), 1);
  CHECK(mlp_from_json(to_json(params)).identical(params));
  CHECK_THROWS(mlp_from_json("{\"layer_dims\": [2, 1]}"));
  CHECK_THROWS(mlp_from_json("not json"));
}

TEST_CASE("validation selection keeps the training loss below its start") {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.hidden = {8, 8};
  const auto train = random_set(4, 80, 1);
  const auto val = random_set(4, 40, 2);
  const auto result = train_residual(train, cfg, &val);
  CHECK(result.validation_history.size() == cfg.epochs + 1);
  CHECK(result.loss_history[result.best_epoch] <= result.loss_history.front());
  for (std::size_t e = 0; e <= cfg.epochs; ++e) {
    if (result.loss_history[e] <= result.loss_history.front()) {
      CHECK(result.validation_history[result.best_epoch] <= result.validation_history[e]);
    }
  }
  CHECK(mean_squared_error(result.params, val) == result.validation_history[result.best_epoch]);
  const auto narrow = random_set(3, 10, 3);
  CHECK_THROWS_AS(train_residual(train, cfg, &narrow), DimensionMismatch);
}

TEST_CASE("residual model tracks heteroscedastic error on held-out units") {
  double total = 0.0;
  const int seeds = 4;
  for (int seed = 0; seed < seeds; ++seed) {
    SyntheticConfig gen;
    gen.n_profiles = 1000;
    gen.num_classes = 5;
    gen.mcd_runs = 0;
    gen.seed = static_cast<std::uint64_t>(seed);
    const auto ds = generate_synthetic(gen);
    const auto validation = residual_training_set(ds, Split::val);
    const auto result = train_residual(residual_training_set(ds, Split::train), TrainConfig{}, &validation);
    const auto held_out = residual_training_set(ds, Split::test);
    const Eigen::VectorXd u = predict_residuals(result.params, held_out.inputs);
    const std::vector<double> predicted(u.data(), u.data() + u.size());
    const std::vector<double> actual(held_out.targets.data(),
                                     held_out.targets.data() + held_out.targets.size());
    const double rho = pearson_correlation(predicted, actual);
    MESSAGE("seed " << seed << " held-out correlation " << rho);
    total += rho;
  }
  CHECK(total / seeds >= 0.3);
}

TEST_CASE("residual tables cover every marker and reuse the last real features") {
  SyntheticConfig gen;
  gen.n_profiles = 30;
  gen.num_classes = 4;
  gen.feature_dim = 4;
  gen.mcd_runs = 0;
  const auto ds = generate_synthetic(gen);
  const auto params = with_random_biases(init_mlp({4, 8, 8, 1}, 0), 2);
  const auto table = predict_residual_table(params, ds, Split::train);
  CHECK(table.size() == ds.indices(Split::train).size());
  for (std::size_t i : ds.indices(Split::train)) {
    const auto& s = ds.samples[i];
    const auto& u = table.at(s.id);
    const double last = predict_residual(params, s.features[s.num_horizons - 1]);
    for (std::size_t t = 0; t < kMarkers; ++t) {
      CHECK(u[t] > 0.0);
      if (t >= s.num_horizons) CHECK(u[t] == last);
    }
  }
  CHECK_THROWS_AS(residual_column_table(ds, Split::train), MissingArtifact);
}
