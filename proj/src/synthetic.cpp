#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "conformal_triage/data_model.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/parallel.hpp"

namespace conformal_triage {

namespace {

constexpr std::size_t kGeoFeatures = 6;
constexpr double kOffPeakLogitSd = 0.5;

void check(const SyntheticConfig& c) {
  if (c.n_profiles == 0) throw ConfigError("n_profiles must be positive");
  if (c.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (c.feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (!(c.heteroscedasticity >= 0.0)) throw ConfigError("heteroscedasticity must be >= 0");
  if (!(c.miscalibration_temperature > 0.0)) {
    throw ConfigError("miscalibration_temperature must be > 0");
  }
  if (c.mcd_runs == 1) throw ConfigError("mcd_runs must be 0 or at least 2");
  if (!(c.base_depth_noise > 0.0)) throw ConfigError("base_depth_noise must be > 0");
  if (!(c.min_peak_probability > 0.0 && c.min_peak_probability <= c.max_peak_probability &&
        c.max_peak_probability < 1.0)) {
    throw ConfigError("peak probability range must satisfy 0 < min <= max < 1");
  }
}

ProbabilityRow softmax(const std::vector<double>& logits, double temperature) {
  double peak = *std::max_element(logits.begin(), logits.end());
  ProbabilityRow p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - peak) / temperature);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  check(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> horizons(kMinHorizons, kMaxHorizons);
  std::uniform_int_distribution<std::size_t> klass(0, cfg.num_classes - 1);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.feature_dim = cfg.feature_dim;
  ds.samples.reserve(cfg.n_profiles);

  for (std::size_t i = 0; i < cfg.n_profiles; ++i) {
    ProfileSample s;
    char id[32];
    std::snprintf(id, sizeof(id), "P%06zu", i);
    s.id = id;
    s.num_horizons = horizons(rng);
    const std::size_t n = s.num_horizons;

    // Ground-truth markers: positive gaps scaled to the profile's total depth.
    double total = unit(rng) < 0.5 ? 1.0 : uniform(0.5, 1.0);
    std::vector<double> gaps(n);
    double gap_sum = 0.0;
    for (double& g : gaps) gap_sum += (g = uniform(0.2, 1.0));
    s.true_depths.fill(kStopToken);
    double cum = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      cum += gaps[t];
      s.true_depths[t] = t + 1 == n ? total : total * cum / gap_sum;
    }

    std::array<double, kGeoFeatures> geo{};
    for (double& g : geo) g = normal(rng);

    PredictionBundle p;
    p.id = s.id;
    p.pred_depths.fill(kStopToken);
    for (std::size_t t = 0; t < n; ++t) {
      FeatureVector f(cfg.feature_dim);
      const double difficulty = unit(rng);
      for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
        if (j == kDifficultyFeature) {
          f[j] = difficulty;
        } else if (j == 1) {
          f[j] = static_cast<double>(t + 1) / kMarkers;
        } else if (j < 2 + kGeoFeatures) {
          f[j] = geo[j - 2];
        } else {
          f[j] = normal(rng);
        }
      }
      s.features.push_back(std::move(f));

      const double sigma = cfg.base_depth_noise * (1.0 + 19.0 * cfg.heteroscedasticity * difficulty);
      p.pred_depths[t] = std::clamp(s.true_depths[t] + sigma * normal(rng), 0.0, 1.0);
    }
    // A segmentation model emits ordered boundaries.
    std::sort(p.pred_depths.begin(), p.pred_depths.begin() + static_cast<std::ptrdiff_t>(n));

    if (cfg.mcd_runs > 0) {
      std::array<double, kMarkers> spread{};
      for (std::size_t t = 0; t < n; ++t) spread[t] = uniform(0.01, 0.05);
      p.mcd_depths.assign(cfg.mcd_runs, p.pred_depths);
      for (auto& replicate : p.mcd_depths) {
        for (std::size_t t = 0; t < n; ++t) {
          replicate[t] = std::clamp(p.pred_depths[t] + spread[t] * normal(rng), 0.0, 1.0);
        }
      }
    }

    // Labels are drawn from the untempered distribution, so temperature 1 is calibrated.
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<double> logits(cfg.num_classes);
      for (double& z : logits) z = kOffPeakLogitSd * normal(rng);
      const std::size_t peak = klass(rng);
      double off_peak = 0.0;
      for (std::size_t k = 0; k < logits.size(); ++k) {
        if (k != peak) off_peak += std::exp(logits[k]);
      }
      const double target = uniform(cfg.min_peak_probability, cfg.max_peak_probability);
      logits[peak] = std::log(off_peak * target / (1.0 - target));

      auto calibrated = softmax(logits, 1.0);
      std::discrete_distribution<int> draw(calibrated.begin(), calibrated.end());
      s.true_labels.push_back(draw(rng) + 1);
      p.softmax.push_back(softmax(logits, cfg.miscalibration_temperature));
    }

    ds.predictions.emplace(p.id, std::move(p));
    ds.samples.push_back(std::move(s));
  }

  ds = split_assign(std::move(ds), cfg.split_ratios, mix_seed(cfg.seed, 1));
  validate_dataset(ds);
  return ds;
}

}  // namespace conformal_triage
