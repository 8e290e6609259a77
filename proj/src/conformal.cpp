#include "conformal_triage/conformal.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "conformal_triage/errors.hpp"

namespace conformal_triage {

using nlohmann::json;

std::string_view to_string(Task task) {
  return task == Task::depth ? "depth" : "horizon_label";
}

Task parse_task(std::string_view name) {
  if (name == "depth") return Task::depth;
  if (name == "horizon_label" || name == "label") return Task::horizon_label;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

bool LabelSet::contains(int label) const {
  return std::binary_search(members.begin(), members.end(), label);
}

std::vector<DepthUnit> collect_depth_units(const Dataset& ds, Split split,
                                           const ResidualTable& residuals) {
  std::vector<DepthUnit> units;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    auto r = residuals.find(s.id);
    if (r == residuals.end()) throw MissingArtifact("no residuals for profile '" + s.id + "'");
    for (std::size_t t = 0; t < kMarkers; ++t) {
      units.push_back({s.id, t, p->pred_depths[t], s.true_depths[t], r->second[t]});
    }
  }
  return units;
}

std::vector<double> regression_scores(std::span<const DepthUnit> units) {
  std::vector<double> scores;
  scores.reserve(units.size());
  for (const auto& u : units) {
    if (!(u.residual > 0.0) || !std::isfinite(u.residual)) {
      throw NonpositiveResidual("residual for profile '" + u.profile_id + "' marker " +
                                std::to_string(u.marker + 1) + " is not positive");
    }
    scores.push_back(std::abs(u.predicted - u.truth) / u.residual);
  }
  return scores;
}

std::vector<double> regression_scores(const Dataset& ds, Split split,
                                      const ResidualTable& residuals) {
  auto units = collect_depth_units(ds, split, residuals);
  return regression_scores(units);
}

std::vector<double> classification_scores(const Dataset& ds, Split split) {
  std::vector<double> scores;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      const double prob = p->softmax[t][static_cast<std::size_t>(s.true_labels[t] - 1)];
      scores.push_back(std::clamp(1.0 - prob, 0.0, 1.0));
    }
  }
  return scores;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  // The slack absorbs binary representation error in alpha, e.g. 0.9 * 20 = 18.000000000000004.
  const double exact = (1.0 - alpha) * static_cast<double>(n + 1);
  const double k = std::ceil(exact - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw EmptyScores();
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) return kUnboundedQuantile;
  std::vector<double> work(scores.begin(), scores.end());
  auto kth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), kth, work.end());
  return *kth;
}

RegressionCalibration calibrate_regression(std::span<const double> scores, double alpha) {
  return {alpha, scores.size(), conformal_quantile(scores, alpha)};
}

ClassificationCalibration calibrate_classification(std::span<const double> scores, double alpha) {
  return {alpha, scores.size(), conformal_quantile(scores, alpha)};
}

DepthInterval predict_interval(double predicted, double residual, const RegressionCalibration& cal) {
  if (!(residual > 0.0) || !std::isfinite(residual)) {
    throw NonpositiveResidual("residual must be positive");
  }
  if (std::isinf(cal.q)) return {0.0, 1.0};
  const double half = cal.q * residual;
  return {std::max(0.0, predicted - half), std::min(predicted + half, 1.0)};
}

LabelSet predict_set(std::span<const double> probabilities, const ClassificationCalibration& cal) {
  LabelSet set;
  const bool everything = !(cal.q < 1.0);
  const double threshold = 1.0 - cal.q;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    if (everything || probabilities[k] >= threshold) set.members.push_back(static_cast<int>(k + 1));
  }
  return set;
}

double empirical_coverage_regression(std::span<const double> truths,
                                     std::span<const DepthInterval> intervals) {
  if (truths.size() != intervals.size()) throw DimensionMismatch("truths and intervals differ");
  if (truths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hits += intervals[i].contains(truths[i]);
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

double empirical_coverage_classification(std::span<const int> truths,
                                         std::span<const LabelSet> sets) {
  if (truths.size() != sets.size()) throw DimensionMismatch("truths and sets differ");
  if (truths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hits += sets[i].contains(truths[i]);
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

namespace {

std::string calibration_json(Task task, double alpha, std::size_t n, double q) {
  json doc;
  doc["task"] = std::string(to_string(task));
  doc["alpha"] = alpha;
  doc["n"] = n;
  if (std::isinf(q)) {
    doc["q"] = "inf";
  } else {
    doc["q"] = q;
  }
  return doc.dump(2) + "\n";
}

struct RawCalibration {
  double alpha;
  std::size_t n;
  double q;
};

RawCalibration parse_calibration(std::string_view text, Task expected) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, "calibration document: " + std::string(e.what()));
  }
  try {
    if (parse_task(doc.at("task").get<std::string>()) != expected) {
      throw SchemaError("calibration document is for task '" + doc.at("task").get<std::string>() +
                        "'");
    }
    RawCalibration raw{doc.at("alpha").get<double>(), doc.at("n").get<std::size_t>(), 0.0};
    const auto& q = doc.at("q");
    if (q.is_string()) {
      if (q.get<std::string>() != "inf") throw SchemaError("q must be a number or \"inf\"");
      raw.q = kUnboundedQuantile;
    } else {
      raw.q = q.get<double>();
    }
    if (!(raw.alpha > 0.0 && raw.alpha < 1.0) || raw.n == 0 || !(raw.q >= 0.0)) {
      throw SchemaError("calibration document out of range");
    }
    return raw;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("calibration document: ") + e.what());
  }
}

}  // namespace

std::string to_json(const RegressionCalibration& cal) {
  return calibration_json(Task::depth, cal.alpha, cal.n, cal.q);
}

std::string to_json(const ClassificationCalibration& cal) {
  return calibration_json(Task::horizon_label, cal.alpha, cal.n, cal.q);
}

RegressionCalibration regression_calibration_from_json(std::string_view text) {
  auto raw = parse_calibration(text, Task::depth);
  return {raw.alpha, raw.n, raw.q};
}

ClassificationCalibration classification_calibration_from_json(std::string_view text) {
  auto raw = parse_calibration(text, Task::horizon_label);
  return {raw.alpha, raw.n, raw.q};
}

}  // namespace conformal_triage
