#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "conformal_triage/data_model.hpp"

namespace conformal_triage {

/// Quantile value meaning "no finite threshold": maximal interval / full label set.
inline constexpr double kUnboundedQuantile = std::numeric_limits<double>::infinity();

enum class Task { depth, horizon_label };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

/// Fitted split-conformal state for depth-marker regression.
struct RegressionCalibration {
  double alpha = 0.1;
  std::size_t n = 0;  // scored (profile, marker) units
  double q = kUnboundedQuantile;

  bool operator==(const RegressionCalibration&) const = default;
};

/// Fitted split-conformal state for horizon classification.
struct ClassificationCalibration {
  double alpha = 0.1;
  std::size_t n = 0;  // scored horizons
  double q = kUnboundedQuantile;

  bool operator==(const ClassificationCalibration&) const = default;
};

struct DepthInterval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool contains(double depth) const { return lo <= depth && depth <= hi; }
  bool operator==(const DepthInterval&) const = default;
};

/// Sorted, duplicate-free 1-based class indices.
struct LabelSet {
  std::vector<int> members;

  std::size_t size() const { return members.size(); }
  bool contains(int label) const;
  bool operator==(const LabelSet&) const = default;
};

/// Per-profile residual estimates u_t, one per marker position.
using ResidualTable = std::map<std::string, DepthVector, std::less<>>;

/// One scored regression unit.
struct DepthUnit {
  std::string profile_id;
  std::size_t marker = 0;  // 0-based position t
  double predicted = 0.0;
  double truth = 0.0;
  double residual = 0.0;
};

/// All (profile, marker) units of `split`, padded positions included.
std::vector<DepthUnit> collect_depth_units(const Dataset& dataset, Split split,
                                           const ResidualTable& residuals);

/// |d_hat - d| / u per unit. Throws NonpositiveResidual naming the first bad unit.
std::vector<double> regression_scores(std::span<const DepthUnit> units);
std::vector<double> regression_scores(const Dataset& dataset, Split split,
                                      const ResidualTable& residuals);

/// 1 - p(true class) for every real horizon of `split`. Throws MissingPrediction.
std::vector<double> classification_scores(const Dataset& dataset, Split split);

/// The k-th smallest score, k = ceil((1 - alpha)(n + 1)); kUnboundedQuantile when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

/// Order-statistic index used by conformal_quantile (1-based, may exceed n).
std::size_t conformal_rank(std::size_t n, double alpha);

RegressionCalibration calibrate_regression(std::span<const double> scores, double alpha);
ClassificationCalibration calibrate_classification(std::span<const double> scores, double alpha);

/// [max(0, d - q u), min(d + q u, 1)].
DepthInterval predict_interval(double predicted, double residual, const RegressionCalibration& cal);

/// {k : p_k >= 1 - q}; q >= 1 (or unbounded) yields every class.
LabelSet predict_set(std::span<const double> probabilities, const ClassificationCalibration& cal);

double empirical_coverage_regression(std::span<const double> truths,
                                     std::span<const DepthInterval> intervals);
double empirical_coverage_classification(std::span<const int> truths,
                                         std::span<const LabelSet> sets);

// JSON documents of the form {task, alpha, n, q}; an unbounded q is written as "inf".
std::string to_json(const RegressionCalibration& cal);
std::string to_json(const ClassificationCalibration& cal);
RegressionCalibration regression_calibration_from_json(std::string_view text);
ClassificationCalibration classification_calibration_from_json(std::string_view text);

}  // namespace conformal_triage
