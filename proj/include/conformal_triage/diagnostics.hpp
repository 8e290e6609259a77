#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"

namespace conformal_triage {

struct ConfidencePoint {
  double confidence = 0.0;  // max softmax probability
  bool correct = false;     // top-1 prediction equals the true label
};

/// Max-softmax confidence and top-1 correctness for every real horizon of `split`.
std::vector<ConfidencePoint> confidence_points(const Dataset& dataset, Split split);

enum class BinWeighting { equal, count };

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationCurve {
  std::vector<ReliabilityBin> bins;
  /// |accuracy - mean confidence| averaged over non-empty bins.
  double mae = 0.0;
};

/// Equal-width bins [b/B, (b+1)/B), the last one closed.
CalibrationCurve calibration_curve(std::span<const ConfidencePoint> points, std::size_t bins = 10,
                                   BinWeighting weighting = BinWeighting::equal);

struct CoverageLevel {
  double target = 0.0;
  double q = 0.0;
  double coverage = 0.0;
};

struct CoverageCurve {
  std::vector<CoverageLevel> levels;
  double mae = 0.0;
};

/// 0.5, 0.55, ..., 0.95.
std::vector<double> default_coverage_targets();

/// Recalibrates at alpha = 1 - target for every target and measures set coverage on the
/// test rows. Throws EmptyScores.
CoverageCurve coverage_curve(std::span<const double> calib_scores,
                             std::span<const ProbabilityRow> test_rows,
                             std::span<const int> test_labels, std::span<const double> targets);

/// Interval analogue of coverage_curve over depth units.
CoverageCurve coverage_curve(std::span<const double> calib_scores,
                             std::span<const DepthUnit> test_units, std::span<const double> targets);

/// Exact empirical CDF: distinct sorted values with the fraction of data <= each.
struct CumulativeDistribution {
  std::vector<double> values;
  std::vector<double> fractions;
  std::size_t count = 0;

  double at(double x) const;
};

CumulativeDistribution cumulative_distribution(std::span<const double> values);

/// sup_x |F_a(x) - F_b(x)|.
double ks_distance(const CumulativeDistribution& a, const CumulativeDistribution& b);

struct ThresholdResult {
  double budget = 0.0;
  double threshold = 0.0;
  double realized_fraction = 0.0;
  std::size_t deferred = 0;
};

/// Smallest threshold whose deferral set {u >= threshold} covers at most `relative_budget`
/// of the calibration units. Ties may leave the realized fraction below the budget, never
/// above it.
ThresholdResult infer_threshold(std::span<const double> calib_uncertainties, double relative_budget);

/// Indices i with uncertainties[i] >= threshold, ascending.
std::vector<std::size_t> defer(std::span<const double> uncertainties, double threshold);

/// Average (mid) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);
double pearson_correlation(std::span<const double> a, std::span<const double> b);
/// Pearson correlation of average ranks; NaN when either side is constant.
double spearman_rank_correlation(std::span<const double> a, std::span<const double> b);

std::string calibration_curve_csv(const CalibrationCurve& curve);
std::string coverage_curve_csv(const CoverageCurve& curve);
/// Columns: split, value, cumulative_fraction.
std::string cdf_csv(const std::vector<std::pair<std::string, CumulativeDistribution>>& series);
std::string thresholds_csv(const std::vector<std::pair<std::string, ThresholdResult>>& rows);

}  // namespace conformal_triage
