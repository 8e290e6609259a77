#include "conformal_triage/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"
#include "conformal_triage/ranking.hpp"

namespace conformal_triage {

std::vector<ConfidencePoint> confidence_points(const Dataset& ds, Split split) {
  std::vector<ConfidencePoint> out;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      const auto& row = p->softmax[t];
      const int top = top_label(row);
      out.push_back({row[static_cast<std::size_t>(top - 1)], top == s.true_labels[t]});
    }
  }
  return out;
}

CalibrationCurve calibration_curve(std::span<const ConfidencePoint> points, std::size_t bins,
                                   BinWeighting weighting) {
  if (bins == 0) throw ConfigError("calibration curve needs at least one bin");
  const double width = static_cast<double>(bins);
  CalibrationCurve curve;
  curve.bins.resize(bins);
  std::vector<double> confidence_sum(bins, 0.0), correct(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    curve.bins[b].lower = static_cast<double>(b) / width;
    curve.bins[b].upper = static_cast<double>(b + 1) / width;
  }
  for (const auto& pt : points) {
    auto b = static_cast<std::size_t>(std::clamp(std::floor(pt.confidence * width), 0.0, width - 1));
    // Snap to the exact half-open boundaries b/B.
    if (b > 0 && pt.confidence < curve.bins[b].lower) --b;
    if (b + 1 < bins && pt.confidence >= curve.bins[b + 1].lower) ++b;
    ++curve.bins[b].count;
    confidence_sum[b] += pt.confidence;
    correct[b] += pt.correct ? 1.0 : 0.0;
  }
  double err = 0.0, weight = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = curve.bins[b];
    if (bin.count == 0) continue;
    const auto n = static_cast<double>(bin.count);
    bin.mean_confidence = confidence_sum[b] / n;
    bin.accuracy = correct[b] / n;
    const double w = weighting == BinWeighting::equal ? 1.0 : n;
    err += w * std::abs(bin.accuracy - bin.mean_confidence);
    weight += w;
  }
  curve.mae = weight > 0.0 ? err / weight : 0.0;
  return curve;
}

std::vector<double> default_coverage_targets() {
  std::vector<double> out;
  for (int i = 10; i < 20; ++i) out.push_back(i / 20.0);
  return out;
}

namespace {

void check_targets(std::span<const double> targets) {
  for (double t : targets) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("coverage targets must lie in (0, 1)");
  }
}

void finish_mae(CoverageCurve& curve) {
  double err = 0.0;
  for (const auto& level : curve.levels) err += std::abs(level.coverage - level.target);
  curve.mae = curve.levels.empty() ? 0.0 : err / static_cast<double>(curve.levels.size());
}

}  // namespace

CoverageCurve coverage_curve(std::span<const double> calib_scores,
                             std::span<const ProbabilityRow> test_rows,
                             std::span<const int> test_labels, std::span<const double> targets) {
  if (calib_scores.empty()) throw EmptyScores();
  if (test_rows.size() != test_labels.size()) throw DimensionMismatch("rows and labels differ");
  check_targets(targets);
  CoverageCurve curve;
  for (double target : targets) {
    auto cal = calibrate_classification(calib_scores, 1.0 - target);
    std::vector<LabelSet> sets;
    sets.reserve(test_rows.size());
    for (const auto& row : test_rows) sets.push_back(predict_set(row, cal));
    curve.levels.push_back({target, cal.q, empirical_coverage_classification(test_labels, sets)});
  }
  finish_mae(curve);
  return curve;
}

CoverageCurve coverage_curve(std::span<const double> calib_scores,
                             std::span<const DepthUnit> test_units, std::span<const double> targets) {
  if (calib_scores.empty()) throw EmptyScores();
  check_targets(targets);
  std::vector<double> truths;
  for (const auto& u : test_units) truths.push_back(u.truth);
  CoverageCurve curve;
  for (double target : targets) {
    auto cal = calibrate_regression(calib_scores, 1.0 - target);
    std::vector<DepthInterval> intervals;
    for (const auto& u : test_units) intervals.push_back(predict_interval(u.predicted, u.residual, cal));
    curve.levels.push_back({target, cal.q, empirical_coverage_regression(truths, intervals)});
  }
  finish_mae(curve);
  return curve;
}

double CumulativeDistribution::at(double x) const {
  auto it = std::upper_bound(values.begin(), values.end(), x);
  if (it == values.begin()) return 0.0;
  return fractions[static_cast<std::size_t>(it - values.begin()) - 1];
}

CumulativeDistribution cumulative_distribution(std::span<const double> values) {
  if (values.empty()) throw EmptyScores("cumulative distribution of no values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  CumulativeDistribution cdf;
  cdf.count = sorted.size();
  const auto n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    cdf.values.push_back(sorted[i]);
    cdf.fractions.push_back(static_cast<double>(i + 1) / n);
  }
  return cdf;
}

double ks_distance(const CumulativeDistribution& a, const CumulativeDistribution& b) {
  double worst = 0.0;
  for (double x : a.values) worst = std::max(worst, std::abs(a.at(x) - b.at(x)));
  for (double x : b.values) worst = std::max(worst, std::abs(a.at(x) - b.at(x)));
  return worst;
}

ThresholdResult infer_threshold(std::span<const double> calib_uncertainties, double budget) {
  if (calib_uncertainties.empty()) throw EmptyScores("threshold inference needs uncertainties");
  if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("relative budget must lie in (0, 1]");
  std::vector<double> sorted(calib_uncertainties.begin(), calib_uncertainties.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1]) continue;  // first occurrence of each value
    const auto deferred = n - i;
    const double fraction = static_cast<double>(deferred) / static_cast<double>(n);
    if (fraction <= budget) return {budget, sorted[i], fraction, deferred};
  }
  // Even the largest value is held by more than the budget: defer nothing.
  return {budget, std::nextafter(sorted.back(), std::numeric_limits<double>::infinity()), 0.0, 0};
}

std::vector<std::size_t> defer(std::span<const double> uncertainties, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < uncertainties.size(); ++i) {
    if (uncertainties[i] >= threshold) out.push_back(i);
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("correlation needs paired values");
  if (a.size() < 2) throw ConfigError("correlation needs at least two pairs");
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

double spearman_rank_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("correlation needs paired values");
  return pearson_correlation(average_ranks(a), average_ranks(b));
}

std::string calibration_curve_csv(const CalibrationCurve& curve) {
  std::string out = "bin_lower,bin_upper,mean_confidence,accuracy,count\n";
  for (const auto& b : curve.bins) {
    out += io::join_csv({io::format_double(b.lower), io::format_double(b.upper),
                         b.count ? io::format_double(b.mean_confidence) : "",
                         b.count ? io::format_double(b.accuracy) : "", std::to_string(b.count)});
    out += '\n';
  }
  return out;
}

std::string coverage_curve_csv(const CoverageCurve& curve) {
  std::string out = "target,q,coverage\n";
  for (const auto& l : curve.levels) {
    out += io::join_csv({io::format_double(l.target), io::format_double(l.q),
                         io::format_double(l.coverage)});
    out += '\n';
  }
  return out;
}

std::string cdf_csv(const std::vector<std::pair<std::string, CumulativeDistribution>>& series) {
  std::string out = "split,value,cumulative_fraction\n";
  for (const auto& [name, cdf] : series) {
    for (std::size_t i = 0; i < cdf.values.size(); ++i) {
      out += io::join_csv({name, io::format_double(cdf.values[i]), io::format_double(cdf.fractions[i])});
      out += '\n';
    }
  }
  return out;
}

std::string thresholds_csv(const std::vector<std::pair<std::string, ThresholdResult>>& rows) {
  std::string out = "uncertainty,budget,threshold,realized_fraction,deferred\n";
  for (const auto& [name, r] : rows) {
    out += io::join_csv({name, io::format_double(r.budget), io::format_double(r.threshold),
                         io::format_double(r.realized_fraction), std::to_string(r.deferred)});
    out += '\n';
  }
  return out;
}

}  // namespace conformal_triage
