#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"
#include "conformal_triage/ranking.hpp"

namespace conformal_triage {

using PredictionMap = std::map<std::string, PredictionBundle, std::less<>>;

/// Replaces the top-K ranked units by ground truth: a depth unit gets the true marker at
/// its position, a label unit gets a one-hot row on the true class. A touched profile's
/// real markers are put in ascending order before replacement. Throws BudgetExceedsPool.
PredictionMap apply_corrections(const Dataset& dataset, std::span<const QueryUnit> ranking,
                                std::size_t budget);

/// Mean over the first num_horizons segments [d_{t-1}, d_t] (d_{-1} = 0) of the 1-D
/// intersection-over-union between predicted and true segments. Predicted markers are sorted
/// first. A zero-length pair scores 1 only when both segments are the same point.
double compute_iou(const DepthVector& predicted, const DepthVector& truth, std::size_t num_horizons);

/// Per-segment IoU used by compute_iou.
double segment_iou(double pred_lo, double pred_hi, double true_lo, double true_hi);

/// Mean profile IoU over a split, using `predictions` in place of the dataset's own.
double dataset_iou(const Dataset& dataset, Split split, const PredictionMap& predictions);

enum class Averaging { macro, micro };

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Macro averages run over classes present in the truth; a class never predicted has
/// precision 0. Micro averages pool all decisions.
ClassificationMetrics compute_classification_metrics(std::span<const int> predicted,
                                                     std::span<const int> truth,
                                                     Averaging averaging = Averaging::macro);

/// Arg-max labels of a split's real horizons under `predictions`, with aligned truths.
struct LabelOutcomes {
  std::vector<int> predicted;
  std::vector<int> truth;
};
LabelOutcomes label_outcomes(const Dataset& dataset, Split split, const PredictionMap& predictions);

/// A label budget, either an absolute unit count or a fraction of the query pool.
struct Budget {
  enum class Kind { units, fraction };
  Kind kind = Kind::fraction;
  double value = 0.0;

  static Budget units(std::size_t count) { return {Kind::units, static_cast<double>(count)}; }
  static Budget fraction(double share) { return {Kind::fraction, share}; }

  /// Fractions round to the nearest unit count, ties toward fewer corrections.
  std::size_t resolve(std::size_t pool) const;
};

struct BudgetSweepConfig {
  std::vector<Budget> budgets;
  std::vector<Strategy> strategies{Strategy::conformal_width, Strategy::mcd_std, Strategy::entropy,
                                   Strategy::set_size, Strategy::random};
  std::vector<Task> tasks{Task::depth, Task::horizon_label};
  std::size_t random_replications = 100;
  /// Replicates used by mcd_std; 0 uses every stored replicate.
  std::size_t mcd_runs = 50;
  std::uint64_t seed = 0;
  Averaging averaging = Averaging::macro;
  /// When set, budgets count whole profiles ranked by the aggregated uncertainty.
  std::optional<Aggregation> profile_aggregation;
  std::size_t threads = 0;
};

/// Evenly spaced fractions 0, step, ..., 1.
std::vector<Budget> fraction_grid(double step);

struct SweepRow {
  Task task = Task::depth;
  Strategy strategy = Strategy::random;
  std::size_t budget = 0;  // corrected units (or profiles)
  double budget_fraction = 0.0;
  std::string metric;      // iou | accuracy | precision | recall
  double mean = 0.0;
  double std = 0.0;        // population std over replications
  std::vector<double> values;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::map<Task, std::size_t> pool_sizes;

  const SweepRow* find(Task task, Strategy strategy, std::size_t budget,
                       std::string_view metric) const;
};

/// Full expert-in-the-loop sweep over `split`. Throws MissingArtifact when a strategy's
/// inputs are absent and BudgetExceedsPool for budgets beyond the pool.
SweepResult run_sweep(const Dataset& dataset, Split split, const ScoringInputs& inputs,
                      const BudgetSweepConfig& config);

/// Columns: strategy, budget, metric, mean, std, replications.
std::string sweep_csv(const SweepResult& result);

}  // namespace conformal_triage
