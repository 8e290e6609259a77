#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"

namespace conformal_triage {

/// How query units are ordered for expert review. `oracle` ranks by the true error and
/// exists only to benchmark the others; it needs ground truth.
enum class Strategy { conformal_width, mcd_std, entropy, set_size, random, oracle };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view name);
bool applies_to(Strategy strategy, Task task);

struct UnitKey {
  std::string profile_id;
  std::size_t horizon = 0;  // 0-based; exported 1-based
  Task task = Task::depth;

  auto operator<=>(const UnitKey&) const = default;
};

/// One rankable prediction together with its uncertainty under one strategy.
struct QueryUnit {
  std::string profile_id;
  std::size_t horizon = 0;
  Task task = Task::depth;
  double uncertainty = 0.0;
  Strategy strategy = Strategy::random;

  UnitKey key() const { return {profile_id, horizon, task}; }
  bool operator==(const QueryUnit&) const = default;
};

/// Population standard deviation (divides by the number of values).
double population_std(std::span<const double> values);
/// Natural-log Shannon entropy with 0 ln 0 = 0.
double entropy(std::span<const double> probabilities);

std::vector<QueryUnit> width_scores(std::span<const UnitKey> keys,
                                    std::span<const DepthInterval> intervals);
/// replicates[i] holds the R >= 2 MCD values for unit i; throws InsufficientReplicates.
std::vector<QueryUnit> mcd_std_scores(std::span<const UnitKey> keys,
                                      std::span<const std::vector<double>> replicates);
std::vector<QueryUnit> entropy_scores(std::span<const UnitKey> keys,
                                      std::span<const ProbabilityRow> rows);
std::vector<QueryUnit> set_size_scores(std::span<const UnitKey> keys,
                                       std::span<const LabelSet> sets);
/// I.i.d. uniform(0, 1) scores, deterministic per seed.
std::vector<QueryUnit> random_scores(std::span<const UnitKey> keys, std::uint64_t seed);

/// Descending uncertainty; ties by ascending (profile_id, horizon, task). Throws
/// InvariantError on duplicate keys or non-finite uncertainty.
std::vector<QueryUnit> rank(std::vector<QueryUnit> units);

enum class Aggregation { max, mean };

/// One unit per profile (horizon 0) carrying the max or mean of its units' uncertainties.
std::vector<QueryUnit> aggregate_by_profile(std::span<const QueryUnit> units, Aggregation how);

/// Real horizons of `split` (padded marker positions are never offered to the expert).
std::vector<UnitKey> query_pool(const Dataset& dataset, Split split, Task task);

/// The first num_horizons predicted markers in ascending order, stop tokens after.
DepthVector canonical_depths(const DepthVector& predicted, std::size_t num_horizons);
/// Arg-max class (1-based; lowest index on ties).
int top_label(std::span<const double> probabilities);

/// Artifacts a strategy may need; unused members can stay empty.
struct ScoringInputs {
  const ResidualTable* residuals = nullptr;
  std::optional<RegressionCalibration> regression;
  std::optional<ClassificationCalibration> classification;
  /// Seed for the random strategy.
  std::uint64_t seed = 0;
  /// MCD replicates to use (the first mcd_runs stored); 0 uses all of them.
  std::size_t mcd_runs = 0;
};

/// Uncertainty of every pool unit of `split` for `task` under `strategy` (unranked).
/// Throws MissingArtifact when an input the strategy needs is absent.
std::vector<QueryUnit> score_units(const Dataset& dataset, Split split, Task task,
                                   Strategy strategy, const ScoringInputs& inputs);

/// CSV with columns profile_id, horizon_index, task, strategy, uncertainty, rank.
std::string rankings_csv(std::span<const QueryUnit> ranked);

}  // namespace conformal_triage
