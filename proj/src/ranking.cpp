#include "conformal_triage/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"

namespace conformal_triage {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::conformal_width: return "conformal_width";
    case Strategy::mcd_std: return "mcd_std";
    case Strategy::entropy: return "entropy";
    case Strategy::set_size: return "set_size";
    case Strategy::random: return "random";
    case Strategy::oracle: return "oracle";
  }
  return "random";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::conformal_width, Strategy::mcd_std, Strategy::entropy,
                 Strategy::set_size, Strategy::random, Strategy::oracle}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

bool applies_to(Strategy s, Task task) {
  switch (s) {
    case Strategy::conformal_width:
    case Strategy::mcd_std: return task == Task::depth;
    case Strategy::entropy:
    case Strategy::set_size: return task == Task::horizon_label;
    case Strategy::random:
    case Strategy::oracle: return true;
  }
  return false;
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

double entropy(std::span<const double> probabilities) {
  double e = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) e -= p * std::log(p);
  }
  return e;
}

namespace {

void expect_same_size(std::size_t keys, std::size_t values) {
  if (keys != values) throw DimensionMismatch("one score input per unit key required");
}

QueryUnit make_unit(const UnitKey& key, double uncertainty, Strategy strategy) {
  return {key.profile_id, key.horizon, key.task, uncertainty, strategy};
}

}  // namespace

std::vector<QueryUnit> width_scores(std::span<const UnitKey> keys,
                                    std::span<const DepthInterval> intervals) {
  expect_same_size(keys.size(), intervals.size());
  std::vector<QueryUnit> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out.push_back(make_unit(keys[i], intervals[i].width(), Strategy::conformal_width));
  }
  return out;
}

std::vector<QueryUnit> mcd_std_scores(std::span<const UnitKey> keys,
                                      std::span<const std::vector<double>> replicates) {
  expect_same_size(keys.size(), replicates.size());
  std::vector<QueryUnit> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (replicates[i].size() < 2) {
      throw InsufficientReplicates("profile '" + keys[i].profile_id + "' has " +
                                   std::to_string(replicates[i].size()) + " MCD replicates");
    }
    out.push_back(make_unit(keys[i], population_std(replicates[i]), Strategy::mcd_std));
  }
  return out;
}

std::vector<QueryUnit> entropy_scores(std::span<const UnitKey> keys,
                                      std::span<const ProbabilityRow> rows) {
  expect_same_size(keys.size(), rows.size());
  std::vector<QueryUnit> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out.push_back(make_unit(keys[i], entropy(rows[i]), Strategy::entropy));
  }
  return out;
}

std::vector<QueryUnit> set_size_scores(std::span<const UnitKey> keys,
                                       std::span<const LabelSet> sets) {
  expect_same_size(keys.size(), sets.size());
  std::vector<QueryUnit> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out.push_back(make_unit(keys[i], static_cast<double>(sets[i].size()), Strategy::set_size));
  }
  return out;
}

std::vector<QueryUnit> random_scores(std::span<const UnitKey> keys, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<QueryUnit> out;
  for (const auto& key : keys) out.push_back(make_unit(key, unit(rng), Strategy::random));
  return out;
}

std::vector<QueryUnit> rank(std::vector<QueryUnit> units) {
  std::vector<UnitKey> keys;
  keys.reserve(units.size());
  for (const auto& u : units) {
    if (!std::isfinite(u.uncertainty)) {
      throw InvariantError(u.profile_id, "non-finite uncertainty");
    }
    keys.push_back(u.key());
  }
  std::sort(keys.begin(), keys.end());
  if (auto dup = std::adjacent_find(keys.begin(), keys.end()); dup != keys.end()) {
    throw InvariantError(dup->profile_id, "duplicate query unit at horizon " +
                                              std::to_string(dup->horizon + 1));
  }
  std::sort(units.begin(), units.end(), [](const QueryUnit& a, const QueryUnit& b) {
    if (a.uncertainty != b.uncertainty) return a.uncertainty > b.uncertainty;
    return a.key() < b.key();
  });
  return units;
}

std::vector<QueryUnit> aggregate_by_profile(std::span<const QueryUnit> units, Aggregation how) {
  struct Acc {
    double max = -HUGE_VAL;
    double sum = 0.0;
    std::size_t count = 0;
    Task task;
    Strategy strategy;
  };
  std::map<std::string, Acc> acc;
  for (const auto& u : units) {
    auto& a = acc.try_emplace(u.profile_id, Acc{-HUGE_VAL, 0.0, 0, u.task, u.strategy}).first->second;
    a.max = std::max(a.max, u.uncertainty);
    a.sum += u.uncertainty;
    ++a.count;
  }
  std::vector<QueryUnit> out;
  for (const auto& [id, a] : acc) {
    double value = how == Aggregation::max ? a.max : a.sum / static_cast<double>(a.count);
    out.push_back({id, 0, a.task, value, a.strategy});
  }
  return out;
}

std::vector<UnitKey> query_pool(const Dataset& ds, Split split, Task task) {
  std::vector<UnitKey> keys;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    for (std::size_t t = 0; t < s.num_horizons; ++t) keys.push_back({s.id, t, task});
  }
  return keys;
}

DepthVector canonical_depths(const DepthVector& predicted, std::size_t num_horizons) {
  DepthVector out;
  out.fill(kStopToken);
  std::copy_n(predicted.begin(), num_horizons, out.begin());
  std::sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(num_horizons));
  return out;
}

int top_label(std::span<const double> probabilities) {
  auto it = std::max_element(probabilities.begin(), probabilities.end());
  return static_cast<int>(it - probabilities.begin()) + 1;
}

std::vector<QueryUnit> score_units(const Dataset& ds, Split split, Task task, Strategy strategy,
                                   const ScoringInputs& in) {
  if (!applies_to(strategy, task)) {
    throw ConfigError("strategy '" + std::string(to_string(strategy)) + "' does not apply to task '" +
                      std::string(to_string(task)) + "'");
  }
  auto keys = query_pool(ds, split, task);
  if (strategy == Strategy::random) return random_scores(keys, in.seed);

  // query_pool emits units grouped by profile in storage order.
  std::vector<const ProfileSample*> owner;
  std::vector<const PredictionBundle*> pred;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    owner.insert(owner.end(), s.num_horizons, &s);
    pred.insert(pred.end(), s.num_horizons, p);
  }

  switch (strategy) {
    case Strategy::conformal_width: {
      if (!in.residuals || !in.regression) {
        throw MissingArtifact("conformal_width needs residuals and a depth calibration");
      }
      std::vector<DepthInterval> intervals;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        auto r = in.residuals->find(keys[i].profile_id);
        if (r == in.residuals->end()) {
          throw MissingArtifact("no residuals for profile '" + keys[i].profile_id + "'");
        }
        intervals.push_back(predict_interval(pred[i]->pred_depths[keys[i].horizon],
                                             r->second[keys[i].horizon], *in.regression));
      }
      return width_scores(keys, intervals);
    }
    case Strategy::mcd_std: {
      std::vector<std::vector<double>> replicates;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (pred[i]->mcd_depths.empty()) {
          throw MissingArtifact("mcd_std needs mcd_depths for profile '" + keys[i].profile_id + "'");
        }
        const auto stored = pred[i]->mcd_depths.size();
        if (in.mcd_runs > stored) {
          throw InsufficientReplicates("profile '" + keys[i].profile_id + "' stores " +
                                       std::to_string(stored) + " MCD replicates, " +
                                       std::to_string(in.mcd_runs) + " requested");
        }
        const auto runs = in.mcd_runs == 0 ? stored : in.mcd_runs;
        std::vector<double> values;
        for (std::size_t r = 0; r < runs; ++r) {
          values.push_back(pred[i]->mcd_depths[r][keys[i].horizon]);
        }
        replicates.push_back(std::move(values));
      }
      return mcd_std_scores(keys, replicates);
    }
    case Strategy::entropy: {
      std::vector<ProbabilityRow> rows;
      for (std::size_t i = 0; i < keys.size(); ++i) rows.push_back(pred[i]->softmax[keys[i].horizon]);
      return entropy_scores(keys, rows);
    }
    case Strategy::set_size: {
      if (!in.classification) throw MissingArtifact("set_size needs a label calibration");
      std::vector<LabelSet> sets;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        sets.push_back(predict_set(pred[i]->softmax[keys[i].horizon], *in.classification));
      }
      return set_size_scores(keys, sets);
    }
    case Strategy::oracle: {
      std::vector<QueryUnit> out;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto t = keys[i].horizon;
        double error = 0.0;
        if (task == Task::depth) {
          auto sorted = canonical_depths(pred[i]->pred_depths, owner[i]->num_horizons);
          error = std::abs(sorted[t] - owner[i]->true_depths[t]);
        } else {
          error = top_label(pred[i]->softmax[t]) == owner[i]->true_labels[t] ? 0.0 : 1.0;
        }
        out.push_back(make_unit(keys[i], error, Strategy::oracle));
      }
      return out;
    }
    case Strategy::random: break;
  }
  return {};
}

std::string rankings_csv(std::span<const QueryUnit> ranked) {
  std::string out = "profile_id,horizon_index,task,strategy,uncertainty,rank\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& u = ranked[i];
    out += io::join_csv({u.profile_id, std::to_string(u.horizon + 1), std::string(to_string(u.task)),
                         std::string(to_string(u.strategy)), io::format_double(u.uncertainty),
                         std::to_string(i + 1)});
    out += '\n';
  }
  return out;
}

}  // namespace conformal_triage
