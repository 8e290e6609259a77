#include "conformal_triage/hil.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"
#include "conformal_triage/parallel.hpp"

namespace conformal_triage {

namespace {

double mean_value(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

std::unordered_map<std::string_view, const ProfileSample*> samples_by_id(const Dataset& ds) {
  std::unordered_map<std::string_view, const ProfileSample*> out;
  for (const auto& s : ds.samples) out.emplace(s.id, &s);
  return out;
}

ProbabilityRow one_hot(std::size_t classes, int label) {
  ProbabilityRow row(classes, 0.0);
  row[static_cast<std::size_t>(label - 1)] = 1.0;
  return row;
}

}  // namespace

PredictionMap apply_corrections(const Dataset& ds, std::span<const QueryUnit> ranking,
                                std::size_t budget) {
  if (budget > ranking.size()) throw BudgetExceedsPool(budget, ranking.size());
  PredictionMap out(ds.predictions.begin(), ds.predictions.end());
  const auto by_id = samples_by_id(ds);
  std::set<std::string_view> canonical;
  for (std::size_t k = 0; k < budget; ++k) {
    const auto& unit = ranking[k];
    auto s = by_id.find(unit.profile_id);
    auto p = out.find(unit.profile_id);
    if (s == by_id.end() || p == out.end()) throw MissingPrediction(unit.profile_id);
    const auto& sample = *s->second;
    if (unit.horizon >= sample.num_horizons) {
      throw InvariantError(unit.profile_id, "correction targets a padded marker position");
    }
    auto& pred = p->second;
    if (unit.task == Task::depth) {
      if (canonical.insert(sample.id).second) {
        pred.pred_depths = canonical_depths(pred.pred_depths, sample.num_horizons);
      }
      pred.pred_depths[unit.horizon] = sample.true_depths[unit.horizon];
    } else {
      pred.softmax[unit.horizon] = one_hot(ds.num_classes, sample.true_labels[unit.horizon]);
    }
  }
  return out;
}

double segment_iou(double pred_lo, double pred_hi, double true_lo, double true_hi) {
  const double inter = std::max(0.0, std::min(pred_hi, true_hi) - std::max(pred_lo, true_lo));
  const double uni = (pred_hi - pred_lo) + (true_hi - true_lo) - inter;
  if (uni <= 0.0) return pred_lo == true_lo && pred_hi == true_hi ? 1.0 : 0.0;
  return inter / uni;
}

double compute_iou(const DepthVector& predicted, const DepthVector& truth,
                   std::size_t num_horizons) {
  if (num_horizons == 0 || num_horizons > kMarkers) {
    throw DimensionMismatch("num_horizons must lie in [1, 8]");
  }
  const auto pred = canonical_depths(predicted, num_horizons);
  double sum = 0.0;
  double pred_lo = 0.0, true_lo = 0.0;
  for (std::size_t t = 0; t < num_horizons; ++t) {
    sum += segment_iou(pred_lo, pred[t], true_lo, truth[t]);
    pred_lo = pred[t];
    true_lo = truth[t];
  }
  return sum / static_cast<double>(num_horizons);
}

double dataset_iou(const Dataset& ds, Split split, const PredictionMap& predictions) {
  std::vector<double> per_profile;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    auto p = predictions.find(s.id);
    if (p == predictions.end()) throw MissingPrediction(s.id);
    per_profile.push_back(compute_iou(p->second.pred_depths, s.true_depths, s.num_horizons));
  }
  return mean_value(per_profile);
}

ClassificationMetrics compute_classification_metrics(std::span<const int> predicted,
                                                     std::span<const int> truth,
                                                     Averaging averaging) {
  if (predicted.size() != truth.size()) throw DimensionMismatch("labels are not aligned");
  ClassificationMetrics m;
  if (truth.empty()) return m;
  std::map<int, std::size_t> true_count, pred_count, hits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++true_count[truth[i]];
    ++pred_count[predicted[i]];
    if (predicted[i] == truth[i]) {
      ++hits[truth[i]];
      ++correct;
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  if (averaging == Averaging::micro) {
    m.precision = m.recall = m.accuracy;
    return m;
  }
  double precision = 0.0, recall = 0.0;
  for (const auto& [label, support] : true_count) {
    const auto tp = static_cast<double>(hits[label]);
    auto pc = pred_count.find(label);
    precision += pc == pred_count.end() ? 0.0 : tp / static_cast<double>(pc->second);
    recall += tp / static_cast<double>(support);
  }
  m.precision = precision / static_cast<double>(true_count.size());
  m.recall = recall / static_cast<double>(true_count.size());
  return m;
}

LabelOutcomes label_outcomes(const Dataset& ds, Split split, const PredictionMap& predictions) {
  LabelOutcomes out;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    auto p = predictions.find(s.id);
    if (p == predictions.end()) throw MissingPrediction(s.id);
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      out.predicted.push_back(top_label(p->second.softmax[t]));
      out.truth.push_back(s.true_labels[t]);
    }
  }
  return out;
}

std::size_t Budget::resolve(std::size_t pool) const {
  if (kind == Kind::units) {
    if (!(value >= 0.0)) throw ConfigError("budget must be non-negative");
    const auto count = static_cast<std::size_t>(value);
    if (count > pool) throw BudgetExceedsPool(count, pool);
    return count;
  }
  if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("budget fraction must lie in [0, 1]");
  return static_cast<std::size_t>(std::ceil(value * static_cast<double>(pool) - 0.5));
}

std::vector<Budget> fraction_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("budget step must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<Budget> out;
  for (std::size_t i = 0; i <= n; ++i) {
    out.push_back(Budget::fraction(static_cast<double>(i) / static_cast<double>(n)));
  }
  return out;
}

const SweepRow* SweepResult::find(Task task, Strategy strategy, std::size_t budget,
                                  std::string_view metric) const {
  for (const auto& row : rows) {
    if (row.task == task && row.strategy == strategy && row.budget == budget &&
        row.metric == metric) {
      return &row;
    }
  }
  return nullptr;
}

namespace {

struct Cell {
  Task task;
  Strategy strategy;
  std::size_t replication;
};

// Ground truth and the running corrected state of one split.
class SweepState {
 public:
  SweepState(const Dataset& ds, const std::vector<const ProfileSample*>& profiles, Task task,
             Averaging averaging)
      : profiles_(profiles), task_(task), averaging_(averaging) {
    std::size_t offset = 0;
    for (const auto* s : profiles_) {
      const auto* p = ds.find_prediction(s->id);
      offsets_.push_back(offset);
      offset += s->num_horizons;
      if (task_ == Task::depth) {
        depths_.push_back(p->pred_depths);
        iou_.push_back(compute_iou(p->pred_depths, s->true_depths, s->num_horizons));
        canonical_.push_back(false);
      } else {
        for (std::size_t t = 0; t < s->num_horizons; ++t) {
          labels_.push_back(top_label(p->softmax[t]));
          truth_.push_back(s->true_labels[t]);
        }
      }
    }
  }

  void correct(std::size_t profile, std::size_t horizon) {
    const auto* s = profiles_[profile];
    if (task_ == Task::depth) {
      auto& d = depths_[profile];
      if (!canonical_[profile]) {
        d = canonical_depths(d, s->num_horizons);
        canonical_[profile] = true;
      }
      d[horizon] = s->true_depths[horizon];
      iou_[profile] = compute_iou(d, s->true_depths, s->num_horizons);
    } else {
      labels_[offsets_[profile] + horizon] = s->true_labels[horizon];
    }
  }

  // iou for depth; accuracy, precision, recall for labels.
  std::vector<double> metrics() const {
    if (task_ == Task::depth) return {mean_value(iou_)};
    auto m = compute_classification_metrics(labels_, truth_, averaging_);
    return {m.accuracy, m.precision, m.recall};
  }

 private:
  const std::vector<const ProfileSample*>& profiles_;
  Task task_;
  Averaging averaging_;
  std::vector<std::size_t> offsets_;
  std::vector<DepthVector> depths_;
  std::vector<double> iou_;
  std::vector<bool> canonical_;
  std::vector<int> labels_;
  std::vector<int> truth_;
};

std::vector<std::string> metric_names(Task task) {
  if (task == Task::depth) return {"iou"};
  return {"accuracy", "precision", "recall"};
}

}  // namespace

SweepResult run_sweep(const Dataset& ds, Split split, const ScoringInputs& inputs,
                      const BudgetSweepConfig& cfg) {
  if (cfg.budgets.empty()) throw ConfigError("sweep needs at least one budget");
  if (cfg.random_replications == 0) throw ConfigError("random_replications must be positive");

  std::vector<const ProfileSample*> profiles;
  std::unordered_map<std::string_view, std::size_t> position;
  std::size_t horizons = 0;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    if (!ds.find_prediction(s.id)) throw MissingPrediction(s.id);
    position.emplace(s.id, profiles.size());
    profiles.push_back(&s);
    horizons += s.num_horizons;
  }
  const std::size_t pool = cfg.profile_aggregation ? profiles.size() : horizons;

  std::vector<std::size_t> budgets;
  for (const auto& b : cfg.budgets) {
    const auto k = b.resolve(pool);
    if (!budgets.empty() && k < budgets.back()) throw ConfigError("budgets must be ascending");
    budgets.push_back(k);
  }

  std::vector<Cell> cells;
  for (auto task : cfg.tasks) {
    for (auto strategy : cfg.strategies) {
      if (!applies_to(strategy, task)) continue;
      const auto reps = strategy == Strategy::random ? cfg.random_replications : 1;
      for (std::size_t r = 0; r < reps; ++r) cells.push_back({task, strategy, r});
    }
  }

  // results[cell][budget] = metric values
  std::vector<std::vector<std::vector<double>>> results(cells.size());
  parallel_for(
      cells.size(),
      [&](std::size_t c) {
        const auto& cell = cells[c];
        ScoringInputs in = inputs;
        in.mcd_runs = cfg.mcd_runs;
        in.seed = mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(cell.task)),
                           cell.replication);

        std::vector<QueryUnit> units;
        if (cfg.profile_aggregation && cell.strategy == Strategy::random) {
          std::vector<UnitKey> keys;
          for (const auto* s : profiles) keys.push_back({s->id, 0, cell.task});
          units = random_scores(keys, in.seed);
        } else {
          units = score_units(ds, split, cell.task, cell.strategy, in);
          if (cfg.profile_aggregation) units = aggregate_by_profile(units, *cfg.profile_aggregation);
        }
        const auto ranked = rank(std::move(units));

        SweepState state(ds, profiles, cell.task, cfg.averaging);
        auto& out = results[c];
        std::size_t applied = 0;
        for (auto k : budgets) {
          for (; applied < k; ++applied) {
            const auto& unit = ranked[applied];
            const auto p = position.at(unit.profile_id);
            if (cfg.profile_aggregation) {
              for (std::size_t t = 0; t < profiles[p]->num_horizons; ++t) state.correct(p, t);
            } else {
              state.correct(p, unit.horizon);
            }
          }
          out.push_back(state.metrics());
        }
      },
      cfg.threads);

  SweepResult result;
  for (auto task : cfg.tasks) {
    result.pool_sizes[task] = pool;
    const auto names = metric_names(task);
    for (auto strategy : cfg.strategies) {
      if (!applies_to(strategy, task)) continue;
      std::vector<std::size_t> members;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].task == task && cells[c].strategy == strategy) members.push_back(c);
      }
      for (std::size_t b = 0; b < budgets.size(); ++b) {
        for (std::size_t m = 0; m < names.size(); ++m) {
          SweepRow row;
          row.task = task;
          row.strategy = strategy;
          row.budget = budgets[b];
          row.budget_fraction =
              pool == 0 ? 0.0 : static_cast<double>(budgets[b]) / static_cast<double>(pool);
          row.metric = names[m];
          for (auto c : members) row.values.push_back(results[c][b][m]);
          row.mean = mean_value(row.values);
          double ss = 0.0;
          for (double v : row.values) ss += (v - row.mean) * (v - row.mean);
          row.std = std::sqrt(ss / static_cast<double>(row.values.size()));
          result.rows.push_back(std::move(row));
        }
      }
    }
  }
  return result;
}

std::string sweep_csv(const SweepResult& result) {
  std::string out = "strategy,budget,metric,mean,std,replications\n";
  for (const auto& row : result.rows) {
    out += io::join_csv({std::string(to_string(row.strategy)), std::to_string(row.budget), row.metric,
                         io::format_double(row.mean), io::format_double(row.std),
                         std::to_string(row.values.size())});
    out += '\n';
  }
  return out;
}

}  // namespace conformal_triage
