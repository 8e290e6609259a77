#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Core>

#include "conformal_triage/diagnostics.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"
#include "conformal_triage/parallel.hpp"
#include "conformal_triage/svg.hpp"

namespace conformal_triage::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void log(const std::string& message) { std::cerr << "[conformal_triage] " << message << '\n'; }

// ---------------------------------------------------------------------------
// Config (de)serialization

std::string_view to_string(ResidualMode mode) { return mode == ResidualMode::fit ? "fit" : "column"; }

ResidualMode parse_residual_mode(std::string_view name) {
  if (name == "fit") return ResidualMode::fit;
  if (name == "column") return ResidualMode::column;
  throw ConfigError("residual mode must be 'fit' or 'column', got '" + std::string(name) + "'");
}

Averaging parse_averaging(std::string_view name) {
  if (name == "macro") return Averaging::macro;
  if (name == "micro") return Averaging::micro;
  throw ConfigError("averaging must be 'macro' or 'micro', got '" + std::string(name) + "'");
}

std::optional<Aggregation> parse_aggregation(std::string_view name) {
  if (name == "none") return std::nullopt;
  if (name == "max") return Aggregation::max;
  if (name == "mean") return Aggregation::mean;
  throw ConfigError("aggregation must be 'none', 'max' or 'mean', got '" + std::string(name) + "'");
}

std::string aggregation_name(const std::optional<Aggregation>& a) {
  if (!a) return "none";
  return *a == Aggregation::max ? "max" : "mean";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + std::string(name) + "'");
}

std::vector<Task> parse_tasks(const std::vector<std::string>& names) {
  std::vector<Task> out;
  for (const auto& n : names) out.push_back(parse_task(n));
  return out;
}

std::vector<Strategy> parse_strategies(const std::vector<std::string>& names) {
  std::vector<Strategy> out;
  for (const auto& n : names) out.push_back(parse_strategy(n));
  return out;
}

template <typename T, typename F>
std::vector<std::string> names_of(const std::vector<T>& items, F name) {
  std::vector<std::string> out;
  for (const auto& item : items) out.emplace_back(name(item));
  return out;
}

void check_keys(const json& doc, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

json synthetic_to_json(const SyntheticConfig& s) {
  return {{"n_profiles", s.n_profiles},
          {"num_classes", s.num_classes},
          {"feature_dim", s.feature_dim},
          {"heteroscedasticity", s.heteroscedasticity},
          {"temperature", s.miscalibration_temperature},
          {"mcd_runs", s.mcd_runs},
          {"split_ratios", s.split_ratios},
          {"base_depth_noise", s.base_depth_noise},
          {"min_peak_probability", s.min_peak_probability},
          {"max_peak_probability", s.max_peak_probability}};
}

void synthetic_from_json(const json& doc, SyntheticConfig& s) {
  check_keys(doc,
             {"n_profiles", "num_classes", "feature_dim", "heteroscedasticity", "temperature",
              "mcd_runs", "split_ratios", "base_depth_noise", "min_peak_probability",
              "max_peak_probability"},
             "synthetic");
  if (doc.contains("n_profiles")) s.n_profiles = doc["n_profiles"].get<std::size_t>();
  if (doc.contains("num_classes")) s.num_classes = doc["num_classes"].get<std::size_t>();
  if (doc.contains("feature_dim")) s.feature_dim = doc["feature_dim"].get<std::size_t>();
  if (doc.contains("heteroscedasticity")) s.heteroscedasticity = doc["heteroscedasticity"].get<double>();
  if (doc.contains("temperature")) s.miscalibration_temperature = doc["temperature"].get<double>();
  if (doc.contains("mcd_runs")) s.mcd_runs = doc["mcd_runs"].get<std::size_t>();
  if (doc.contains("split_ratios")) s.split_ratios = doc["split_ratios"].get<SplitRatios>();
  if (doc.contains("base_depth_noise")) s.base_depth_noise = doc["base_depth_noise"].get<double>();
  if (doc.contains("min_peak_probability")) s.min_peak_probability = doc["min_peak_probability"].get<double>();
  if (doc.contains("max_peak_probability")) s.max_peak_probability = doc["max_peak_probability"].get<double>();
}

json training_to_json(const TrainConfig& t) {
  return {{"hidden", t.hidden},
          {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"optimizer", t.optimizer == Optimizer::adam ? "adam" : "sgd"}};
}

void training_from_json(const json& doc, TrainConfig& t) {
  check_keys(doc, {"hidden", "learning_rate", "epochs", "batch_size", "optimizer"}, "training");
  if (doc.contains("hidden")) t.hidden = doc["hidden"].get<std::vector<std::size_t>>();
  if (doc.contains("learning_rate")) t.learning_rate = doc["learning_rate"].get<double>();
  if (doc.contains("epochs")) t.epochs = doc["epochs"].get<std::size_t>();
  if (doc.contains("batch_size")) t.batch_size = doc["batch_size"].get<std::size_t>();
  if (doc.contains("optimizer")) t.optimizer = parse_optimizer(doc["optimizer"].get<std::string>());
}

// ---------------------------------------------------------------------------
// Artifacts

fs::path artifact(const RunConfig& cfg, const std::string& name) { return cfg.out_dir / name; }

Dataset load(const RunConfig& cfg) {
  if (!fs::exists(cfg.dataset)) throw IoError("dataset not found: " + cfg.dataset.string());
  const auto format = cfg.format == "auto" ? detect_format(cfg.dataset) : parse_format(cfg.format);
  return load_dataset(cfg.dataset, format);
}

std::string read_artifact(const RunConfig& cfg, const std::string& name) {
  const auto path = artifact(cfg, name);
  if (!fs::exists(path)) {
    throw MissingArtifact(path.string() + " is missing; run the calibrate command first");
  }
  return io::read_file(path);
}

void write_artifact(const RunConfig& cfg, const std::string& name, const std::string& contents,
                    std::vector<std::string>& written) {
  io::write_file(artifact(cfg, name), contents);
  written.push_back(name);
}

ResidualTable residuals_for(const RunConfig& cfg, const Dataset& ds, Split split) {
  if (cfg.residuals == ResidualMode::column) return residual_column_table(ds, split);
  return predict_residual_table(mlp_from_json(read_artifact(cfg, "residual_model.json")), ds, split);
}

bool selected(const RunConfig& cfg, Task task) {
  return std::find(cfg.tasks.begin(), cfg.tasks.end(), task) != cfg.tasks.end();
}

bool uses(const std::vector<Strategy>& strategies, Strategy s) {
  return std::find(strategies.begin(), strategies.end(), s) != strategies.end();
}

Task task_of(Strategy s) { return applies_to(s, Task::depth) ? Task::depth : Task::horizon_label; }

/// Loads exactly the artifacts the selected strategies need.
struct Artifacts {
  std::optional<ResidualTable> residuals;
  ScoringInputs inputs;
};

Artifacts load_artifacts(const RunConfig& cfg, const Dataset& ds, Split split,
                         const std::vector<Strategy>& strategies, bool need_depth_cal,
                         bool need_label_cal) {
  Artifacts a;
  const bool depth = selected(cfg, Task::depth);
  const bool label = selected(cfg, Task::horizon_label);
  const bool width = depth && uses(strategies, Strategy::conformal_width);
  if (width || (depth && need_depth_cal)) {
    a.residuals = residuals_for(cfg, ds, split);
    a.inputs.regression = regression_calibration_from_json(read_artifact(cfg, "calibration_depth.json"));
  }
  if ((label && uses(strategies, Strategy::set_size)) || (label && need_label_cal)) {
    a.inputs.classification =
        classification_calibration_from_json(read_artifact(cfg, "calibration_label.json"));
  }
  a.inputs.mcd_runs = cfg.mcd_runs;
  return a;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    std::vector<std::string>& written, json extra = json::object()) {
  json doc = {{"command", command},
              {"version", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                            "." + std::to_string(EIGEN_MINOR_VERSION)},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed},
              {"config", config_to_json(cfg)},
              {"outputs", written}};
  doc["config"].erase("threads");
  doc["config"].erase("out_dir");
  for (auto& [k, v] : extra.items()) doc[k] = v;
  const std::string name = "manifest_" + command + ".json";
  io::write_file(artifact(cfg, name), doc.dump(2) + "\n");
}

std::vector<double> uncertainties(const std::vector<QueryUnit>& units) {
  std::vector<double> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(u.uncertainty);
  return out;
}

std::string number(double v) { return io::format_double(v); }

ChartSpec cdf_chart(const std::string& title, const std::string& x_label,
                    const std::vector<std::pair<std::string, CumulativeDistribution>>& series,
                    std::optional<double> marker) {
  ChartSpec chart;
  chart.title = title;
  chart.x_label = x_label;
  chart.y_label = "cumulative fraction";
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [name, cdf] : series) {
    ChartSeries s{name, {}, {}, true};
    s.x.push_back(cdf.values.front());
    s.y.push_back(0.0);
    for (std::size_t i = 0; i < cdf.values.size(); ++i) {
      s.x.push_back(cdf.values[i]);
      s.y.push_back(cdf.fractions[i]);
    }
    lo = first ? cdf.values.front() : std::min(lo, cdf.values.front());
    hi = first ? cdf.values.back() : std::max(hi, cdf.values.back());
    first = false;
    chart.series.push_back(std::move(s));
  }
  chart.x_min = std::min(lo, 0.0);
  chart.x_max = hi > chart.x_min ? hi : chart.x_min + 1.0;
  chart.vertical_marker = marker;
  return chart;
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig config_from_json(const json& doc, RunConfig cfg) {
  check_keys(doc,
             {"dataset", "format", "out_dir", "alpha", "tasks", "strategies", "budgets", "budget_step",
              "replications", "mcd_runs", "seed", "residuals", "svg", "threads", "split", "averaging",
              "aggregation", "threshold_budgets", "threshold_uncertainties", "synthetic", "training"},
             "run configuration");
  try {
    if (doc.contains("dataset")) cfg.dataset = doc["dataset"].get<std::string>();
    if (doc.contains("format")) cfg.format = doc["format"].get<std::string>();
    if (doc.contains("out_dir")) cfg.out_dir = doc["out_dir"].get<std::string>();
    if (doc.contains("alpha")) cfg.alpha = doc["alpha"].get<double>();
    if (doc.contains("tasks")) cfg.tasks = parse_tasks(doc["tasks"].get<std::vector<std::string>>());
    if (doc.contains("strategies")) {
      cfg.strategies = parse_strategies(doc["strategies"].get<std::vector<std::string>>());
    }
    if (doc.contains("budgets")) cfg.budgets = doc["budgets"].get<std::vector<double>>();
    if (doc.contains("budget_step")) cfg.budget_step = doc["budget_step"].get<double>();
    if (doc.contains("replications")) cfg.replications = doc["replications"].get<std::size_t>();
    if (doc.contains("mcd_runs")) cfg.mcd_runs = doc["mcd_runs"].get<std::size_t>();
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("residuals")) cfg.residuals = parse_residual_mode(doc["residuals"].get<std::string>());
    if (doc.contains("svg")) cfg.svg = doc["svg"].get<bool>();
    if (doc.contains("threads")) cfg.threads = doc["threads"].get<std::size_t>();
    if (doc.contains("split")) cfg.split = parse_split(doc["split"].get<std::string>());
    if (doc.contains("averaging")) cfg.averaging = parse_averaging(doc["averaging"].get<std::string>());
    if (doc.contains("aggregation")) cfg.aggregation = parse_aggregation(doc["aggregation"].get<std::string>());
    if (doc.contains("threshold_budgets")) {
      cfg.threshold_budgets = doc["threshold_budgets"].get<std::vector<double>>();
    }
    if (doc.contains("threshold_uncertainties")) {
      cfg.threshold_uncertainties =
          parse_strategies(doc["threshold_uncertainties"].get<std::vector<std::string>>());
    }
    if (doc.contains("synthetic")) synthetic_from_json(doc["synthetic"], cfg.synthetic);
    if (doc.contains("training")) training_from_json(doc["training"], cfg.training);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run configuration: ") + e.what());
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  return {{"dataset", cfg.dataset.generic_string()},
          {"format", cfg.format},
          {"out_dir", cfg.out_dir.generic_string()},
          {"alpha", cfg.alpha},
          {"tasks", names_of(cfg.tasks, [](Task t) { return to_string(t); })},
          {"strategies", names_of(cfg.strategies, [](Strategy s) { return to_string(s); })},
          {"budgets", cfg.budgets},
          {"budget_step", cfg.budget_step},
          {"replications", cfg.replications},
          {"mcd_runs", cfg.mcd_runs},
          {"seed", cfg.seed},
          {"residuals", to_string(cfg.residuals)},
          {"svg", cfg.svg},
          {"threads", cfg.threads},
          {"split", to_string(cfg.split)},
          {"averaging", cfg.averaging == Averaging::macro ? "macro" : "micro"},
          {"aggregation", aggregation_name(cfg.aggregation)},
          {"threshold_budgets", cfg.threshold_budgets},
          {"threshold_uncertainties",
           names_of(cfg.threshold_uncertainties, [](Strategy s) { return to_string(s); })},
          {"synthetic", synthetic_to_json(cfg.synthetic)},
          {"training", training_to_json(cfg.training)}};
}

std::string config_hash(const RunConfig& cfg) {
  auto doc = config_to_json(cfg);
  doc.erase("threads");
  doc.erase("out_dir");
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate_config(const RunConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (cfg.tasks.empty()) throw ConfigError("at least one task must be selected");
  if (cfg.strategies.empty()) throw ConfigError("at least one strategy must be selected");
  for (double b : cfg.budgets) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("budget fractions must lie in [0, 1]");
  }
  if (!std::is_sorted(cfg.budgets.begin(), cfg.budgets.end())) {
    throw ConfigError("budgets must be listed in ascending order");
  }
  if (cfg.replications == 0) throw ConfigError("replications must be positive");
  if (!(cfg.budget_step > 0.0 && cfg.budget_step <= 1.0)) throw ConfigError("budget step must lie in (0, 1]");
  for (double b : cfg.threshold_budgets) {
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("threshold budgets must lie in (0, 1]");
  }
  if (cfg.format != "auto") parse_format(cfg.format);
}

// ---------------------------------------------------------------------------
// Commands

GenerateSummary cmd_generate(const RunConfig& cfg) {
  validate_config(cfg);
  auto synthetic = cfg.synthetic;
  synthetic.seed = cfg.seed;
  const auto ds = generate_synthetic(synthetic);
  const auto format = cfg.format == "auto" ? detect_format(cfg.dataset) : parse_format(cfg.format);
  if (cfg.dataset.has_parent_path()) fs::create_directories(cfg.dataset.parent_path());
  save_dataset(ds, cfg.dataset, format);

  GenerateSummary summary;
  for (const auto& s : ds.samples) {
    ++summary.profiles[static_cast<std::size_t>(s.split)];
    summary.horizons += s.num_horizons;
  }
  log("generated " + std::to_string(ds.samples.size()) + " profiles (train " +
      std::to_string(summary.profiles[0]) + ", val " + std::to_string(summary.profiles[1]) +
      ", calib " + std::to_string(summary.profiles[2]) + ", test " +
      std::to_string(summary.profiles[3]) + "), " + std::to_string(summary.horizons) +
      " horizons -> " + cfg.dataset.string());
  std::vector<std::string> written{cfg.dataset.filename().string()};
  fs::create_directories(cfg.out_dir);
  write_manifest(cfg, "generate", written);
  return summary;
}

std::pair<RegressionCalibration, ClassificationCalibration> cmd_calibrate(const RunConfig& cfg) {
  validate_config(cfg);
  const auto ds = load(cfg);
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> written;
  std::pair<RegressionCalibration, ClassificationCalibration> out;

  if (selected(cfg, Task::depth)) {
    ResidualTable table;
    if (cfg.residuals == ResidualMode::fit) {
      auto training = cfg.training;
      training.seed = mix_seed(cfg.seed, 3);
      const auto data = residual_training_set(ds, Split::train);
      if (data.size() == 0) throw EmptyScores("train split has no units to fit the residual model");
      const auto validation = residual_training_set(ds, Split::val);
      const auto result = train_residual(data, training, &validation);
      log("residual model: loss " + number(result.loss_history.front()) + " -> " +
          number(result.loss_history[result.best_epoch]) + " (best epoch " +
          std::to_string(result.best_epoch) + ")");
      write_artifact(cfg, "residual_model.json", to_json(result.params) + "\n", written);
      table = predict_residual_table(result.params, ds, Split::calib);
    } else {
      table = residual_column_table(ds, Split::calib);
    }
    out.first = calibrate_regression(regression_scores(ds, Split::calib, table), cfg.alpha);
    write_artifact(cfg, "calibration_depth.json", to_json(out.first) + "\n", written);
    log("q_depths = " + number(out.first.q) + " over " + std::to_string(out.first.n) + " units");
  }
  if (selected(cfg, Task::horizon_label)) {
    out.second = calibrate_classification(classification_scores(ds, Split::calib), cfg.alpha);
    write_artifact(cfg, "calibration_label.json", to_json(out.second) + "\n", written);
    log("q_horizons = " + number(out.second.q) + " over " + std::to_string(out.second.n) + " units");
  }
  write_manifest(cfg, "calibrate", written);
  return out;
}

void cmd_predict(const RunConfig& cfg) {
  validate_config(cfg);
  const auto ds = load(cfg);
  auto art = load_artifacts(cfg, ds, cfg.split, cfg.strategies, true, true);
  art.inputs.residuals = art.residuals ? &*art.residuals : nullptr;
  art.inputs.seed = mix_seed(cfg.seed, 11);
  fs::create_directories(cfg.out_dir);

  // Uncertainty per (unit, strategy) and the concatenated rankings.
  std::map<UnitKey, std::map<Strategy, double>> scores;
  std::string rankings;
  for (Task task : cfg.tasks) {
    for (Strategy s : cfg.strategies) {
      if (!applies_to(s, task)) continue;
      auto ranked = rank(score_units(ds, cfg.split, task, s, art.inputs));
      for (const auto& u : ranked) scores[u.key()][s] = u.uncertainty;
      auto csv = rankings_csv(ranked);
      if (!rankings.empty()) csv.erase(0, csv.find('\n') + 1);
      rankings += csv;
    }
  }
  if (rankings.empty()) rankings = rankings_csv({});

  std::vector<std::string> header{"profile_id", "horizon_index", "task", "padded", "predicted",
                                  "truth", "residual", "lower", "upper", "set_members", "covered"};
  for (Strategy s : cfg.strategies) header.emplace_back(to_string(s));
  std::string out = io::join_csv(header) + "\n";

  auto strategy_cells = [&](const UnitKey& key, std::vector<std::string>& row) {
    const auto it = scores.find(key);
    for (Strategy s : cfg.strategies) {
      if (it == scores.end() || !it->second.count(s)) {
        row.emplace_back();
      } else {
        row.push_back(number(it->second.at(s)));
      }
    }
  };

  for (std::size_t i : ds.indices(cfg.split)) {
    const auto& sample = ds.samples[i];
    const auto* p = ds.find_prediction(sample.id);
    if (!p) throw MissingPrediction(sample.id);
    if (selected(cfg, Task::depth)) {
      const auto& u = art.residuals->at(sample.id);
      for (std::size_t t = 0; t < kMarkers; ++t) {
        const auto iv = predict_interval(p->pred_depths[t], u[t], *art.inputs.regression);
        std::vector<std::string> row{sample.id, std::to_string(t + 1), "depth",
                                     t < sample.num_horizons ? "0" : "1", number(p->pred_depths[t]),
                                     number(sample.true_depths[t]), number(u[t]), number(iv.lo),
                                     number(iv.hi), "", iv.contains(sample.true_depths[t]) ? "1" : "0"};
        strategy_cells({sample.id, t, Task::depth}, row);
        out += io::join_csv(row) + "\n";
      }
    }
    if (selected(cfg, Task::horizon_label)) {
      for (std::size_t t = 0; t < sample.num_horizons; ++t) {
        const auto set = predict_set(p->softmax[t], *art.inputs.classification);
        std::string members;
        for (int m : set.members) {
          if (!members.empty()) members += ' ';
          members += std::to_string(m);
        }
        std::vector<std::string> row{sample.id, std::to_string(t + 1), "horizon_label", "0",
                                     std::to_string(top_label(p->softmax[t])),
                                     std::to_string(sample.true_labels[t]), "", "", "", members,
                                     set.contains(sample.true_labels[t]) ? "1" : "0"};
        strategy_cells({sample.id, t, Task::horizon_label}, row);
        out += io::join_csv(row) + "\n";
      }
    }
  }
  std::vector<std::string> written;
  write_artifact(cfg, "predictions.csv", out, written);
  write_artifact(cfg, "rankings.csv", rankings, written);
  log("wrote predictions and rankings for split " + std::string(to_string(cfg.split)));
  write_manifest(cfg, "predict", written);
}

SweepResult cmd_simulate(const RunConfig& cfg) {
  validate_config(cfg);
  const auto ds = load(cfg);
  auto art = load_artifacts(cfg, ds, cfg.split, cfg.strategies, false, false);
  art.inputs.residuals = art.residuals ? &*art.residuals : nullptr;
  fs::create_directories(cfg.out_dir);

  BudgetSweepConfig sweep;
  if (cfg.budgets.empty()) {
    sweep.budgets = fraction_grid(cfg.budget_step);
  } else {
    for (double b : cfg.budgets) sweep.budgets.push_back(Budget::fraction(b));
  }
  sweep.strategies = cfg.strategies;
  sweep.tasks = cfg.tasks;
  sweep.random_replications = cfg.replications;
  sweep.mcd_runs = cfg.mcd_runs;
  sweep.seed = cfg.seed;
  sweep.averaging = cfg.averaging;
  sweep.profile_aggregation = cfg.aggregation;
  sweep.threads = cfg.threads;

  auto result = run_sweep(ds, cfg.split, art.inputs, sweep);
  std::vector<std::string> written;
  write_artifact(cfg, "sweep.csv", sweep_csv(result), written);

  if (cfg.svg) {
    std::set<std::pair<Task, std::string>> panels;
    for (const auto& row : result.rows) panels.insert({row.task, row.metric});
    for (const auto& [task, metric] : panels) {
      ChartSpec chart;
      chart.title = std::string(to_string(task)) + " " + metric + " vs. label budget";
      chart.x_label = "budget (fraction of query pool)";
      chart.y_label = metric;
      double lo = 1.0;
      for (Strategy s : cfg.strategies) {
        if (!applies_to(s, task)) continue;
        ChartSeries series{std::string(to_string(s)), {}, {}, false};
        for (const auto& row : result.rows) {
          if (row.task != task || row.strategy != s || row.metric != metric) continue;
          series.x.push_back(row.budget_fraction);
          series.y.push_back(row.mean);
          lo = std::min(lo, row.mean);
        }
        chart.series.push_back(std::move(series));
      }
      chart.y_min = std::floor(lo * 10.0) / 10.0;
      write_artifact(cfg, "sweep_" + std::string(to_string(task)) + "_" + metric + ".svg",
                     render_chart(chart), written);
    }
  }
  json pools = json::object();
  for (const auto& [task, size] : result.pool_sizes) pools[std::string(to_string(task))] = size;
  log("sweep: " + std::to_string(result.rows.size()) + " rows over split " +
      std::string(to_string(cfg.split)));
  write_manifest(cfg, "simulate", written, {{"pool_sizes", pools}});
  return result;
}

json cmd_diagnose(const RunConfig& cfg) {
  validate_config(cfg);
  const auto ds = load(cfg);
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> written;
  json report = json::object();
  const Split test = cfg.split;
  const auto targets = default_coverage_targets();
  std::vector<std::pair<std::string, ThresholdResult>> thresholds;
  std::map<Strategy, std::pair<std::vector<double>, std::vector<double>>> per_split;
  std::optional<ResidualTable> calib_residuals, test_residuals;

  ScoringInputs calib_inputs, test_inputs;
  calib_inputs.mcd_runs = test_inputs.mcd_runs = cfg.mcd_runs;

  if (selected(cfg, Task::horizon_label)) {
    const auto points = confidence_points(ds, test);
    const auto reliability = calibration_curve(points);
    write_artifact(cfg, "reliability.csv", calibration_curve_csv(reliability), written);

    const auto calib_scores = classification_scores(ds, Split::calib);
    std::vector<ProbabilityRow> rows;
    std::vector<int> labels;
    for (std::size_t i : ds.indices(test)) {
      const auto& s = ds.samples[i];
      const auto* p = ds.find_prediction(s.id);
      if (!p) throw MissingPrediction(s.id);
      for (std::size_t t = 0; t < s.num_horizons; ++t) {
        rows.push_back(p->softmax[t]);
        labels.push_back(s.true_labels[t]);
      }
    }
    const auto coverage = coverage_curve(calib_scores, rows, labels, targets);
    write_artifact(cfg, "coverage_label.csv", coverage_curve_csv(coverage), written);
    report["reliability_mae"] = reliability.mae;
    report["coverage_mae_label"] = coverage.mae;

    calib_inputs.classification = test_inputs.classification =
        calibrate_classification(calib_scores, cfg.alpha);

    if (cfg.svg) {
      ChartSpec chart;
      chart.title = "Reliability of the pointwise classifier";
      chart.x_label = "mean max-softmax probability";
      chart.y_label = "fraction correct";
      chart.diagonal = true;
      ChartSeries s{"pointwise", {}, {}, false};
      for (const auto& b : reliability.bins) {
        if (b.count == 0) continue;
        s.x.push_back(b.mean_confidence);
        s.y.push_back(b.accuracy);
      }
      chart.series.push_back(std::move(s));
      write_artifact(cfg, "reliability.svg", render_chart(chart), written);

      ChartSpec cov;
      cov.title = "Label-set coverage vs. target";
      cov.x_label = "target coverage";
      cov.y_label = "empirical coverage";
      cov.diagonal = true;
      ChartSeries c{"conformal", {}, {}, false};
      for (const auto& l : coverage.levels) {
        c.x.push_back(l.target);
        c.y.push_back(l.coverage);
      }
      cov.series.push_back(std::move(c));
      write_artifact(cfg, "coverage_label.svg", render_chart(cov), written);
    }
  }

  if (selected(cfg, Task::depth)) {
    calib_residuals = residuals_for(cfg, ds, Split::calib);
    test_residuals = residuals_for(cfg, ds, test);
    const auto calib_scores = regression_scores(ds, Split::calib, *calib_residuals);
    const auto units = collect_depth_units(ds, test, *test_residuals);
    const auto coverage = coverage_curve(calib_scores, units, targets);
    write_artifact(cfg, "coverage_depth.csv", coverage_curve_csv(coverage), written);
    report["coverage_mae_depth"] = coverage.mae;
    calib_inputs.residuals = &*calib_residuals;
    test_inputs.residuals = &*test_residuals;
    calib_inputs.regression = test_inputs.regression = calibrate_regression(calib_scores, cfg.alpha);
    if (cfg.svg) {
      ChartSpec cov;
      cov.title = "Depth-interval coverage vs. target";
      cov.x_label = "target coverage";
      cov.y_label = "empirical coverage";
      cov.diagonal = true;
      ChartSeries c{"conformal", {}, {}, false};
      for (const auto& l : coverage.levels) {
        c.x.push_back(l.target);
        c.y.push_back(l.coverage);
      }
      cov.series.push_back(std::move(c));
      write_artifact(cfg, "coverage_depth.svg", render_chart(cov), written);
    }
  }

  json ks = json::object();
  for (Strategy s : cfg.threshold_uncertainties) {
    const Task task = task_of(s);
    if (!selected(cfg, task)) continue;
    const auto calib_u = uncertainties(score_units(ds, Split::calib, task, s, calib_inputs));
    const auto test_u = uncertainties(score_units(ds, test, task, s, test_inputs));
    std::vector<std::pair<std::string, CumulativeDistribution>> series{
        {"calib", cumulative_distribution(calib_u)},
        {std::string(to_string(test)), cumulative_distribution(test_u)}};
    const std::string name(to_string(s));
    write_artifact(cfg, "cdf_" + name + ".csv", cdf_csv(series), written);
    ks[name] = ks_distance(series[0].second, series[1].second);
    std::optional<double> marker;
    for (double budget : cfg.threshold_budgets) {
      auto r = infer_threshold(calib_u, budget);
      if (budget == 0.1 || !marker) marker = r.threshold;
      thresholds.emplace_back(name, r);
    }
    if (cfg.svg) {
      write_artifact(cfg, "cdf_" + name + ".svg",
                     render_chart(cdf_chart("Cumulative distribution of " + name, name, series, marker)),
                     written);
    }
  }
  report["ks_distance"] = ks;
  write_artifact(cfg, "thresholds.csv", thresholds_csv(thresholds), written);

  if (selected(cfg, Task::horizon_label)) {
    const auto ent = uncertainties(score_units(ds, test, Task::horizon_label, Strategy::entropy, test_inputs));
    const auto size = uncertainties(score_units(ds, test, Task::horizon_label, Strategy::set_size, test_inputs));
    if (ent.size() >= 2) report["spearman_entropy_set_size"] = spearman_rank_correlation(ent, size);
  }
  json rows = json::array();
  for (const auto& [name, r] : thresholds) {
    rows.push_back({{"uncertainty", name},
                    {"budget", r.budget},
                    {"threshold", r.threshold},
                    {"realized_fraction", r.realized_fraction},
                    {"deferred", r.deferred}});
  }
  report["thresholds"] = rows;
  write_artifact(cfg, "diagnostics.json", report.dump(2) + "\n", written);
  log("diagnostics written to " + cfg.out_dir.string());
  write_manifest(cfg, "diagnose", written);
  return report;
}

void cmd_threshold(const RunConfig& cfg) {
  validate_config(cfg);
  const auto ds = load(cfg);
  fs::create_directories(cfg.out_dir);
  auto calib = load_artifacts(cfg, ds, Split::calib, cfg.threshold_uncertainties, false, false);
  calib.inputs.residuals = calib.residuals ? &*calib.residuals : nullptr;
  auto target = load_artifacts(cfg, ds, cfg.split, cfg.threshold_uncertainties, false, false);
  target.inputs.residuals = target.residuals ? &*target.residuals : nullptr;

  std::string out = "uncertainty,budget,threshold,calib_fraction,split_fraction,deferred\n";
  for (Strategy s : cfg.threshold_uncertainties) {
    const Task task = task_of(s);
    if (!selected(cfg, task)) continue;
    const auto calib_u = uncertainties(score_units(ds, Split::calib, task, s, calib.inputs));
    const auto split_u = uncertainties(score_units(ds, cfg.split, task, s, target.inputs));
    for (double budget : cfg.threshold_budgets) {
      const auto r = infer_threshold(calib_u, budget);
      const auto deferred = defer(split_u, r.threshold).size();
      const double fraction =
          split_u.empty() ? 0.0 : static_cast<double>(deferred) / static_cast<double>(split_u.size());
      out += io::join_csv({std::string(to_string(s)), number(budget), number(r.threshold),
                           number(r.realized_fraction), number(fraction), std::to_string(deferred)});
      out += '\n';
      log(std::string(to_string(s)) + " budget " + number(budget) + ": defer at >= " +
          number(r.threshold) + " (" + number(fraction) + " of " + std::string(to_string(cfg.split)) +
          ")");
    }
  }
  std::vector<std::string> written;
  write_artifact(cfg, "deferral.csv", out, written);
  write_manifest(cfg, "threshold", written);
}

// ---------------------------------------------------------------------------

int exit_code_for(const std::exception& error) {
  if (const auto* e = dynamic_cast<const Error*>(&error)) {
    switch (e->kind()) {
      case ErrorKind::validation: return 1;
      case ErrorKind::io: return 2;
      case ErrorKind::numerical: return 3;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&error)) return 2;
  return 1;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Conformal uncertainty triage for soil-profile predictions"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

  std::string dataset, format, out_dir, residuals, split, averaging, aggregation;
  double alpha = 0, budget_step = 0, heteroscedasticity = 0, temperature = 0, learning_rate = 0;
  std::vector<std::string> tasks, strategies, threshold_uncertainties;
  std::vector<double> budgets, threshold_budgets;
  std::size_t replications = 0, mcd_runs = 0, threads = 0, profiles = 0, classes = 0, features = 0,
              epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  bool svg = false;

  std::vector<std::function<void(RunConfig&)>> overrides;
  auto bind = [&](CLI::Option* opt, std::function<void(RunConfig&)> apply) {
    overrides.push_back([opt, apply](RunConfig& cfg) {
      if (opt->count() > 0) apply(cfg);
    });
  };

  bind(app.add_option("--dataset", dataset, "dataset path (.jsonl file or csv directory)"),
       [&](RunConfig& c) { c.dataset = dataset; });
  bind(app.add_option("--format", format, "auto | jsonl | csv"), [&](RunConfig& c) { c.format = format; });
  bind(app.add_option("--out", out_dir, "artifact directory"), [&](RunConfig& c) { c.out_dir = out_dir; });
  bind(app.add_option("--alpha", alpha, "miscoverage level"), [&](RunConfig& c) { c.alpha = alpha; });
  bind(app.add_option("--tasks", tasks, "depth,horizon_label")->delimiter(','),
       [&](RunConfig& c) { c.tasks = parse_tasks(tasks); });
  bind(app.add_option("--strategies", strategies, "ranking strategies")->delimiter(','),
       [&](RunConfig& c) { c.strategies = parse_strategies(strategies); });
  bind(app.add_option("--budgets", budgets, "budget fractions")->delimiter(','),
       [&](RunConfig& c) { c.budgets = budgets; });
  bind(app.add_option("--budget-step", budget_step, "grid step when no budgets are listed"),
       [&](RunConfig& c) { c.budget_step = budget_step; });
  bind(app.add_option("--replications", replications, "random-strategy replications"),
       [&](RunConfig& c) { c.replications = replications; });
  bind(app.add_option("--mcd-runs", mcd_runs, "MCD replicates used for mcd_std"),
       [&](RunConfig& c) { c.mcd_runs = mcd_runs; });
  bind(app.add_option("--seed", seed, "master seed"), [&](RunConfig& c) { c.seed = seed; });
  bind(app.add_option("--residuals", residuals, "fit | column"),
       [&](RunConfig& c) { c.residuals = parse_residual_mode(residuals); });
  bind(app.add_flag("--svg", svg, "also emit SVG charts"), [&](RunConfig& c) { c.svg = svg; });
  bind(app.add_option("--threads", threads, "worker threads (0 = auto)"),
       [&](RunConfig& c) { c.threads = threads; });
  bind(app.add_option("--split", split, "evaluation split"),
       [&](RunConfig& c) { c.split = parse_split(split); });
  bind(app.add_option("--averaging", averaging, "macro | micro"),
       [&](RunConfig& c) { c.averaging = parse_averaging(averaging); });
  bind(app.add_option("--aggregation", aggregation, "none | max | mean (profile-level budgets)"),
       [&](RunConfig& c) { c.aggregation = parse_aggregation(aggregation); });
  bind(app.add_option("--threshold-budgets", threshold_budgets, "relative deferral budgets")->delimiter(','),
       [&](RunConfig& c) { c.threshold_budgets = threshold_budgets; });
  bind(app.add_option("--threshold-uncertainties", threshold_uncertainties,
                      "uncertainties used for thresholds")
           ->delimiter(','),
       [&](RunConfig& c) { c.threshold_uncertainties = parse_strategies(threshold_uncertainties); });
  bind(app.add_option("--profiles", profiles, "synthetic profile count"),
       [&](RunConfig& c) { c.synthetic.n_profiles = profiles; });
  bind(app.add_option("--classes", classes, "synthetic class count"),
       [&](RunConfig& c) { c.synthetic.num_classes = classes; });
  bind(app.add_option("--features", features, "synthetic feature dimension"),
       [&](RunConfig& c) { c.synthetic.feature_dim = features; });
  bind(app.add_option("--heteroscedasticity", heteroscedasticity, "synthetic depth-noise dependence"),
       [&](RunConfig& c) { c.synthetic.heteroscedasticity = heteroscedasticity; });
  bind(app.add_option("--temperature", temperature, "synthetic softmax temperature"),
       [&](RunConfig& c) { c.synthetic.miscalibration_temperature = temperature; });
  bind(app.add_option("--epochs", epochs, "residual model epochs"),
       [&](RunConfig& c) { c.training.epochs = epochs; });
  bind(app.add_option("--learning-rate", learning_rate, "residual model learning rate"),
       [&](RunConfig& c) { c.training.learning_rate = learning_rate; });
  bind(app.add_option("--batch-size", batch_size, "residual model batch size"),
       [&](RunConfig& c) { c.training.batch_size = batch_size; });

  std::string command;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "write a synthetic dataset"},
      {"calibrate", "fit residuals and calibrate both tasks"},
      {"predict", "write intervals, label sets and rankings"},
      {"simulate", "run the expert-in-the-loop budget sweep"},
      {"diagnose", "reliability, coverage, CDF and threshold diagnostics"},
      {"threshold", "infer deferral thresholds and apply them"}};
  for (const auto& [name, help] : commands) {
    app.add_subcommand(name, help)->callback([&command, n = name] { command = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      json doc;
      try {
        doc = json::parse(io::read_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError(std::string("cannot parse ") + config_path + ": " + e.what());
      }
      cfg = config_from_json(doc);
    }
    for (const auto& apply : overrides) apply(cfg);

    if (command == "generate") {
      cmd_generate(cfg);
    } else if (command == "calibrate") {
      cmd_calibrate(cfg);
    } else if (command == "predict") {
      cmd_predict(cfg);
    } else if (command == "simulate") {
      cmd_simulate(cfg);
    } else if (command == "diagnose") {
      cmd_diagnose(cfg);
    } else if (command == "threshold") {
      cmd_threshold(cfg);
    }
    return 0;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return exit_code_for(e);
  }
}

}  // namespace conformal_triage::cli
