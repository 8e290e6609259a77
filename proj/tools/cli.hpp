#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"
#include "conformal_triage/hil.hpp"
#include "conformal_triage/ranking.hpp"
#include "conformal_triage/residual_model.hpp"

namespace conformal_triage::cli {

enum class ResidualMode { fit, column };

/// Everything a subcommand needs. Loaded from a JSON file, then overridden by flags.
struct RunConfig {
  std::filesystem::path dataset = "dataset.jsonl";
  std::string format = "auto";  // auto | jsonl | csv
  std::filesystem::path out_dir = "artifacts";
  double alpha = 0.1;
  std::vector<Task> tasks{Task::depth, Task::horizon_label};
  std::vector<Strategy> strategies{Strategy::conformal_width, Strategy::mcd_std, Strategy::entropy,
                                   Strategy::set_size, Strategy::random};
  /// Budget fractions; empty means the grid 0, budget_step, ..., 1.
  std::vector<double> budgets;
  double budget_step = 0.05;
  std::size_t replications = 100;
  std::size_t mcd_runs = 50;
  std::uint64_t seed = 0;
  ResidualMode residuals = ResidualMode::fit;
  bool svg = false;
  std::size_t threads = 0;
  Split split = Split::test;
  Averaging averaging = Averaging::macro;
  std::optional<Aggregation> aggregation;
  std::vector<double> threshold_budgets{0.05, 0.1, 0.25};
  std::vector<Strategy> threshold_uncertainties{Strategy::set_size, Strategy::conformal_width};
  SyntheticConfig synthetic;
  TrainConfig training;
};

/// Applies the keys present in `doc` on top of `base`. Unknown keys raise ConfigError.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});
nlohmann::json config_to_json(const RunConfig& cfg);
/// FNV-1a of the canonical config JSON, thread count and output directory excluded.
std::string config_hash(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

struct GenerateSummary {
  std::array<std::size_t, 4> profiles{};
  std::size_t horizons = 0;
};

GenerateSummary cmd_generate(const RunConfig& cfg);
/// Writes calibration_depth.json, calibration_label.json and, in fit mode, residual_model.json.
std::pair<RegressionCalibration, ClassificationCalibration> cmd_calibrate(const RunConfig& cfg);
/// Writes predictions.csv and rankings.csv for cfg.split.
void cmd_predict(const RunConfig& cfg);
/// Writes sweep.csv, manifest_simulate.json and optional SVGs.
SweepResult cmd_simulate(const RunConfig& cfg);
/// Writes the reliability, coverage, CDF and threshold tables plus diagnostics.json.
nlohmann::json cmd_diagnose(const RunConfig& cfg);
/// Infers thresholds on the calibration split and applies them to cfg.split.
void cmd_threshold(const RunConfig& cfg);

/// 0 success, 1 validation or configuration, 2 I/O, 3 numerical.
int exit_code_for(const std::exception& error);

/// Full command-line entry point; never throws.
int run(int argc, const char* const* argv);

}  // namespace conformal_triage::cli
