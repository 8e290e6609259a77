#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace conformal_triage {

/// Fixed length of every depth-marker list (real markers followed by stop tokens).
inline constexpr std::size_t kMarkers = 8;
/// Padding sentinel for depth lists. Compared exactly, never with a tolerance.
inline constexpr double kStopToken = 1.0;
inline constexpr std::size_t kMinHorizons = 2;
inline constexpr std::size_t kMaxHorizons = kMarkers;
/// Softmax rows must sum to one within this tolerance on ingestion.
inline constexpr double kSoftmaxTolerance = 1e-6;

using DepthVector = std::array<double, kMarkers>;
using FeatureVector = std::vector<double>;
using ProbabilityRow = std::vector<double>;

enum class Split { train, val, calib, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

/// Ground truth for one profile. Class labels are 1-based, in [1, H].
struct ProfileSample {
  std::string id;
  std::size_t num_horizons = 0;
  DepthVector true_depths{};
  std::vector<int> true_labels;
  std::vector<FeatureVector> features;
  Split split = Split::train;

  bool operator==(const ProfileSample&) const = default;
};

/// Base-model outputs for one profile.
struct PredictionBundle {
  std::string id;
  DepthVector pred_depths{};
  /// R stochastic forward passes, one full marker list each; empty when not supplied.
  std::vector<DepthVector> mcd_depths;
  /// One row of H class probabilities per real horizon.
  std::vector<ProbabilityRow> softmax;
  /// Precomputed residual estimates u_t, one per marker position.
  std::optional<DepthVector> residuals;

  bool operator==(const PredictionBundle&) const = default;
};

struct Dataset {
  std::vector<ProfileSample> samples;
  std::map<std::string, PredictionBundle, std::less<>> predictions;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  const PredictionBundle* find_prediction(std::string_view id) const;
  /// Positions in `samples` belonging to `split`, in storage order.
  std::vector<std::size_t> indices(Split split) const;

  bool operator==(const Dataset&) const = default;
};

// Validation. Each throws InvariantError naming the offending profile.
void validate_sample(const ProfileSample& sample, std::size_t num_classes, std::size_t feature_dim);
void validate_prediction(const PredictionBundle& prediction, const ProfileSample& sample,
                         std::size_t num_classes);
void validate_dataset(const Dataset& dataset);

enum class DataFormat { json_lines, csv_pair };

/// `.jsonl`/`.json` files are JSON-lines; anything else is treated as a csv-pair directory.
DataFormat detect_format(const std::filesystem::path& path);
DataFormat parse_format(std::string_view name);

/// csv-pair datasets live in a directory holding samples.csv and predictions.csv.
Dataset load_dataset(const std::filesystem::path& path, DataFormat format);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path, DataFormat format);

/// One JSON object per profile, predictions inline.
std::string to_json_line(const ProfileSample& sample, const PredictionBundle* prediction);

using SplitRatios = std::array<double, 4>;
inline constexpr SplitRatios kDefaultSplitRatios{0.6, 0.2, 0.1, 0.1};

/// Largest-remainder apportionment of n items over (train, val, calib, test).
std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitRatios& ratios);

/// Returns a copy with every sample tagged by a seeded shuffle followed by split_sizes.
Dataset split_assign(Dataset dataset, const SplitRatios& ratios, std::uint64_t seed);

/// Knobs for the synthetic profile generator.
struct SyntheticConfig {
  std::size_t n_profiles = 1000;
  std::size_t num_classes = 99;
  std::size_t feature_dim = 16;
  /// Strength of the dependence of depth noise on feature coordinate kDifficultyFeature.
  double heteroscedasticity = 1.0;
  /// Softmax logits are divided by this; < 1 is overconfident, > 1 underconfident.
  double miscalibration_temperature = 1.0;
  /// Replicates per profile in mcd_depths; 0 omits them.
  std::size_t mcd_runs = 50;
  SplitRatios split_ratios = kDefaultSplitRatios;
  std::uint64_t seed = 0;

  double base_depth_noise = 0.005;
  /// Peak class probability is drawn uniformly from this range before tempering.
  double min_peak_probability = 0.05;
  double max_peak_probability = 0.99;
};

/// Feature coordinate that drives heteroscedastic depth noise in generated data.
inline constexpr std::size_t kDifficultyFeature = 0;

Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace conformal_triage
