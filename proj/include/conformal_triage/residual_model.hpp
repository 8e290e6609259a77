#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"

namespace conformal_triage {

/// Fully connected regressor: ReLU between hidden layers, softplus(.) + epsilon on the
/// scalar output so the estimate is always strictly positive.
struct MlpParams {
  std::vector<std::size_t> layer_dims;   // {F, h1, h2, 1}
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is layer_dims[l+1] x layer_dims[l]
  std::vector<Eigen::VectorXd> biases;
  double output_epsilon = 1e-6;

  std::size_t input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
  std::size_t parameter_count() const;
  bool identical(const MlpParams& other) const;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::vector<std::size_t> hidden{64, 64};
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Column-per-unit inputs (F x N) with absolute-error targets.
struct TrainingSet {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

struct TrainResult {
  MlpParams params;
  /// Full-batch MSE before training (index 0) and after every epoch.
  std::vector<double> loss_history;
  /// Validation MSE at the same points; empty without a validation set.
  std::vector<double> validation_history;
  /// Epoch whose parameters were returned (0 = initialization).
  std::size_t best_epoch = 0;
};

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double loss = 0.0;
};

/// Glorot-uniform weights, zero biases.
MlpParams init_mlp(std::vector<std::size_t> layer_dims, std::uint64_t seed);

/// Minibatch training on mean squared error. Deterministic for a fixed seed. Returns the
/// parameters with the lowest full-batch loss seen, or with a non-empty `validation` set the
/// lowest validation loss among epochs whose training loss is at most the initial one. Either
/// way the returned training loss never exceeds the initial one. Throws NumericalDivergence on
/// a non-finite loss.
TrainResult train_residual(const TrainingSet& data, const TrainConfig& config,
                           const TrainingSet* validation = nullptr);

double predict_residual(const MlpParams& params, std::span<const double> features);
Eigen::VectorXd predict_residuals(const MlpParams& params, const Eigen::MatrixXd& inputs);

double mean_squared_error(const MlpParams& params, const TrainingSet& data);
MlpGradients loss_gradients(const MlpParams& params, const TrainingSet& data);

/// Largest relative difference between backprop and central finite differences over every
/// parameter: |a - n| / max(|a|, |n|, floor).
double gradient_check(const MlpParams& params, const TrainingSet& batch, double step = 1e-5,
                      double floor = 1e-7);

/// Real-horizon units of `split` with targets |d_hat - d|.
TrainingSet residual_training_set(const Dataset& dataset, Split split);

/// u_t for every marker of every profile in `split`. Padded positions reuse the feature
/// vector of the profile's last real horizon.
ResidualTable predict_residual_table(const MlpParams& params, const Dataset& dataset, Split split);

/// Precomputed residuals shipped with the predictions. Throws MissingArtifact if absent.
ResidualTable residual_column_table(const Dataset& dataset, Split split);

std::string to_json(const MlpParams& params);
MlpParams mlp_from_json(std::string_view text);

}  // namespace conformal_triage
