#include "conformal_triage/residual_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "conformal_triage/errors.hpp"

namespace conformal_triage {

using nlohmann::json;

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_shape(const MlpParams& p) {
  const auto layers = p.layer_dims.size();
  if (layers < 2 || p.layer_dims.back() != 1) {
    throw DimensionMismatch("network must end in a single output");
  }
  if (p.weights.size() != layers - 1 || p.biases.size() != layers - 1) {
    throw DimensionMismatch("layer count does not match layer_dims");
  }
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    if (static_cast<std::size_t>(p.weights[l].rows()) != p.layer_dims[l + 1] ||
        static_cast<std::size_t>(p.weights[l].cols()) != p.layer_dims[l] ||
        static_cast<std::size_t>(p.biases[l].size()) != p.layer_dims[l + 1]) {
      throw DimensionMismatch("layer " + std::to_string(l) + " does not chain");
    }
  }
}

// Pre-activations of every layer for a column batch.
struct Forward {
  std::vector<Eigen::MatrixXd> pre;   // z_l
  std::vector<Eigen::MatrixXd> post;  // a_l, post[0] = inputs
  Eigen::RowVectorXd output;          // softplus(z_L) + eps
};

Forward forward(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != p.input_dim()) {
    throw DimensionMismatch("expected " + std::to_string(p.input_dim()) + " features, got " +
                            std::to_string(x.rows()));
  }
  Forward f;
  f.post.push_back(x);
  const auto layers = p.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = (p.weights[l] * f.post.back()).colwise() + p.biases[l];
    f.pre.push_back(z);
    if (l + 1 < layers) f.post.push_back(z.cwiseMax(0.0));
  }
  const auto& z = f.pre.back();
  f.output.resize(z.cols());
  for (Eigen::Index i = 0; i < z.cols(); ++i) f.output(i) = softplus(z(0, i)) + p.output_epsilon;
  return f;
}

MlpGradients backward(const MlpParams& p, const Forward& f, const Eigen::VectorXd& targets) {
  const auto layers = p.weights.size();
  const double batch = static_cast<double>(targets.size());
  MlpGradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);

  Eigen::RowVectorXd diff = f.output - targets.transpose();
  g.loss = diff.squaredNorm() / batch;

  Eigen::MatrixXd delta(1, diff.size());
  for (Eigen::Index i = 0; i < diff.size(); ++i) {
    delta(0, i) = 2.0 * diff(i) / batch * sigmoid(f.pre.back()(0, i));
  }
  for (std::size_t l = layers; l-- > 0;) {
    g.weights[l] = delta * f.post[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = p.weights[l].transpose() * delta;
      delta = back.cwiseProduct((f.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

// Flat view over every scalar parameter, for finite differences.
std::vector<double*> parameter_slots(MlpParams& p) {
  std::vector<double*> slots;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) slots.push_back(p.weights[l].data() + i);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) slots.push_back(p.biases[l].data() + i);
  }
  return slots;
}

std::vector<double> flatten(const MlpGradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.insert(out.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
    out.insert(out.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
  }
  return out;
}

}  // namespace

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

bool MlpParams::identical(const MlpParams& o) const {
  if (layer_dims != o.layer_dims || output_epsilon != o.output_epsilon ||
      weights.size() != o.weights.size() || biases.size() != o.biases.size()) {
    return false;
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols() ||
        weights[l] != o.weights[l] || biases[l].size() != o.biases[l].size() ||
        biases[l] != o.biases[l]) {
      return false;
    }
  }
  return true;
}

MlpParams init_mlp(std::vector<std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2 || dims.back() != 1 ||
      std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; })) {
    throw ConfigError("layer_dims must be positive and end in 1");
  }
  MlpParams p;
  p.layer_dims = std::move(dims);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
    const auto fan_in = p.layer_dims[l], fan_out = p.layer_dims[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> init(-a, a);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = init(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out)));
  }
  return p;
}

Eigen::VectorXd predict_residuals(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  check_shape(params);
  return forward(params, inputs).output.transpose();
}

double predict_residual(const MlpParams& params, std::span<const double> features) {
  Eigen::Map<const Eigen::VectorXd> x(features.data(), static_cast<Eigen::Index>(features.size()));
  return predict_residuals(params, Eigen::MatrixXd(x))(0);
}

double mean_squared_error(const MlpParams& params, const TrainingSet& data) {
  if (data.size() == 0) return 0.0;
  auto out = predict_residuals(params, data.inputs);
  return (out - data.targets).squaredNorm() / static_cast<double>(data.size());
}

MlpGradients loss_gradients(const MlpParams& params, const TrainingSet& data) {
  check_shape(params);
  return backward(params, forward(params, data.inputs), data.targets);
}

TrainResult train_residual(const TrainingSet& data, const TrainConfig& cfg,
                           const TrainingSet* validation) {
  if (data.size() == 0) throw ConfigError("residual training needs at least one unit");
  if (static_cast<std::size_t>(data.targets.size()) != data.size()) {
    throw DimensionMismatch("one target per training unit required");
  }
  if ((data.targets.array() < 0.0).any()) throw ConfigError("residual targets must be >= 0");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size == 0) {
    throw ConfigError("learning_rate and batch_size must be positive");
  }
  if (validation && validation->size() == 0) validation = nullptr;
  if (validation && validation->inputs.rows() != data.inputs.rows()) {
    throw DimensionMismatch("validation features differ from training features");
  }

  std::vector<std::size_t> dims{static_cast<std::size_t>(data.inputs.rows())};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);

  TrainResult result;
  MlpParams params = init_mlp(dims, cfg.seed);
  result.params = params;
  result.loss_history.push_back(mean_squared_error(params, data));
  const double initial = result.loss_history.front();
  if (!std::isfinite(initial)) throw NumericalDivergence(0);
  if (validation) result.validation_history.push_back(mean_squared_error(params, *validation));
  double best = validation ? result.validation_history.front() : initial;

  const auto layers = params.weights.size();
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  for (std::size_t l = 0; l < layers; ++l) {
    m_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    v_w.push_back(m_w.back());
    m_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
    v_b.push_back(m_b.back());
  }

  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<Eigen::Index> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      Eigen::MatrixXd xb = data.inputs(Eigen::all, idx);
      Eigen::VectorXd yb = data.targets(idx);
      auto g = backward(params, forward(params, xb), yb);
      if (!std::isfinite(g.loss)) throw NumericalDivergence(epoch);

      ++step;
      if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t l = 0; l < layers; ++l) {
          params.weights[l] -= cfg.learning_rate * g.weights[l];
          params.biases[l] -= cfg.learning_rate * g.biases[l];
        }
        continue;
      }
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto adam = [&](auto& param, auto& m, auto& v, const auto& grad) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        param.array() -= cfg.learning_rate * (m.array() / c1) /
                         ((v.array() / c2).sqrt() + cfg.epsilon);
      };
      for (std::size_t l = 0; l < layers; ++l) {
        adam(params.weights[l], m_w[l], v_w[l], g.weights[l]);
        adam(params.biases[l], m_b[l], v_b[l], g.biases[l]);
      }
    }
    const double loss = mean_squared_error(params, data);
    if (!std::isfinite(loss)) throw NumericalDivergence(epoch);
    result.loss_history.push_back(loss);
    double score = loss;
    if (validation) {
      score = mean_squared_error(params, *validation);
      result.validation_history.push_back(score);
      if (!(loss <= initial)) continue;
    }
    if (score < best) {
      best = score;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

double gradient_check(const MlpParams& params, const TrainingSet& batch, double step,
                      double floor) {
  if (batch.size() == 0) throw ConfigError("gradient check needs a non-empty batch");
  const auto analytic = flatten(loss_gradients(params, batch));
  MlpParams probe = params;
  auto slots = parameter_slots(probe);
  double worst = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + step;
    const double up = mean_squared_error(probe, batch);
    *slots[i] = saved - step;
    const double down = mean_squared_error(probe, batch);
    *slots[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

TrainingSet residual_training_set(const Dataset& ds, Split split) {
  std::vector<const FeatureVector*> rows;
  std::vector<double> targets;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      rows.push_back(&s.features[t]);
      targets.push_back(std::abs(p->pred_depths[t] - s.true_depths[t]));
    }
  }
  TrainingSet set;
  set.inputs.resize(static_cast<Eigen::Index>(ds.feature_dim), static_cast<Eigen::Index>(rows.size()));
  set.targets = Eigen::Map<Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    for (std::size_t f = 0; f < ds.feature_dim; ++f) {
      set.inputs(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c)) = (*rows[c])[f];
    }
  }
  return set;
}

ResidualTable predict_residual_table(const MlpParams& params, const Dataset& ds, Split split) {
  check_shape(params);
  if (params.input_dim() != ds.feature_dim) {
    throw DimensionMismatch("residual model expects " + std::to_string(params.input_dim()) +
                            " features, dataset has " + std::to_string(ds.feature_dim));
  }
  ResidualTable table;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.feature_dim), static_cast<Eigen::Index>(kMarkers));
    for (std::size_t t = 0; t < kMarkers; ++t) {
      const auto& f = s.features[std::min(t, s.num_horizons - 1)];
      for (std::size_t j = 0; j < ds.feature_dim; ++j) {
        x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = f[j];
      }
    }
    auto u = forward(params, x).output;
    DepthVector row{};
    for (std::size_t t = 0; t < kMarkers; ++t) row[t] = u(static_cast<Eigen::Index>(t));
    table.emplace(s.id, row);
  }
  return table;
}

ResidualTable residual_column_table(const Dataset& ds, Split split) {
  ResidualTable table;
  for (std::size_t i : ds.indices(split)) {
    const auto& s = ds.samples[i];
    const auto* p = ds.find_prediction(s.id);
    if (!p) throw MissingPrediction(s.id);
    if (!p->residuals) {
      throw MissingArtifact("profile '" + s.id + "' has no precomputed residuals column");
    }
    table.emplace(s.id, *p->residuals);
  }
  return table;
}

std::string to_json(const MlpParams& p) {
  json doc;
  doc["layer_dims"] = p.layer_dims;
  doc["output_epsilon"] = p.output_epsilon;
  json weights = json::array(), biases = json::array();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    std::vector<double> row_major;
    for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < p.weights[l].cols(); ++j) row_major.push_back(p.weights[l](i, j));
    }
    weights.push_back(row_major);
    biases.push_back(std::vector<double>(p.biases[l].data(), p.biases[l].data() + p.biases[l].size()));
  }
  doc["weights"] = weights;
  doc["biases"] = biases;
  return doc.dump() + "\n";
}

MlpParams mlp_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, "residual model: " + std::string(e.what()));
  }
  MlpParams p;
  try {
    p.layer_dims = doc.at("layer_dims").get<std::vector<std::size_t>>();
    p.output_epsilon = doc.at("output_epsilon").get<double>();
    auto weights = doc.at("weights").get<std::vector<std::vector<double>>>();
    auto biases = doc.at("biases").get<std::vector<std::vector<double>>>();
    if (p.layer_dims.size() < 2 || weights.size() != p.layer_dims.size() - 1 ||
        biases.size() != weights.size()) {
      throw DimensionMismatch("residual model layer count mismatch");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto rows = p.layer_dims[l + 1], cols = p.layer_dims[l];
      if (weights[l].size() != rows * cols || biases[l].size() != rows) {
        throw DimensionMismatch("residual model layer " + std::to_string(l) + " has wrong size");
      }
      Eigen::MatrixXd w(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = weights[l][i * cols + j];
        }
      }
      p.weights.push_back(std::move(w));
      p.biases.push_back(Eigen::Map<Eigen::VectorXd>(biases[l].data(), static_cast<Eigen::Index>(rows)));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("residual model: ") + e.what());
  }
  check_shape(p);
  return p;
}

}  // namespace conformal_triage
