#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "cli.hpp"
#include "conformal_triage/conformal.hpp"
#include "conformal_triage/data_model.hpp"
#include "conformal_triage/diagnostics.hpp"
#include "conformal_triage/errors.hpp"
#include "conformal_triage/hil.hpp"
#include "conformal_triage/ranking.hpp"
#include "conformal_triage/residual_model.hpp"

namespace py = pybind11;
using namespace conformal_triage;

namespace {

DataFormat format_for(const std::filesystem::path& path, const std::optional<std::string>& format) {
  return format ? parse_format(*format) : detect_format(path);
}

py::dict unit_dict(const QueryUnit& u) {
  py::dict d;
  d["profile_id"] = u.profile_id;
  d["horizon"] = u.horizon;
  d["task"] = std::string(to_string(u.task));
  d["strategy"] = std::string(to_string(u.strategy));
  d["uncertainty"] = u.uncertainty;
  return d;
}

ScoringInputs scoring_inputs(const ResidualTable* residuals,
                             const std::optional<RegressionCalibration>& regression,
                             const std::optional<ClassificationCalibration>& classification,
                             std::uint64_t seed, std::size_t mcd_runs) {
  ScoringInputs in;
  in.residuals = residuals;
  in.regression = regression;
  in.classification = classification;
  in.seed = seed;
  in.mcd_runs = mcd_runs;
  return in;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Conformal uncertainty triage for soil-profile predictions";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NonpositiveResidual>(m, "NonpositiveResidual", base.ptr());
  py::register_exception<MissingPrediction>(m, "MissingPrediction", base.ptr());
  py::register_exception<EmptyScores>(m, "EmptyScores", base.ptr());
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", base.ptr());
  py::register_exception<NumericalDivergence>(m, "NumericalDivergence", base.ptr());
  py::register_exception<InsufficientReplicates>(m, "InsufficientReplicates", base.ptr());
  py::register_exception<BudgetExceedsPool>(m, "BudgetExceedsPool", base.ptr());
  py::register_exception<MissingArtifact>(m, "MissingArtifact", base.ptr());

  m.attr("MARKERS") = kMarkers;
  m.attr("STOP_TOKEN") = kStopToken;

  // Data model.
  py::class_<ProfileSample>(m, "ProfileSample")
      .def_readonly("id", &ProfileSample::id)
      .def_readonly("num_horizons", &ProfileSample::num_horizons)
      .def_readonly("true_depths", &ProfileSample::true_depths)
      .def_readonly("true_labels", &ProfileSample::true_labels)
      .def_readonly("features", &ProfileSample::features)
      .def_property_readonly("split", [](const ProfileSample& s) { return std::string(to_string(s.split)); });

  py::class_<PredictionBundle>(m, "PredictionBundle")
      .def_readonly("id", &PredictionBundle::id)
      .def_readonly("pred_depths", &PredictionBundle::pred_depths)
      .def_readonly("mcd_depths", &PredictionBundle::mcd_depths)
      .def_readonly("softmax", &PredictionBundle::softmax)
      .def_readonly("residuals", &PredictionBundle::residuals);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("samples", &Dataset::samples)
      .def_readonly("predictions", &Dataset::predictions)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("feature_dim", &Dataset::feature_dim)
      .def("__len__", [](const Dataset& d) { return d.samples.size(); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; })
      .def("indices", [](const Dataset& d, const std::string& split) { return d.indices(parse_split(split)); },
           py::arg("split"))
      .def("validate", [](const Dataset& d) { validate_dataset(d); });

  m.def(
      "generate_synthetic",
      [](std::size_t n_profiles, std::size_t num_classes, std::size_t feature_dim, double heteroscedasticity,
         double temperature, std::size_t mcd_runs, SplitRatios split_ratios, std::uint64_t seed) {
        SyntheticConfig cfg;
        cfg.n_profiles = n_profiles;
        cfg.num_classes = num_classes;
        cfg.feature_dim = feature_dim;
        cfg.heteroscedasticity = heteroscedasticity;
        cfg.miscalibration_temperature = temperature;
        cfg.mcd_runs = mcd_runs;
        cfg.split_ratios = split_ratios;
        cfg.seed = seed;
        return generate_synthetic(cfg);
      },
      py::arg("n_profiles") = 1000, py::arg("num_classes") = 99, py::arg("feature_dim") = 16,
      py::arg("heteroscedasticity") = 1.0, py::arg("temperature") = 1.0, py::arg("mcd_runs") = 50,
      py::arg("split_ratios") = kDefaultSplitRatios, py::arg("seed") = 0);

  m.def(
      "load_dataset",
      [](const std::filesystem::path& path, std::optional<std::string> format) {
        return load_dataset(path, format_for(path, format));
      },
      py::arg("path"), py::arg("format") = py::none());
  m.def(
      "save_dataset",
      [](const Dataset& d, const std::filesystem::path& path, std::optional<std::string> format) {
        save_dataset(d, path, format_for(path, format));
      },
      py::arg("dataset"), py::arg("path"), py::arg("format") = py::none());
  m.def("split_sizes", &split_sizes, py::arg("n"), py::arg("ratios") = kDefaultSplitRatios);
  m.def("split_assign", &split_assign, py::arg("dataset"), py::arg("ratios"), py::arg("seed"));

  // Conformal core.
  py::class_<RegressionCalibration>(m, "RegressionCalibration")
      .def_readonly("alpha", &RegressionCalibration::alpha)
      .def_readonly("n", &RegressionCalibration::n)
      .def_readonly("q", &RegressionCalibration::q)
      .def("to_json", [](const RegressionCalibration& c) { return to_json(c); })
      .def_static("from_json", [](const std::string& s) { return regression_calibration_from_json(s); });
  py::class_<ClassificationCalibration>(m, "ClassificationCalibration")
      .def_readonly("alpha", &ClassificationCalibration::alpha)
      .def_readonly("n", &ClassificationCalibration::n)
      .def_readonly("q", &ClassificationCalibration::q)
      .def("to_json", [](const ClassificationCalibration& c) { return to_json(c); })
      .def_static("from_json", [](const std::string& s) { return classification_calibration_from_json(s); });

  m.def(
      "conformal_quantile", [](const std::vector<double>& s, double alpha) { return conformal_quantile(s, alpha); },
      py::arg("scores"), py::arg("alpha"));
  m.def("conformal_rank", &conformal_rank, py::arg("n"), py::arg("alpha"));
  m.def(
      "calibrate_regression",
      [](const std::vector<double>& s, double alpha) { return calibrate_regression(s, alpha); },
      py::arg("scores"), py::arg("alpha"));
  m.def(
      "calibrate_classification",
      [](const std::vector<double>& s, double alpha) { return calibrate_classification(s, alpha); },
      py::arg("scores"), py::arg("alpha"));
  m.def(
      "predict_interval",
      [](double predicted, double residual, const RegressionCalibration& cal) {
        const auto iv = predict_interval(predicted, residual, cal);
        return std::pair{iv.lo, iv.hi};
      },
      py::arg("predicted"), py::arg("residual"), py::arg("calibration"));
  m.def(
      "predict_set",
      [](const std::vector<double>& p, const ClassificationCalibration& cal) { return predict_set(p, cal).members; },
      py::arg("probabilities"), py::arg("calibration"));
  m.def(
      "classification_scores",
      [](const Dataset& d, const std::string& split) { return classification_scores(d, parse_split(split)); },
      py::arg("dataset"), py::arg("split"));
  m.def(
      "regression_scores",
      [](const Dataset& d, const std::string& split, const ResidualTable& residuals) {
        return regression_scores(d, parse_split(split), residuals);
      },
      py::arg("dataset"), py::arg("split"), py::arg("residuals"));

  // Residual model.
  py::class_<MlpParams>(m, "ResidualModel")
      .def_property_readonly("layer_dims", [](const MlpParams& p) { return p.layer_dims; })
      .def_property_readonly("parameter_count", &MlpParams::parameter_count)
      .def(
          "predict", [](const MlpParams& p, const std::vector<double>& x) { return predict_residual(p, x); },
          py::arg("features"))
      .def(
          "residual_table",
          [](const MlpParams& p, const Dataset& d, const std::string& split) {
            return predict_residual_table(p, d, parse_split(split));
          },
          py::arg("dataset"), py::arg("split"))
      .def("to_json", [](const MlpParams& p) { return to_json(p); })
      .def_static("from_json", [](const std::string& s) { return mlp_from_json(s); });

  m.def(
      "train_residual_model",
      [](const Dataset& d, std::size_t epochs, double learning_rate, std::vector<std::size_t> hidden,
         std::uint64_t seed, bool use_validation) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = learning_rate;
        cfg.hidden = std::move(hidden);
        cfg.seed = seed;
        const auto train = residual_training_set(d, Split::train);
        const auto val = residual_training_set(d, Split::val);
        auto result = train_residual(train, cfg, use_validation ? &val : nullptr);
        return py::make_tuple(result.params, result.loss_history, result.best_epoch);
      },
      py::arg("dataset"), py::arg("epochs") = 200, py::arg("learning_rate") = 1e-3,
      py::arg("hidden") = std::vector<std::size_t>{64, 64}, py::arg("seed") = 0, py::arg("use_validation") = true);
  m.def(
      "residual_column_table",
      [](const Dataset& d, const std::string& split) { return residual_column_table(d, parse_split(split)); },
      py::arg("dataset"), py::arg("split"));

  // Ranking.
  m.def(
      "entropy", [](const std::vector<double>& p) { return entropy(p); }, py::arg("probabilities"));
  m.def(
      "population_std", [](const std::vector<double>& v) { return population_std(v); }, py::arg("values"));
  m.def(
      "rank_units",
      [](const Dataset& d, const std::string& split, const std::string& task, const std::string& strategy,
         std::optional<ResidualTable> residuals, std::optional<RegressionCalibration> regression,
         std::optional<ClassificationCalibration> classification, std::uint64_t seed, std::size_t mcd_runs) {
        const auto in = scoring_inputs(residuals ? &*residuals : nullptr, regression, classification, seed, mcd_runs);
        const auto ranked = rank(score_units(d, parse_split(split), parse_task(task), parse_strategy(strategy), in));
        py::list out;
        for (const auto& u : ranked) out.append(unit_dict(u));
        return out;
      },
      py::arg("dataset"), py::arg("split"), py::arg("task"), py::arg("strategy"), py::arg("residuals") = py::none(),
      py::arg("regression") = py::none(), py::arg("classification") = py::none(), py::arg("seed") = 0,
      py::arg("mcd_runs") = 0);

  // Expert-in-the-loop simulation.
  m.def("segment_iou", &segment_iou, py::arg("pred_lo"), py::arg("pred_hi"), py::arg("true_lo"),
        py::arg("true_hi"));
  m.def("compute_iou", &compute_iou, py::arg("predicted"), py::arg("truth"), py::arg("num_horizons"));
  m.def(
      "classification_metrics",
      [](const std::vector<int>& predicted, const std::vector<int>& truth, const std::string& averaging) {
        if (averaging != "macro" && averaging != "micro") throw ConfigError("averaging must be macro or micro");
        const auto r = compute_classification_metrics(predicted, truth,
                                                      averaging == "macro" ? Averaging::macro : Averaging::micro);
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        return d;
      },
      py::arg("predicted"), py::arg("truth"), py::arg("averaging") = "macro");
  m.def(
      "run_sweep",
      [](const Dataset& d, const std::string& split, const std::vector<double>& fractions,
         const std::vector<std::string>& strategies, const std::vector<std::string>& tasks,
         std::size_t replications, std::uint64_t seed, std::size_t mcd_runs, std::optional<ResidualTable> residuals,
         std::optional<RegressionCalibration> regression, std::optional<ClassificationCalibration> classification,
         std::size_t threads) {
        BudgetSweepConfig cfg;
        for (double f : fractions) cfg.budgets.push_back(Budget::fraction(f));
        cfg.strategies.clear();
        for (const auto& s : strategies) cfg.strategies.push_back(parse_strategy(s));
        cfg.tasks.clear();
        for (const auto& t : tasks) cfg.tasks.push_back(parse_task(t));
        cfg.random_replications = replications;
        cfg.seed = seed;
        cfg.mcd_runs = mcd_runs;
        cfg.threads = threads;
        const auto in = scoring_inputs(residuals ? &*residuals : nullptr, regression, classification, seed, mcd_runs);
        const auto result = run_sweep(d, parse_split(split), in, cfg);
        py::list out;
        for (const auto& row : result.rows) {
          py::dict r;
          r["task"] = std::string(to_string(row.task));
          r["strategy"] = std::string(to_string(row.strategy));
          r["budget"] = row.budget;
          r["budget_fraction"] = row.budget_fraction;
          r["metric"] = row.metric;
          r["mean"] = row.mean;
          r["std"] = row.std;
          r["replications"] = row.values.size();
          out.append(r);
        }
        return out;
      },
      py::arg("dataset"), py::arg("split"), py::arg("fractions"),
      py::arg("strategies") = std::vector<std::string>{"conformal_width", "mcd_std", "entropy", "set_size", "random"},
      py::arg("tasks") = std::vector<std::string>{"depth", "horizon_label"}, py::arg("replications") = 100,
      py::arg("seed") = 0, py::arg("mcd_runs") = 50, py::arg("residuals") = py::none(),
      py::arg("regression") = py::none(), py::arg("classification") = py::none(), py::arg("threads") = 0);

  // Diagnostics.
  m.def(
      "infer_threshold",
      [](const std::vector<double>& u, double budget) {
        const auto r = infer_threshold(u, budget);
        py::dict d;
        d["budget"] = r.budget;
        d["threshold"] = r.threshold;
        d["realized_fraction"] = r.realized_fraction;
        d["deferred"] = r.deferred;
        return d;
      },
      py::arg("uncertainties"), py::arg("budget"));
  m.def(
      "defer", [](const std::vector<double>& u, double threshold) { return defer(u, threshold); },
      py::arg("uncertainties"), py::arg("threshold"));
  m.def(
      "ks_distance",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return ks_distance(cumulative_distribution(a), cumulative_distribution(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman_rank_correlation(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "reliability_mae",
      [](const Dataset& d, const std::string& split, std::size_t bins) {
        return calibration_curve(confidence_points(d, parse_split(split)), bins).mae;
      },
      py::arg("dataset"), py::arg("split"), py::arg("bins") = 10);

  // Command line.
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "conformal_triage");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
