#include "conformal_triage/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "conformal_triage/errors.hpp"
#include "conformal_triage/io.hpp"

namespace conformal_triage {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::calib: return "calib";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "calib") return Split::calib;
  if (name == "test") return Split::test;
  throw SchemaError("unknown split '" + std::string(name) + "'");
}

const PredictionBundle* Dataset::find_prediction(std::string_view id) const {
  auto it = predictions.find(id);
  return it == predictions.end() ? nullptr : &it->second;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

void validate_sample(const ProfileSample& s, std::size_t num_classes, std::size_t feature_dim) {
  if (s.id.empty()) throw InvariantError(s.id, "empty id");
  if (s.num_horizons < kMinHorizons || s.num_horizons > kMaxHorizons) {
    throw InvariantError(s.id, "num_horizons " + std::to_string(s.num_horizons) +
                                   " outside [2, 8]");
  }
  for (double d : s.true_depths) {
    if (!std::isfinite(d)) throw InvariantError(s.id, "non-finite depth");
  }
  if (!(s.true_depths[0] > 0.0)) throw InvariantError(s.id, "first depth marker must be > 0");
  for (std::size_t t = 1; t < s.num_horizons; ++t) {
    if (!(s.true_depths[t] > s.true_depths[t - 1])) {
      throw InvariantError(s.id, "non-monotone depths");
    }
  }
  if (s.true_depths[s.num_horizons - 1] > kStopToken) {
    throw InvariantError(s.id, "depth marker exceeds 1");
  }
  for (std::size_t t = s.num_horizons; t < kMarkers; ++t) {
    if (s.true_depths[t] != kStopToken) {
      throw InvariantError(s.id, "padded depth entries must equal the stop token 1");
    }
  }
  if (s.true_labels.size() != s.num_horizons) {
    throw InvariantError(s.id, "expected one label per horizon");
  }
  for (int label : s.true_labels) {
    if (label < 1 || static_cast<std::size_t>(label) > num_classes) {
      throw InvariantError(s.id, "label " + std::to_string(label) + " outside [1, " +
                                     std::to_string(num_classes) + "]");
    }
  }
  if (s.features.size() != s.num_horizons) {
    throw InvariantError(s.id, "expected one feature vector per horizon");
  }
  for (const auto& row : s.features) {
    if (row.size() != feature_dim) {
      throw InvariantError(s.id, "feature vector has " + std::to_string(row.size()) +
                                     " entries, expected " + std::to_string(feature_dim));
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw InvariantError(s.id, "non-finite feature");
    }
  }
}

void validate_prediction(const PredictionBundle& p, const ProfileSample& s,
                         std::size_t num_classes) {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!std::all_of(p.pred_depths.begin(), p.pred_depths.end(), in_unit)) {
    throw InvariantError(p.id, "pred_depths must lie in [0, 1]");
  }
  if (!p.mcd_depths.empty()) {
    if (p.mcd_depths.size() < 2) {
      throw InvariantError(p.id, "mcd_depths needs at least 2 replicates");
    }
    for (const auto& row : p.mcd_depths) {
      if (!std::all_of(row.begin(), row.end(), in_unit)) {
        throw InvariantError(p.id, "mcd_depths must lie in [0, 1]");
      }
    }
  }
  if (p.softmax.size() != s.num_horizons) {
    throw InvariantError(p.id, "expected one softmax row per horizon");
  }
  for (const auto& row : p.softmax) {
    if (row.size() != num_classes) {
      throw InvariantError(p.id, "softmax row has " + std::to_string(row.size()) +
                                     " entries, expected " + std::to_string(num_classes));
    }
    double sum = 0.0;
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0) {
        throw InvariantError(p.id, "softmax entries must be finite and non-negative");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSoftmaxTolerance) {
      throw InvariantError(p.id, "softmax row sums to " + io::format_double(sum));
    }
  }
  if (p.residuals) {
    for (double u : *p.residuals) {
      if (!std::isfinite(u)) throw InvariantError(p.id, "non-finite residual");
    }
  }
}

void validate_dataset(const Dataset& ds) {
  if (ds.num_classes == 0) throw SchemaError("dataset has no classes");
  std::unordered_map<std::string_view, const ProfileSample*> by_id;
  for (const auto& s : ds.samples) {
    validate_sample(s, ds.num_classes, ds.feature_dim);
    if (!by_id.emplace(s.id, &s).second) throw InvariantError(s.id, "duplicate id");
  }
  for (const auto& [id, p] : ds.predictions) {
    if (id != p.id) throw InvariantError(p.id, "prediction keyed under a different id");
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvariantError(id, "prediction without a matching sample");
    validate_prediction(p, *it->second, ds.num_classes);
  }
}

DataFormat detect_format(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return DataFormat::json_lines;
  return DataFormat::csv_pair;
}

DataFormat parse_format(std::string_view name) {
  if (name == "jsonl" || name == "json-lines" || name == "json_lines") return DataFormat::json_lines;
  if (name == "csv" || name == "csv-pair" || name == "csv_pair") return DataFormat::csv_pair;
  throw ConfigError("unknown dataset format '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// JSON-lines

namespace {

template <typename T>
T field(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw SchemaError("line " + std::to_string(line) + ": missing field '" + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError("line " + std::to_string(line) + ": field '" + key + "' has the wrong type");
  }
}

DepthVector depth_vector(const json& obj, const char* key, std::size_t line) {
  auto values = field<std::vector<double>>(obj, key, line);
  if (values.size() != kMarkers) {
    throw SchemaError("line " + std::to_string(line) + ": field '" + key + "' needs " +
                      std::to_string(kMarkers) + " entries");
  }
  DepthVector out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

struct ParsedLine {
  ProfileSample sample;
  std::optional<PredictionBundle> prediction;
};

ParsedLine parse_json_line(std::string_view text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(line, e.what());
  }
  if (!obj.is_object()) throw ParseError(line, "expected a JSON object");

  ParsedLine out;
  auto& s = out.sample;
  s.id = field<std::string>(obj, "id", line);
  s.num_horizons = field<std::size_t>(obj, "num_horizons", line);
  s.true_depths = depth_vector(obj, "true_depths", line);
  s.true_labels = field<std::vector<int>>(obj, "true_labels", line);
  s.features = field<std::vector<FeatureVector>>(obj, "features", line);
  s.split = parse_split(field<std::string>(obj, "split", line));

  bool has_depths = obj.contains("pred_depths");
  bool has_softmax = obj.contains("softmax");
  if (has_depths || has_softmax) {
    PredictionBundle p;
    p.id = s.id;
    p.pred_depths = depth_vector(obj, "pred_depths", line);
    p.softmax = field<std::vector<ProbabilityRow>>(obj, "softmax", line);
    if (obj.contains("mcd_depths") && !obj["mcd_depths"].is_null()) {
      auto rows = field<std::vector<std::vector<double>>>(obj, "mcd_depths", line);
      for (const auto& row : rows) {
        if (row.size() != kMarkers) {
          throw SchemaError("line " + std::to_string(line) + ": mcd_depths rows need " +
                            std::to_string(kMarkers) + " entries");
        }
        DepthVector d{};
        std::copy(row.begin(), row.end(), d.begin());
        p.mcd_depths.push_back(d);
      }
    }
    if (obj.contains("residuals") && !obj["residuals"].is_null()) {
      p.residuals = depth_vector(obj, "residuals", line);
    }
    out.prediction = std::move(p);
  }
  return out;
}

// Infers H and F from the records, then validates everything.
Dataset finish(std::vector<ProfileSample> samples, std::vector<PredictionBundle> predictions) {
  Dataset ds;
  for (const auto& s : samples) {
    if (!s.features.empty()) {
      ds.feature_dim = s.features.front().size();
      break;
    }
  }
  for (const auto& p : predictions) {
    if (!p.softmax.empty()) {
      ds.num_classes = p.softmax.front().size();
      break;
    }
  }
  if (ds.num_classes == 0) {
    for (const auto& s : samples) {
      for (int label : s.true_labels) {
        ds.num_classes = std::max<std::size_t>(ds.num_classes, label > 0 ? label : 0);
      }
    }
  }
  ds.samples = std::move(samples);
  for (auto& p : predictions) {
    std::string id = p.id;
    if (!ds.predictions.emplace(id, std::move(p)).second) {
      throw InvariantError(id, "duplicate prediction");
    }
  }
  validate_dataset(ds);
  return ds;
}

Dataset load_json_lines(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<ProfileSample> samples;
  std::vector<PredictionBundle> predictions;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto parsed = parse_json_line(text, line);
    samples.push_back(std::move(parsed.sample));
    if (parsed.prediction) predictions.push_back(std::move(*parsed.prediction));
  }
  return finish(std::move(samples), std::move(predictions));
}

}  // namespace

std::string to_json_line(const ProfileSample& s, const PredictionBundle* p) {
  json obj;
  obj["id"] = s.id;
  obj["num_horizons"] = s.num_horizons;
  obj["true_depths"] = s.true_depths;
  obj["true_labels"] = s.true_labels;
  obj["features"] = s.features;
  obj["split"] = std::string(to_string(s.split));
  if (p) {
    obj["pred_depths"] = p->pred_depths;
    if (!p->mcd_depths.empty()) obj["mcd_depths"] = p->mcd_depths;
    obj["softmax"] = p->softmax;
    if (p->residuals) obj["residuals"] = *p->residuals;
  }
  return obj.dump();
}

// ---------------------------------------------------------------------------
// csv-pair

namespace {

constexpr const char* kSamplesFile = "samples.csv";
constexpr const char* kPredictionsFile = "predictions.csv";

std::vector<std::string> numbered(const std::string& stem, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= count; ++i) out.push_back(stem + "_" + std::to_string(i));
  return out;
}

void save_csv_pair(const Dataset& ds, const std::filesystem::path& dir) {
  std::string samples;
  std::vector<std::string> header{"id", "num_horizons", "split", "horizon_index", "true_depths",
                                  "true_labels"};
  for (auto& name : numbered("features", ds.feature_dim)) header.push_back(name);
  samples += io::join_csv(header) + "\n";
  for (const auto& s : ds.samples) {
    for (std::size_t t = 0; t < s.num_horizons; ++t) {
      std::vector<std::string> row{s.id, std::to_string(s.num_horizons),
                                   std::string(to_string(s.split)), std::to_string(t + 1),
                                   io::format_double(s.true_depths[t]),
                                   std::to_string(s.true_labels[t])};
      for (double v : s.features[t]) row.push_back(io::format_double(v));
      samples += io::join_csv(row) + "\n";
    }
  }

  std::size_t max_runs = 0;
  for (const auto& [id, p] : ds.predictions) max_runs = std::max(max_runs, p.mcd_depths.size());
  std::string preds;
  header = {"id", "horizon_index", "pred_depths", "residuals"};
  for (auto& name : numbered("mcd_depths", max_runs)) header.push_back(name);
  for (auto& name : numbered("softmax", ds.num_classes)) header.push_back(name);
  preds += io::join_csv(header) + "\n";
  for (const auto& s : ds.samples) {
    const auto* p = ds.find_prediction(s.id);
    if (!p) continue;
    for (std::size_t t = 0; t < kMarkers; ++t) {
      std::vector<std::string> row{s.id, std::to_string(t + 1), io::format_double(p->pred_depths[t]),
                                   p->residuals ? io::format_double((*p->residuals)[t]) : ""};
      for (std::size_t r = 0; r < max_runs; ++r) {
        row.push_back(r < p->mcd_depths.size() ? io::format_double(p->mcd_depths[r][t]) : "");
      }
      for (std::size_t k = 0; k < ds.num_classes; ++k) {
        row.push_back(t < s.num_horizons ? io::format_double(p->softmax[t][k]) : "");
      }
      preds += io::join_csv(row) + "\n";
    }
  }

  io::write_file(dir / kSamplesFile, samples);
  io::write_file(dir / kPredictionsFile, preds);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line, fields)

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  std::size_t count_prefixed(const std::string& stem) const {
    std::size_t n = 0;
    while (std::find(header.begin(), header.end(), stem + "_" + std::to_string(n + 1)) !=
           header.end()) {
      ++n;
    }
    return n;
  }
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  CsvTable table;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text == "\r") continue;
    auto fields = io::split_csv(text);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError(line, "expected " + std::to_string(table.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
    }
    table.rows.emplace_back(line, std::move(fields));
  }
  if (table.header.empty()) throw SchemaError("'" + path.string() + "' has no header");
  return table;
}

Dataset load_csv_pair(const std::filesystem::path& dir) {
  auto st = read_csv(dir / kSamplesFile);
  const auto c_id = st.column("id"), c_n = st.column("num_horizons"), c_split = st.column("split"),
             c_t = st.column("horizon_index"), c_depth = st.column("true_depths"),
             c_label = st.column("true_labels");
  const std::size_t feature_dim = st.count_prefixed("features");
  std::vector<std::size_t> c_features;
  for (auto& name : numbered("features", feature_dim)) c_features.push_back(st.column(name));

  std::vector<ProfileSample> samples;
  std::unordered_map<std::string, std::size_t> position;
  for (const auto& [line, f] : st.rows) {
    auto [it, fresh] = position.emplace(f[c_id], samples.size());
    if (fresh) {
      ProfileSample s;
      s.id = f[c_id];
      s.num_horizons = static_cast<std::size_t>(io::parse_integer(f[c_n], line));
      s.split = parse_split(f[c_split]);
      s.true_depths.fill(kStopToken);
      samples.push_back(std::move(s));
    }
    auto& s = samples[it->second];
    auto t = io::parse_integer(f[c_t], line);
    if (t != static_cast<long long>(s.true_labels.size()) + 1 ||
        static_cast<std::size_t>(t) > kMarkers) {
      throw ParseError(line, "horizon_index out of sequence for '" + s.id + "'");
    }
    s.true_depths[static_cast<std::size_t>(t - 1)] = io::parse_double(f[c_depth], line);
    s.true_labels.push_back(static_cast<int>(io::parse_integer(f[c_label], line)));
    FeatureVector row;
    for (auto c : c_features) row.push_back(io::parse_double(f[c], line));
    s.features.push_back(std::move(row));
  }

  std::vector<PredictionBundle> predictions;
  auto pred_path = dir / kPredictionsFile;
  if (std::filesystem::exists(pred_path)) {
    auto pt = read_csv(pred_path);
    const auto p_id = pt.column("id"), p_t = pt.column("horizon_index"),
               p_depth = pt.column("pred_depths"), p_res = pt.column("residuals");
    std::vector<std::size_t> p_mcd, p_soft;
    for (auto& name : numbered("mcd_depths", pt.count_prefixed("mcd_depths"))) {
      p_mcd.push_back(pt.column(name));
    }
    for (auto& name : numbered("softmax", pt.count_prefixed("softmax"))) {
      p_soft.push_back(pt.column(name));
    }
    std::unordered_map<std::string, std::size_t> pred_pos;
    std::vector<std::size_t> rows_seen;
    for (const auto& [line, f] : pt.rows) {
      auto [it, fresh] = pred_pos.emplace(f[p_id], predictions.size());
      if (fresh) {
        PredictionBundle p;
        p.id = f[p_id];
        predictions.push_back(std::move(p));
        rows_seen.push_back(0);
      }
      auto& p = predictions[it->second];
      auto t = io::parse_integer(f[p_t], line);
      if (t != static_cast<long long>(rows_seen[it->second]) + 1 ||
          static_cast<std::size_t>(t) > kMarkers) {
        throw ParseError(line, "horizon_index out of sequence for '" + p.id + "'");
      }
      const auto ti = static_cast<std::size_t>(t - 1);
      ++rows_seen[it->second];
      p.pred_depths[ti] = io::parse_double(f[p_depth], line);
      if (!f[p_res].empty()) {
        if (!p.residuals) p.residuals.emplace();
        (*p.residuals)[ti] = io::parse_double(f[p_res], line);
      } else if (p.residuals) {
        throw ParseError(line, "residuals column partially empty for '" + p.id + "'");
      }
      std::size_t runs = 0;
      while (runs < p_mcd.size() && !f[p_mcd[runs]].empty()) ++runs;
      if (ti == 0) p.mcd_depths.assign(runs, DepthVector{});
      if (runs != p.mcd_depths.size()) {
        throw ParseError(line, "inconsistent mcd_depths for '" + p.id + "'");
      }
      for (std::size_t r = 0; r < runs; ++r) {
        p.mcd_depths[r][ti] = io::parse_double(f[p_mcd[r]], line);
      }
      if (!p_soft.empty() && !f[p_soft.front()].empty()) {
        ProbabilityRow row;
        for (auto c : p_soft) row.push_back(io::parse_double(f[c], line));
        p.softmax.push_back(std::move(row));
      }
    }
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (rows_seen[i] != kMarkers) {
        throw SchemaError("profile '" + predictions[i].id + "' needs " +
                          std::to_string(kMarkers) + " prediction rows");
      }
    }
  }
  auto ds = finish(std::move(samples), std::move(predictions));
  if (ds.feature_dim != feature_dim) {
    throw SchemaError("feature columns do not match stored vectors");
  }
  return ds;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
  return format == DataFormat::json_lines ? load_json_lines(path) : load_csv_pair(path);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path, DataFormat format) {
  if (format == DataFormat::csv_pair) {
    save_csv_pair(ds, path);
    return;
  }
  std::string out;
  for (const auto& s : ds.samples) out += to_json_line(s, ds.find_prediction(s.id)) + "\n";
  io::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Splits

std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitRatios& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::array<std::size_t, 4> sizes{};
  std::array<double, 4> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    double exact = ratios[i] * static_cast<double>(n);
    // Absorb representation error so e.g. 0.6 * 10 floors to 6.
    double whole = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(whole);
    remainder[i] = std::max(0.0, exact - whole);
    assigned += sizes[i];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 4) {
    if (ratios[order[k]] > 0.0) {
      ++sizes[order[k]];
      ++assigned;
    }
  }
  return sizes;
}

Dataset split_assign(Dataset ds, const SplitRatios& ratios, std::uint64_t seed) {
  auto sizes = split_sizes(ds.samples.size(), ratios);
  std::vector<std::size_t> perm(ds.samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  constexpr std::array<Split, 4> kSplits{Split::train, Split::val, Split::calib, Split::test};
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 0; j < sizes[k]; ++j) ds.samples[perm[cursor++]].split = kSplits[k];
  }
  return ds;
}

}  // namespace conformal_triage
