#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "conformal_triage/data_model.hpp"

namespace fixture {

using namespace conformal_triage;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ct_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline DepthVector depths(std::initializer_list<double> real) {
  DepthVector d;
  d.fill(kStopToken);
  std::size_t i = 0;
  for (double v : real) d[i++] = v;
  return d;
}

inline ProbabilityRow one_hot(std::size_t classes, int label) {
  ProbabilityRow row(classes, 0.0);
  row[static_cast<std::size_t>(label - 1)] = 1.0;
  return row;
}

/// Hand-built profile with F = 2 features and H = 3 classes.
inline ProfileSample sample(const std::string& id, std::initializer_list<double> real,
                            std::vector<int> labels, Split split = Split::test) {
  ProfileSample s;
  s.id = id;
  s.num_horizons = real.size();
  s.true_depths = depths(real);
  s.true_labels = std::move(labels);
  for (std::size_t t = 0; t < s.num_horizons; ++t) {
    s.features.push_back({static_cast<double>(t), 0.5});
  }
  s.split = split;
  return s;
}

inline PredictionBundle prediction(const ProfileSample& s, std::initializer_list<double> real,
                                   std::vector<ProbabilityRow> softmax) {
  PredictionBundle p;
  p.id = s.id;
  p.pred_depths = depths(real);
  p.softmax = std::move(softmax);
  return p;
}

inline void add(Dataset& ds, ProfileSample s, PredictionBundle p) {
  ds.predictions.emplace(p.id, std::move(p));
  ds.samples.push_back(std::move(s));
}

/// Two test profiles with known IoU and label outcomes.
inline Dataset tiny_dataset() {
  Dataset ds;
  ds.num_classes = 3;
  ds.feature_dim = 2;
  auto a = sample("a", {0.4, 1.0}, {1, 2});
  auto pa = prediction(a, {0.5, 1.0}, {{0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}});
  add(ds, a, pa);
  auto b = sample("b", {0.2, 0.6, 0.9}, {3, 3, 1});
  auto pb = prediction(b, {0.3, 0.5, 0.8}, {{0.1, 0.1, 0.8}, {0.2, 0.5, 0.3}, {0.4, 0.35, 0.25}});
  add(ds, b, pb);
  return ds;
}

}  // namespace fixture
