#pragma once

#include "selfcal/models/gmm.hpp"
#include "selfcal/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace selfcal {

// Points with per-row labels; kUnlabeled marks an unlabeled row.
struct Dataset {
  Points x = Points(0, 2);
  Labels labels;

  Eigen::Index size() const { return x.rows(); }
  bool empty() const { return x.rows() == 0; }
  bool fully_labeled() const;
  // Rows whose label equals `label`.
  Points points_of_class(int label) const;

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.x == b.x && a.labels == b.labels; }
};

struct ToyDatasetSpec {
  GmmSpec gmm = default_toy_gmm();
  int n_train = 2000;
  int n_test = 2000;
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  int n_labeled() const;
};

struct ToySplits {
  Dataset labeled;
  Dataset unlabeled;
  Dataset test;
};

ToySplits make_toy_dataset(const ToyDatasetSpec& spec);

// CSV with header `x,y,label`; the label field is empty for unlabeled rows.
// Coordinates use the shortest decimal that round-trips exactly.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& text);

std::string format_double(double v);

}  // namespace selfcal
