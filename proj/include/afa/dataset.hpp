#pragma once

#include <string>
#include <utility>
#include <vector>

#include "afa/rng.hpp"
#include "afa/types.hpp"

namespace afa {

struct StandardizationParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // > 0

  static StandardizationParams identity(int d);

  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& standardized) const;
  void validate() const;
};

struct Dataset {
  Eigen::MatrixXd features;  // n x d
  std::vector<Target> targets;
  TaskSpec task;
  std::vector<std::string> feature_names;

  int n() const { return static_cast<int>(features.rows()); }
  int d() const { return static_cast<int>(features.cols()); }

  void validate() const;

  // Empirical class frequencies (classification).
  Eigen::VectorXd class_frequencies() const;

  Dataset subset(const std::vector<int>& rows) const;
  // Shuffled split; first part holds round(n * fraction) rows.
  std::pair<Dataset, Dataset> split(double fraction, SplitRng& rng) const;
};

// Centers and scales each column to mean 0, variance 1 (population sigma).
// Rejects constant columns with an error naming the column.
std::pair<Dataset, StandardizationParams> standardize_dataset(
    const Eigen::MatrixXd& raw, std::vector<Target> targets, TaskSpec task,
    std::vector<std::string> feature_names = {});

// Mask with cardinality uniform on {0..d-1}, then a uniform k-subset; never
// the full set, so at least one dimension stays unobserved.
FeatureIndexSet sample_mask(int d, SplitRng& rng);

struct RawDataset {
  Eigen::MatrixXd features;
  std::vector<Target> targets;
  std::vector<std::string> feature_names;
};

// Headered CSV, one row per instance; final column is the target except for
// unsupervised tasks. Missing cells are rejected with a line-numbered error.
RawDataset read_csv(const std::string& path, TaskKind kind);

void write_csv(const std::string& path, const Dataset& data);

}  // namespace afa
