#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace eplap {

/// Feature matrix with class labels, a labeled/unlabeled mask and per-sample
/// ids. Immutable by convention once handed to a learner.
struct Dataset {
  Eigen::MatrixXd features;              // n x d
  std::vector<int> labels;               // n, class ids >= 0
  std::vector<std::uint8_t> labeled_mask;  // n, 1 = label visible to the learner
  std::vector<std::string> sample_ids;   // n

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Sorted distinct class ids.
  std::vector<int> class_ids() const;

  /// Number of samples with labeled_mask set.
  Eigen::Index labeled_count() const;

  /// Throws std::invalid_argument on shape mismatch or non-finite features.
  void validate() const;
};

struct SplitSpec {
  int train_per_class = 50;
  double labeled_fraction = 0.1;  // in (0, 1]
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset test;
};

/// Two interleaved half-circle arcs of radius 1, n/2 points per class.
///
/// Class 0 traces (cos t, sin t) and class 1 traces (1 - cos t, 1/2 - sin t)
/// for t evenly spaced over [0, pi] (endpoints included). Gaussian noise of
/// standard deviation `noise` is added per coordinate. All samples start
/// labeled. Deterministic given the seed.
Dataset make_two_moons(int n, double noise, std::uint64_t seed);

struct CsvSchema {
  std::string label_column = "label";
  std::optional<std::string> id_column;
};

/// Reads a feature CSV: header row required, one label column, optional id
/// column, every remaining column a feature in left-to-right order.
/// Malformed rows are reported with their file line number.
Dataset load_features_csv(const std::string& path, const CsvSchema& schema = {});

/// Writes the companion CSV format (id,label,f0,f1,...) with round-trippable
/// floating point formatting.
void write_features_csv(const Dataset& ds, const std::string& path);

/// Per-class split into train/test plus a stratified label mask on train.
///
/// Each class contributes exactly train_per_class samples to train;
/// ceil(labeled_fraction * train_per_class) of them keep a visible label.
/// Test samples stay fully labeled (ground truth for evaluation).
Split split_and_mask(const Dataset& ds, const SplitSpec& spec);

/// Re-draws the stratified label mask in place, leaving membership alone.
/// Lets callers vary the mask seed independently of the split seed.
void apply_label_mask(Dataset& train, double labeled_fraction, std::uint64_t seed);

}  // namespace eplap
