#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace eplap {

struct RankedScores {
  Eigen::VectorXd scores;
  std::vector<std::uint8_t> relevance;  // 1 = ground-truth positive
};

/// Non-interpolated average precision: mean of precision@rank over the ranks
/// of positive items in descending-score order. Ties break by ascending
/// original index. Throws when no positives exist.
double average_precision(const RankedScores& rs);

/// Arithmetic mean of per-class APs; throws on an empty list.
double mean_average_precision(const std::vector<double>& aps);

/// Fraction of matching entries; throws on length mismatch or empty input.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

}  // namespace eplap
