#include "eplap/eval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace eplap {

double average_precision(const RankedScores& rs) {
  const Eigen::Index n = rs.scores.size();
  if (n == 0) throw std::invalid_argument("average_precision: empty ranking");
  if (static_cast<Eigen::Index>(rs.relevance.size()) != n) {
    throw std::invalid_argument("average_precision: score/relevance length mismatch");
  }
  Eigen::Index positives = 0;
  for (auto r : rs.relevance) positives += (r != 0);
  if (positives == 0) {
    throw std::invalid_argument("average_precision: no positive items");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Descending score; equal scores keep ascending original index.
  std::sort(order.begin(), order.end(), [&rs](Eigen::Index a, Eigen::Index b) {
    if (rs.scores(a) != rs.scores(b)) return rs.scores(a) > rs.scores(b);
    return a < b;
  });

  // Accumulate precision@rank in extended precision and round once at the
  // end; plain double accumulation lands one ulp off exact rationals like
  // (1/1 + 2/3)/2 = 5/6.
  long double hits = 0.0L;
  long double sum = 0.0L;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (rs.relevance[static_cast<std::size_t>(order[rank])] != 0) {
      hits += 1.0L;
      sum += hits / static_cast<long double>(rank + 1);
    }
  }
  return static_cast<double>(sum / static_cast<long double>(positives));
}

double mean_average_precision(const std::vector<double>& aps) {
  if (aps.empty()) {
    throw std::invalid_argument("mean_average_precision: empty AP list");
  }
  double sum = 0.0;
  for (double ap : aps) sum += ap;
  return sum / static_cast<double>(aps.size());
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("accuracy: length mismatch");
  }
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    hits += (predicted[i] == truth[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace eplap
