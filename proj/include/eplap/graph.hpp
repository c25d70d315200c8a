#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <iosfwd>
#include <optional>

namespace eplap {

enum class WeightScheme { heat, binary };

struct GraphSpec {
  int k_neighbors = 10;
  WeightScheme weight_scheme = WeightScheme::heat;
  std::optional<double> bandwidth;  // heat only; nullopt = median retained neighbor distance
};

/// Symmetric nonnegative adjacency with cached row-sum degrees.
struct Graph {
  Eigen::SparseMatrix<double> weights;  // symmetric, zero diagonal
  Eigen::VectorXd degrees;              // d_i = sum_j w_ij

  Eigen::Index size() const { return weights.rows(); }

  /// Order-independent content hash of (n, pattern, weights); used to pair
  /// cached p-Laplacians with the graph they came from.
  std::uint64_t digest() const;

  /// True when every vertex is reachable from vertex 0 over nonzero weights.
  bool connected() const;

  /// Throws std::invalid_argument if W is asymmetric, has a nonzero diagonal,
  /// negative entries, or degrees that do not match row sums.
  void validate() const;
};

/// k-nearest-neighbor graph over Euclidean distances, symmetrized by union.
/// Equidistant neighbors are broken by ascending sample index. Heat weights
/// use w_ij = exp(-|xi - xj|^2 / (2 sigma^2)); auto bandwidth is the median
/// over all n*k retained directed neighbor distances.
Graph build_knn_graph(const Eigen::MatrixXd& features, const GraphSpec& spec);

/// Dense L = diag(degrees) - W. Refuses n > max_dense_n.
Eigen::MatrixXd laplacian(const Graph& g, Eigen::Index max_dense_n = 4096);

/// Coordinate-list dump: one "n m" header line, then "i j w_ij" per stored
/// upper-triangle edge.
void dump_graph(const Graph& g, std::ostream& os);

}  // namespace eplap
