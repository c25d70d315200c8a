#include "eplap/graph.hpp"

#include "eplap/detail/digest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <stdexcept>
#include <vector>

namespace eplap {

std::uint64_t Graph::digest() const {
  detail::Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(weights.rows()));
  // Column-major iteration order is deterministic for a compressed matrix.
  for (int col = 0; col < weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(weights, col); it; ++it) {
      h.update_u64(static_cast<std::uint64_t>(it.row()));
      h.update_u64(static_cast<std::uint64_t>(it.col()));
      h.update_double(it.value());
    }
  }
  return h.value();
}

bool Graph::connected() const {
  const Eigen::Index n = size();
  if (n <= 1) return true;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> stack{0};
  seen[0] = 1;
  Eigen::Index reached = 1;
  while (!stack.empty()) {
    const Eigen::Index v = stack.back();
    stack.pop_back();
    for (Eigen::SparseMatrix<double>::InnerIterator it(weights, static_cast<int>(v));
         it; ++it) {
      if (it.value() == 0.0) continue;
      const Eigen::Index u = it.row();
      if (!seen[static_cast<std::size_t>(u)]) {
        seen[static_cast<std::size_t>(u)] = 1;
        ++reached;
        stack.push_back(u);
      }
    }
  }
  return reached == n;
}

void Graph::validate() const {
  const Eigen::Index n = size();
  if (weights.cols() != n) {
    throw std::invalid_argument("graph: adjacency must be square");
  }
  if (degrees.size() != n) {
    throw std::invalid_argument("graph: degree vector length mismatch");
  }
  Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(n);
  for (int col = 0; col < weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(weights, col); it; ++it) {
      if (it.value() < 0.0 || !std::isfinite(it.value())) {
        throw std::invalid_argument("graph: weights must be finite and >= 0");
      }
      if (it.row() == it.col() && it.value() != 0.0) {
        throw std::invalid_argument("graph: nonzero diagonal entry");
      }
      const double mirror = weights.coeff(it.col(), it.row());
      if (mirror != it.value()) {
        throw std::invalid_argument("graph: adjacency is not symmetric");
      }
      rowsum(it.row()) += it.value();
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = std::max(1.0, std::abs(rowsum(i)));
    if (std::abs(rowsum(i) - degrees(i)) > 1e-12 * scale) {
      throw std::invalid_argument("graph: degrees do not match row sums");
    }
  }
}

Graph build_knn_graph(const Eigen::MatrixXd& features, const GraphSpec& spec) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw std::invalid_argument("knn graph: need at least 2 samples");
  if (!features.allFinite()) {
    throw std::invalid_argument("knn graph: features contain NaN or Inf");
  }
  if (spec.k_neighbors < 1 || spec.k_neighbors >= n) {
    throw std::invalid_argument("knn graph: k must satisfy 1 <= k < n");
  }
  if (spec.bandwidth && !(*spec.bandwidth > 0.0)) {
    throw std::invalid_argument("knn graph: bandwidth must be > 0");
  }
  const auto k = static_cast<std::size_t>(spec.k_neighbors);

  // Squared distances via the expansion |xi|^2 + |xj|^2 - 2 xi.xj; clamp the
  // tiny negatives that roundoff can produce.
  const Eigen::VectorXd sq = features.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (features * features.transpose());
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);

  std::set<std::pair<Eigen::Index, Eigen::Index>> edges;  // (min, max) pairs
  std::vector<double> retained;                           // directed distances
  retained.reserve(static_cast<std::size_t>(n) * k);
  std::vector<std::pair<double, Eigen::Index>> cand;
  cand.reserve(static_cast<std::size_t>(n) - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    cand.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back(d2(i, j), j);
    }
    // Ties on distance resolve to the lower sample index.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k),
                      cand.end());
    for (std::size_t r = 0; r < k; ++r) {
      const Eigen::Index j = cand[r].second;
      retained.push_back(std::sqrt(cand[r].first));
      edges.emplace(std::min(i, j), std::max(i, j));
    }
  }

  double sigma = 0.0;
  if (spec.weight_scheme == WeightScheme::heat) {
    if (spec.bandwidth) {
      sigma = *spec.bandwidth;
    } else {
      std::vector<double> dist = retained;
      std::sort(dist.begin(), dist.end());
      const std::size_t m = dist.size();
      sigma = (m % 2 == 1) ? dist[m / 2]
                           : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
      if (!(sigma > 0.0)) {
        throw std::runtime_error(
            "knn graph: median neighbor distance is zero (duplicate points); "
            "pass an explicit bandwidth");
      }
    }
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(edges.size() * 2);
  for (const auto& [a, b] : edges) {
    double w = 1.0;
    if (spec.weight_scheme == WeightScheme::heat) {
      w = std::exp(-d2(a, b) / (2.0 * sigma * sigma));
    }
    triplets.emplace_back(static_cast<int>(a), static_cast<int>(b), w);
    triplets.emplace_back(static_cast<int>(b), static_cast<int>(a), w);
  }

  Graph g;
  g.weights.resize(static_cast<int>(n), static_cast<int>(n));
  g.weights.setFromTriplets(triplets.begin(), triplets.end());
  g.weights.makeCompressed();
  g.degrees = g.weights * Eigen::VectorXd::Ones(n);
  return g;
}

Eigen::MatrixXd laplacian(const Graph& g, Eigen::Index max_dense_n) {
  const Eigen::Index n = g.size();
  if (n > max_dense_n) {
    throw std::runtime_error(
        "laplacian: graph has " + std::to_string(n) +
        " vertices, over the dense cap of " + std::to_string(max_dense_n));
  }
  Eigen::MatrixXd L = -Eigen::MatrixXd(g.weights);
  L.diagonal() += g.degrees;
  return L;
}

void dump_graph(const Graph& g, std::ostream& os) {
  std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> upper;
  for (int col = 0; col < g.weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(g.weights, col); it; ++it) {
      if (it.row() < it.col()) upper.emplace_back(it.row(), it.col(), it.value());
    }
  }
  std::sort(upper.begin(), upper.end());
  os << g.size() << ' ' << upper.size() << '\n';
  char buf[64];
  for (const auto& [i, j, w] : upper) {
    std::snprintf(buf, sizeof buf, "%.17g", w);
    os << i << ' ' << j << ' ' << buf << '\n';
  }
}

namespace detail {
std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace detail

}  // namespace eplap
