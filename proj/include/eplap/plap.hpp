#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "eplap/graph.hpp"

namespace eplap {

struct PLapConfig {
  double p = 2.0;              // must be > 1
  Eigen::Index embed_dim = 0;  // 0 = default: n for n <= 512, else min(n, 64)
  double step_factor = 0.01;
  int max_iters = 2000;
  double rel_tol = 1e-6;
  int reorth_period = 25;

  Eigen::Index resolved_embed_dim(Eigen::Index n) const;
  void validate(Eigen::Index n) const;
};

struct PLapProvenance {
  std::uint64_t graph_digest = 0;
  bool converged = true;
  int iterations = 0;
  bool graph_connected = true;
  bool degenerate_init = false;  // repeated Laplacian eigenvalue at the K-cut
};

/// Orthonormal embedding basis with the per-column eigenvalue estimates.
struct PLapEigenSystem {
  Eigen::MatrixXd basis;   // n x K, columns f^k with F^T F = I
  Eigen::VectorXd lambda;  // K, nonnegative
  double p = 2.0;

  /// F diag(lambda) F^T.
  Eigen::MatrixXd reconstruct() const;
};

struct PLapMatrix {
  Eigen::MatrixXd matrix;  // n x n symmetric
  double p = 2.0;
  PLapProvenance provenance;
};

/// phi_p(x) = |x|^(p-1) * sign(x); odd, identity at p = 2.
double phi_p(double x, double p);

/// F_p(f) = sum_ij w_ij |f_i - f_j|^p / (2 |f|_p^p), the p-generalized
/// Rayleigh quotient. The double sum runs over ordered pairs, so each edge
/// of the symmetric W contributes twice. Throws on f with zero p-norm.
double fp_functional(const Eigen::VectorXd& f, const Graph& g, double p);

/// Embedding objective: sum over columns of the per-column ratio
/// sum_ij w_ij |f_i^k - f_j^k|^p / |f^k|_p^p (no 1/2 factor).
double embed_objective(const Eigen::MatrixXd& basis, const Graph& g, double p);

/// Analytic gradient of embed_objective; matches central finite differences.
Eigen::MatrixXd embed_gradient(const Eigen::MatrixXd& basis, const Graph& g, double p);

/// G = G_raw - F G_raw^T F: first-order tangent correction that keeps the
/// descent direction on the F^T F = I manifold.
Eigen::MatrixXd orthogonality_correct(const Eigen::MatrixXd& g_raw,
                                      const Eigen::MatrixXd& basis);

struct PLapResult {
  PLapEigenSystem eigensystem;
  PLapMatrix matrix;
  std::vector<double> objective_trace;  // value after each accepted iteration
};

/// Full-eigenvector approximation of the graph p-Laplacian.
///
/// Initializes the basis with the K smallest-eigenvalue eigenvectors of
/// L = D - W, runs orthogonality-corrected gradient descent on the embedding
/// objective with the relative step rule alpha = step_factor * sum|F| / sum|G|
/// (halved on ascent, up to 20 times), re-orthonormalizes every reorth_period
/// iterations, then reads each lambda_k off the converged columns and
/// reconstructs L^p = F diag(lambda) F^T.
PLapResult approximate_p_laplacian(const Graph& g, const PLapConfig& cfg);

}  // namespace eplap
