#pragma once

#include <Eigen/Core>

#include <vector>

namespace eplap {

/// Candidate regularizer matrices L_k^p plus their p values as metadata.
struct CandidateSet {
  std::vector<Eigen::MatrixXd> matrices;
  std::vector<double> p_values;

  std::size_t count() const { return matrices.size(); }
  Eigen::Index dim() const { return matrices.empty() ? 0 : matrices.front().rows(); }
  void validate() const;
};

/// Simplex weights mu with the relaxation exponent gamma (> 1).
struct EnsembleWeights {
  Eigen::VectorXd mu;
  double gamma_exp = 2.0;

  void validate() const;
};

/// Uniform feasible weights mu_k = 1/m.
EnsembleWeights uniform_weights(std::size_t m, double gamma_exp);

/// Fused regularizer L = sum_k mu_k^gamma L_k^p.
Eigen::MatrixXd fuse(const CandidateSet& cands, const EnsembleWeights& w);

/// r_k = alpha^T K L_k^p K alpha for each candidate.
Eigen::VectorXd smoothness_terms(const Eigen::VectorXd& alpha,
                                 const Eigen::MatrixXd& kmat,
                                 const CandidateSet& cands);

/// Closed-form simplex minimizer of sum_k mu_k^gamma r_k:
/// mu_k = (n^2 / (gamma_i r_k))^(1/(gamma-1)), normalized to sum 1.
/// r is clamped below at 1e-12; an all-clamped r yields uniform weights.
/// Evaluated in log space so small r cannot overflow the exponent.
Eigen::VectorXd update_weights(const Eigen::VectorXd& r, double gamma_exp,
                               double gamma_i, Eigen::Index n);

}  // namespace eplap
