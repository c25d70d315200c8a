#include "eplap/ensemble.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace eplap {

void CandidateSet::validate() const {
  if (matrices.empty()) {
    throw std::invalid_argument("candidates: need at least one matrix");
  }
  if (p_values.size() != matrices.size()) {
    throw std::invalid_argument("candidates: one p value per matrix required");
  }
  const Eigen::Index n = matrices.front().rows();
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    const auto& m = matrices[k];
    if (m.rows() != n || m.cols() != n) {
      throw std::invalid_argument("candidates: matrix " + std::to_string(k) +
                                  " is not " + std::to_string(n) + "x" +
                                  std::to_string(n));
    }
    if (!m.allFinite()) {
      throw std::invalid_argument("candidates: matrix " + std::to_string(k) +
                                  " has non-finite entries");
    }
  }
}

void EnsembleWeights::validate() const {
  if (mu.size() == 0) throw std::invalid_argument("weights: empty mu");
  // gamma = 1 is a plain convex combination and legal for fusing; the
  // closed-form weight update additionally needs gamma > 1 and checks it.
  if (!(gamma_exp >= 1.0)) {
    throw std::invalid_argument("weights: gamma must be >= 1");
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (!(mu(k) >= 0.0) || !std::isfinite(mu(k))) {
      throw std::invalid_argument("weights: mu must be finite and >= 0");
    }
    sum += mu(k);
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("weights: mu must sum to 1");
  }
}

EnsembleWeights uniform_weights(std::size_t m, double gamma_exp) {
  if (m == 0) throw std::invalid_argument("weights: m must be >= 1");
  EnsembleWeights w;
  w.mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m),
                                   1.0 / static_cast<double>(m));
  w.gamma_exp = gamma_exp;
  w.validate();
  return w;
}

Eigen::MatrixXd fuse(const CandidateSet& cands, const EnsembleWeights& w) {
  cands.validate();
  w.validate();
  if (w.mu.size() != static_cast<Eigen::Index>(cands.count())) {
    throw std::invalid_argument("fuse: weight/candidate count mismatch");
  }
  const Eigen::Index n = cands.dim();
  Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < cands.count(); ++k) {
    fused += std::pow(w.mu(static_cast<Eigen::Index>(k)), w.gamma_exp) *
             cands.matrices[k];
  }
  return fused;
}

Eigen::VectorXd smoothness_terms(const Eigen::VectorXd& alpha,
                                 const Eigen::MatrixXd& kmat,
                                 const CandidateSet& cands) {
  cands.validate();
  if (kmat.rows() != cands.dim() || kmat.cols() != cands.dim()) {
    throw std::invalid_argument("smoothness: kernel/candidate size mismatch");
  }
  if (alpha.size() != kmat.rows()) {
    throw std::invalid_argument("smoothness: alpha length mismatch");
  }
  const Eigen::VectorXd f = kmat * alpha;  // decision values on the train set
  Eigen::VectorXd r(static_cast<Eigen::Index>(cands.count()));
  for (std::size_t k = 0; k < cands.count(); ++k) {
    r(static_cast<Eigen::Index>(k)) = f.dot(cands.matrices[k] * f);
  }
  return r;
}

Eigen::VectorXd update_weights(const Eigen::VectorXd& r, double gamma_exp,
                               double gamma_i, Eigen::Index n) {
  const Eigen::Index m = r.size();
  if (m == 0) throw std::invalid_argument("update_weights: empty r");
  if (!(gamma_exp > 1.0)) {
    throw std::invalid_argument("update_weights: gamma must be > 1");
  }
  if (!(gamma_i > 0.0)) {
    throw std::invalid_argument("update_weights: gamma_i must be > 0");
  }
  if (n < 1) throw std::invalid_argument("update_weights: n must be >= 1");

  // mu_k proportional to (n^2 / (gamma_i * max(r_k, clamp)))^(1/(gamma-1)).
  // Work on logs and shift by the max exponent so tiny r (or gamma close to
  // 1) cannot overflow before the normalization cancels the constant.
  const double clamp = 1e-12;
  const double log_const =
      2.0 * std::log(static_cast<double>(n)) - std::log(gamma_i);
  Eigen::VectorXd t(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    if (!std::isfinite(r(k))) {
      throw std::invalid_argument("update_weights: non-finite smoothness term");
    }
    t(k) = (log_const - std::log(std::max(r(k), clamp))) / (gamma_exp - 1.0);
  }
  const double tmax = t.maxCoeff();
  Eigen::VectorXd mu = (t.array() - tmax).exp().matrix();
  mu /= mu.sum();
  return mu;
}

}  // namespace eplap
