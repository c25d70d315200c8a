#include "eplap/learn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>

#include "eplap/detail/parallel.hpp"

namespace eplap {

namespace {

std::vector<Eigen::Index> labeled_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

void check_reg_params(const RegParams& params) {
  if (!(params.gamma_a >= 0.0) || !(params.gamma_i >= 0.0)) {
    throw std::invalid_argument("learn: gamma_a and gamma_i must be >= 0");
  }
}

void check_train_config(const TrainConfig& cfg) {
  if (cfg.outer_max_iters < 1) {
    throw std::invalid_argument("learn: outer_max_iters must be >= 1");
  }
  if (!(cfg.outer_rel_tol > 0.0)) {
    throw std::invalid_argument("learn: outer_rel_tol must be > 0");
  }
  if (cfg.qp_max_iters < 1) {
    throw std::invalid_argument("learn: qp_max_iters must be >= 1");
  }
  if (!(cfg.qp_tol > 0.0)) {
    throw std::invalid_argument("learn: qp_tol must be > 0");
  }
}

// LU solve with an explicit health check: near-singular systems surface as a
// large relative residual (or non-finite entries) instead of silent garbage.
Eigen::MatrixXd solve_checked(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const char* what) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  Eigen::MatrixXd x = lu.solve(b);
  bool bad = !x.allFinite();
  if (!bad) {
    const double resid = (a * x - b).norm();
    const double scale = a.norm() * x.norm() + b.norm();
    bad = resid > 1e-6 * std::max(scale, 1e-300);
  }
  if (bad) {
    throw std::runtime_error(std::string(what) +
                             ": linear system is numerically singular; "
                             "increase gamma_a or the kernel jitter");
  }
  return x;
}

// Regularizer value shared by both losses:
// gamma_a alpha^T K alpha + (gamma_i / n^2) f^T (sum mu_k^gamma L_k) f
// with f = K alpha.
double regularizer_value(const Eigen::VectorXd& alpha, const Eigen::VectorXd& f,
                         const Eigen::VectorXd& mu, const Eigen::MatrixXd& kmat,
                         const CandidateSet& cands, const RegParams& params,
                         double gamma_exp) {
  double value = params.gamma_a * alpha.dot(f);
  if (params.gamma_i > 0.0) {
    if (mu.size() != static_cast<Eigen::Index>(cands.count())) {
      throw std::invalid_argument("objective: mu/candidate count mismatch");
    }
    const double n2 = static_cast<double>(kmat.rows()) *
                      static_cast<double>(kmat.rows());
    double smooth = 0.0;
    for (std::size_t k = 0; k < cands.count(); ++k) {
      smooth += std::pow(mu(static_cast<Eigen::Index>(k)), gamma_exp) *
                f.dot(cands.matrices[k] * f);
    }
    value += params.gamma_i / n2 * smooth;
  }
  return value;
}

void check_objective_shapes(const Eigen::VectorXd& alpha,
                            const Eigen::MatrixXd& kmat,
                            const Eigen::VectorXd& y,
                            const std::vector<std::uint8_t>& mask) {
  const Eigen::Index n = kmat.rows();
  if (kmat.cols() != n || alpha.size() != n || y.size() != n ||
      static_cast<Eigen::Index>(mask.size()) != n) {
    throw std::invalid_argument("objective: shape mismatch");
  }
}

Eigen::VectorXd binary_targets(const Dataset& train, int positive) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(train.size());
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    if (train.labeled_mask[static_cast<std::size_t>(i)] == 0) continue;
    y(i) = train.labels[static_cast<std::size_t>(i)] == positive ? 1.0 : -1.0;
  }
  return y;
}

int binary_positive_label(const Dataset& train) {
  const auto ids = train.class_ids();
  if (ids.size() != 2) {
    throw std::invalid_argument(
        "binary training requires exactly two distinct labels, got " +
        std::to_string(ids.size()));
  }
  return ids[1];  // larger id encodes +1
}

// Cross-kernel block R(r, i) = k(x_i, q_r); no jitter, matching kernel_row.
Eigen::MatrixXd cross_kernel(const Eigen::MatrixXd& train_features,
                             const Eigen::MatrixXd& queries,
                             const KernelSpec& spec) {
  if (train_features.cols() != queries.cols()) {
    throw std::invalid_argument("predict: feature dimension mismatch");
  }
  if (spec.kind == KernelKind::linear) {
    return queries * train_features.transpose();
  }
  if (!spec.bandwidth) {
    throw std::logic_error("predict: rbf bandwidth unresolved");
  }
  const double sigma = *spec.bandwidth;
  Eigen::MatrixXd d2 = -2.0 * (queries * train_features.transpose());
  d2.colwise() += queries.rowwise().squaredNorm();
  d2.rowwise() += train_features.rowwise().squaredNorm().transpose();
  d2 = d2.cwiseMax(0.0);
  return (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
}

void validate_training_inputs(const Eigen::MatrixXd& features,
                              const Eigen::VectorXd& y,
                              const std::vector<std::uint8_t>& mask,
                              const CandidateSet& cands) {
  const Eigen::Index n = features.rows();
  cands.validate();
  if (cands.dim() != n) {
    throw std::invalid_argument("train: candidate dimension != sample count");
  }
  if (y.size() != n || static_cast<Eigen::Index>(mask.size()) != n) {
    throw std::invalid_argument("train: target/mask length mismatch");
  }
  bool any_labeled = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)] != 0) {
      any_labeled = true;
      if (y(i) != 1.0 && y(i) != -1.0) {
        throw std::invalid_argument("train: labeled targets must be +-1");
      }
    }
  }
  if (!any_labeled) {
    throw std::invalid_argument("train: need at least one labeled sample");
  }
}

// Shared alternating loop body for both losses. The alpha step is supplied
// by the caller; mu comes from the closed-form weight update. One objective
// value is recorded per outer iteration, after both steps.
struct OuterLoopState {
  EnsembleWeights weights;
  std::vector<double> trace;
  bool converged = false;
};

// The closed-form alpha update is the exact minimizer of the objective with
// the PLAIN squared data term; the 1/l-averaged variant (kls_objective) is
// not what that update descends, and tracing it would show spurious rises of
// order the averaging gap. The trace therefore records the functional both
// alternation steps provably decrease.
double kls_trace_objective(const Eigen::VectorXd& alpha,
                           const Eigen::VectorXd& mu,
                           const Eigen::MatrixXd& kmat, const CandidateSet& cands,
                           const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& mask,
                           const RegParams& params, double gamma_exp) {
  const Eigen::VectorXd f = kmat * alpha;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const double d = y(i) - f(i);
    loss += d * d;
  }
  return loss + regularizer_value(alpha, f, mu, kmat, cands, params, gamma_exp);
}

// The hinge trace records the primal value at the bias that minimizes the
// hinge sum, not at the reported KKT-midpoint bias. The dual solve pins alpha
// together with that minimizing bias (by strong duality the dual optimum
// equals the primal there), whereas the midpoint estimate -- above all its
// no-margin-SV fallback -- is not a stationary point of the hinge in b, so
// the primal evaluated at it moves first order with the estimate's drift and
// can tick upward even while the solve is descending. The hinge sum is convex
// piecewise linear in b with kinks at b = y_i - f_i, so scanning the kinks
// finds its exact minimum.
double svm_trace_objective(const Eigen::VectorXd& alpha,
                           const Eigen::VectorXd& mu,
                           const Eigen::MatrixXd& kmat, const CandidateSet& cands,
                           const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& mask,
                           const RegParams& params, double gamma_exp) {
  const auto labeled = labeled_indices(mask);
  const Eigen::VectorXd f = kmat * alpha;
  double best = std::numeric_limits<double>::infinity();
  for (const auto i : labeled) {
    const double b = y(i) - f(i);
    double sum = 0.0;
    for (const auto j : labeled) {
      sum += std::max(0.0, 1.0 - y(j) * (f(j) + b));
    }
    best = std::min(best, sum);
  }
  best /= static_cast<double>(labeled.size());
  return best + regularizer_value(alpha, f, mu, kmat, cands, params, gamma_exp);
}

TrainedModel kls_loop(const Eigen::MatrixXd& features, const Eigen::MatrixXd& kmat,
                      const KernelSpec& resolved, const Eigen::VectorXd& y,
                      const std::vector<std::uint8_t>& mask,
                      const CandidateSet& cands, const RegParams& params,
                      double gamma_exp, const TrainConfig& cfg) {
  const Eigen::Index n = features.rows();
  EnsembleWeights w = uniform_weights(cands.count(), gamma_exp);
  std::vector<double> trace;
  bool converged = false;
  Eigen::VectorXd alpha;
  // With gamma_i = 0 the fused matrix never enters the solve and mu never
  // moves, so a zero placeholder avoids the n^2 accumulation.
  const bool use_fused = params.gamma_i > 0.0;
  Eigen::MatrixXd fused =
      use_fused ? Eigen::MatrixXd() : Eigen::MatrixXd::Zero(n, n);
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int iter = 1; iter <= cfg.outer_max_iters; ++iter) {
    if (use_fused) fused = fuse(cands, w);
    alpha = solve_kls_alpha(kmat, fused, y, mask, params);
    if (use_fused) {
      const Eigen::VectorXd r = smoothness_terms(alpha, kmat, cands);
      w.mu = update_weights(r, gamma_exp, params.gamma_i, n);
    }
    const double obj = kls_trace_objective(alpha, w.mu, kmat, cands, y, mask,
                                           params, gamma_exp);
    trace.push_back(obj);
    if (iter >= 2 &&
        std::abs(prev - obj) <= cfg.outer_rel_tol * std::max(std::abs(prev), 1e-300)) {
      converged = true;
      break;
    }
    prev = obj;
  }

  TrainedModel model;
  model.alpha = std::move(alpha);
  model.bias = 0.0;
  model.mu = w.mu;
  model.kernel = resolved;
  model.train_features = features;
  model.objective_trace = std::move(trace);
  model.loss_kind = LossKind::squared;
  model.p_values = cands.p_values;
  model.params = params;
  model.gamma_exp = gamma_exp;
  model.converged = converged;
  return model;
}

TrainedModel svm_loop(const Eigen::MatrixXd& features, const Eigen::MatrixXd& kmat,
                      const KernelSpec& resolved, const Eigen::VectorXd& y,
                      const std::vector<std::uint8_t>& mask,
                      const CandidateSet& cands, const RegParams& params,
                      double gamma_exp, const TrainConfig& cfg) {
  const Eigen::Index n = features.rows();
  const auto labeled = labeled_indices(mask);
  const auto l = static_cast<Eigen::Index>(labeled.size());
  Eigen::VectorXd y_l(l);
  for (Eigen::Index a = 0; a < l; ++a) y_l(a) = y(labeled[static_cast<std::size_t>(a)]);
  if (y_l.minCoeff() > -1.0 || y_l.maxCoeff() < 1.0) {
    throw std::invalid_argument(
        "hinge training needs both classes among the labeled samples");
  }
  if (!(params.gamma_a > 0.0)) {
    throw std::invalid_argument("hinge training needs gamma_a > 0");
  }
  const double box = 1.0 / static_cast<double>(l);

  EnsembleWeights w = uniform_weights(cands.count(), gamma_exp);
  std::vector<double> trace;
  bool converged = false;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  double bias = 0.0;
  Eigen::VectorXd warm;  // beta warm start across outer iterations
  const bool use_fused = params.gamma_i > 0.0;
  Eigen::MatrixXd fused =
      use_fused ? Eigen::MatrixXd() : Eigen::MatrixXd::Zero(n, n);
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int iter = 1; iter <= cfg.outer_max_iters; ++iter) {
    if (use_fused) fused = fuse(cands, w);
    const SvmDual dual = build_svm_dual(kmat, fused, y_l, mask, params);
    const Eigen::VectorXd beta = solve_box_simplex_qp(dual.q, y_l, box, cfg, warm);
    warm = beta;
    alpha = dual.recover * beta;

    const Eigen::VectorXd f = kmat * alpha;
    // Bias from the KKT stationarity of margin support vectors; when the
    // solution has none, center the decision values of the two classes.
    const double margin_tol = 1e-6 * box;
    double acc = 0.0;
    int count = 0;
    for (Eigen::Index a = 0; a < l; ++a) {
      if (beta(a) > margin_tol && beta(a) < box - margin_tol) {
        acc += y_l(a) - f(labeled[static_cast<std::size_t>(a)]);
        ++count;
      }
    }
    if (count > 0) {
      bias = acc / count;
    } else {
      double min_pos = std::numeric_limits<double>::infinity();
      double max_neg = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < l; ++a) {
        const double s = f(labeled[static_cast<std::size_t>(a)]);
        if (y_l(a) > 0.0) {
          min_pos = std::min(min_pos, s);
        } else {
          max_neg = std::max(max_neg, s);
        }
      }
      bias = -0.5 * (min_pos + max_neg);
    }

    if (use_fused) {
      const Eigen::VectorXd r = smoothness_terms(alpha, kmat, cands);
      w.mu = update_weights(r, gamma_exp, params.gamma_i, n);
    }
    const double obj =
        svm_trace_objective(alpha, w.mu, kmat, cands, y, mask, params, gamma_exp);
    trace.push_back(obj);
    if (iter >= 2 &&
        std::abs(prev - obj) <= cfg.outer_rel_tol * std::max(std::abs(prev), 1e-300)) {
      converged = true;
      break;
    }
    prev = obj;
  }

  TrainedModel model;
  model.alpha = std::move(alpha);
  model.bias = bias;
  model.mu = w.mu;
  model.kernel = resolved;
  model.train_features = features;
  model.objective_trace = std::move(trace);
  model.loss_kind = LossKind::hinge;
  model.p_values = cands.p_values;
  model.params = params;
  model.gamma_exp = gamma_exp;
  model.converged = converged;
  return model;
}

bool same_kernel(const KernelSpec& a, const KernelSpec& b) {
  return a.kind == b.kind && a.bandwidth == b.bandwidth && a.jitter == b.jitter;
}

}  // namespace

Eigen::VectorXd solve_kls_alpha(const Eigen::MatrixXd& kmat,
                                const Eigen::MatrixXd& fused,
                                const Eigen::VectorXd& y,
                                const std::vector<std::uint8_t>& labeled_mask,
                                const RegParams& params) {
  check_reg_params(params);
  const Eigen::Index n = kmat.rows();
  if (kmat.cols() != n || y.size() != n ||
      static_cast<Eigen::Index>(labeled_mask.size()) != n) {
    throw std::invalid_argument("solve_kls_alpha: shape mismatch");
  }
  if (labeled_indices(labeled_mask).empty()) {
    throw std::invalid_argument("solve_kls_alpha: no labeled samples");
  }

  // A = J K + gamma_a I + (gamma_i / n^2) L K
  Eigen::MatrixXd a = kmat;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labeled_mask[static_cast<std::size_t>(i)] == 0) a.row(i).setZero();
  }
  a.diagonal().array() += params.gamma_a;
  if (params.gamma_i != 0.0) {
    if (fused.rows() != n || fused.cols() != n) {
      throw std::invalid_argument("solve_kls_alpha: fused matrix shape mismatch");
    }
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    a.noalias() += (params.gamma_i / n2) * (fused * kmat);
  }
  return solve_checked(a, y, "solve_kls_alpha");
}

double kls_objective(const Eigen::VectorXd& alpha, const Eigen::VectorXd& mu,
                     const Eigen::MatrixXd& kmat, const CandidateSet& cands,
                     const Eigen::VectorXd& y,
                     const std::vector<std::uint8_t>& labeled_mask,
                     const RegParams& params, double gamma_exp) {
  check_objective_shapes(alpha, kmat, y, labeled_mask);
  const auto labeled = labeled_indices(labeled_mask);
  if (labeled.empty()) throw std::invalid_argument("kls_objective: no labels");
  const Eigen::VectorXd f = kmat * alpha;
  double loss = 0.0;
  for (const auto i : labeled) {
    const double d = y(i) - f(i);
    loss += d * d;
  }
  loss /= static_cast<double>(labeled.size());
  return loss + regularizer_value(alpha, f, mu, kmat, cands, params, gamma_exp);
}

double svm_objective(const Eigen::VectorXd& alpha, double bias,
                     const Eigen::VectorXd& mu, const Eigen::MatrixXd& kmat,
                     const CandidateSet& cands, const Eigen::VectorXd& y,
                     const std::vector<std::uint8_t>& labeled_mask,
                     const RegParams& params, double gamma_exp) {
  check_objective_shapes(alpha, kmat, y, labeled_mask);
  const auto labeled = labeled_indices(labeled_mask);
  if (labeled.empty()) throw std::invalid_argument("svm_objective: no labels");
  const Eigen::VectorXd f = kmat * alpha;
  double loss = 0.0;
  for (const auto i : labeled) {
    loss += std::max(0.0, 1.0 - y(i) * (f(i) + bias));
  }
  loss /= static_cast<double>(labeled.size());
  return loss + regularizer_value(alpha, f, mu, kmat, cands, params, gamma_exp);
}

SvmDual build_svm_dual(const Eigen::MatrixXd& kmat, const Eigen::MatrixXd& fused,
                       const Eigen::VectorXd& y_labeled,
                       const std::vector<std::uint8_t>& labeled_mask,
                       const RegParams& params) {
  check_reg_params(params);
  const Eigen::Index n = kmat.rows();
  if (kmat.cols() != n || static_cast<Eigen::Index>(labeled_mask.size()) != n) {
    throw std::invalid_argument("build_svm_dual: shape mismatch");
  }
  const auto labeled = labeled_indices(labeled_mask);
  const auto l = static_cast<Eigen::Index>(labeled.size());
  if (l == 0) throw std::invalid_argument("build_svm_dual: no labeled samples");
  if (y_labeled.size() != l) {
    throw std::invalid_argument("build_svm_dual: y_labeled length != labeled count");
  }
  for (Eigen::Index a = 0; a < l; ++a) {
    if (y_labeled(a) != 1.0 && y_labeled(a) != -1.0) {
      throw std::invalid_argument("build_svm_dual: labels must be +-1");
    }
  }

  // M = 2 gamma_a I + 2 (gamma_i / n^2) L K
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  m.diagonal().array() += 2.0 * params.gamma_a;
  if (params.gamma_i != 0.0) {
    if (fused.rows() != n || fused.cols() != n) {
      throw std::invalid_argument("build_svm_dual: fused matrix shape mismatch");
    }
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    m.noalias() += (2.0 * params.gamma_i / n2) * (fused * kmat);
  }

  // Z = J^T Y places y_a on the labeled rows; B = M^-1 Z recovers alpha from
  // beta and Q reads the labeled rows of K B back out.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, l);
  for (Eigen::Index a = 0; a < l; ++a) {
    z(labeled[static_cast<std::size_t>(a)], a) = y_labeled(a);
  }
  SvmDual dual;
  dual.recover = solve_checked(m, z, "build_svm_dual");
  Eigen::MatrixXd k_lab(l, n);
  for (Eigen::Index a = 0; a < l; ++a) {
    k_lab.row(a) = kmat.row(labeled[static_cast<std::size_t>(a)]);
  }
  Eigen::MatrixXd q = y_labeled.asDiagonal() * (k_lab * dual.recover);
  dual.q = 0.5 * (q + q.transpose());
  dual.labeled = labeled;
  return dual;
}

Eigen::VectorXd solve_box_simplex_qp(const Eigen::MatrixXd& q,
                                     const Eigen::VectorXd& y_l, double box,
                                     const TrainConfig& cfg,
                                     const Eigen::VectorXd& warm_start) {
  check_train_config(cfg);
  const Eigen::Index l = q.rows();
  if (q.cols() != l || y_l.size() != l) {
    throw std::invalid_argument("qp: shape mismatch");
  }
  if (!(box > 0.0)) throw std::invalid_argument("qp: box must be > 0");
  if (!q.allFinite()) throw std::invalid_argument("qp: non-finite Q");
  bool has_pos = false;
  bool has_neg = false;
  for (Eigen::Index i = 0; i < l; ++i) {
    if (y_l(i) != 1.0 && y_l(i) != -1.0) {
      throw std::invalid_argument("qp: labels must be +-1");
    }
    (y_l(i) > 0.0 ? has_pos : has_neg) = true;
  }
  // Single-class labels force sum beta_i y_i = 0 down to beta = 0.
  if (!has_pos || !has_neg) return Eigen::VectorXd::Zero(l);

  // Exact Euclidean projection onto {y^T beta = 0} intersected with the box:
  // beta_i = clip(v_i - nu y_i, 0, box) where the multiplier nu solves the
  // monotone scalar equation h(nu) = y^T beta(nu) = 0, found by bisection.
  const auto project = [&](const Eigen::VectorXd& v) {
    const auto h = [&](double nu) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < l; ++i) {
        const double b = std::clamp(v(i) - nu * y_l(i), 0.0, box);
        s += y_l(i) * b;
      }
      return s;
    };
    double lo = -(v.cwiseAbs().maxCoeff() + box + 1.0);
    double hi = -lo;
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      (h(mid) > 0.0 ? lo : hi) = mid;
    }
    const double nu = 0.5 * (lo + hi);
    Eigen::VectorXd out(l);
    for (Eigen::Index i = 0; i < l; ++i) {
      out(i) = std::clamp(v(i) - nu * y_l(i), 0.0, box);
    }
    return out;
  };

  const auto objective = [&](const Eigen::VectorXd& b) {
    return b.sum() - 0.5 * b.dot(q * b);
  };

  // Largest eigenvalue estimate for the guaranteed-ascent step 1/L.
  double lip = 0.0;
  {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(l).normalized();
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd w = q * v;
      const double norm = w.norm();
      if (!(norm > 0.0)) break;
      lip = norm;
      v = w / norm;
    }
    lip = std::max(lip * 1.01, 1e-12);
  }
  const double step_safe = 1.0 / lip;

  Eigen::VectorXd beta = (warm_start.size() == l)
                             ? project(warm_start)
                             : Eigen::VectorXd::Zero(l);
  double obj = objective(beta);
  Eigen::VectorXd grad = Eigen::VectorXd::Ones(l) - q * beta;
  Eigen::VectorXd prev_beta;
  Eigen::VectorXd prev_grad;
  // Scale-aware stationarity tolerance; the gradient itself carries roundoff
  // of order eps * |Q| * box, so the unit-step natural residual cannot be
  // driven below that.
  const double q_inf = q.cwiseAbs().rowwise().sum().maxCoeff();
  const double tol = cfg.qp_tol * std::max(1.0, q_inf * box);

  for (int it = 0; it < cfg.qp_max_iters; ++it) {
    const double residual = (project(beta + grad) - beta).lpNorm<Eigen::Infinity>();
    if (residual <= tol) break;

    // Barzilai-Borwein spectral step, clamped and accepted only when the
    // objective does not drop; otherwise fall back to halvings of 1/L.
    double step = step_safe;
    if (prev_beta.size() == l) {
      const Eigen::VectorXd db = beta - prev_beta;
      const Eigen::VectorXd dg = grad - prev_grad;
      const double denom = -db.dot(dg);  // = db^T Q db >= 0
      if (denom > 0.0) {
        step = std::clamp(db.squaredNorm() / denom, step_safe, 1e8 * step_safe);
      }
    }
    bool accepted = false;
    Eigen::VectorXd cand;
    double cobj = 0.0;
    for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
      cand = project(beta + step * grad);
      cobj = objective(cand);
      if (cobj >= obj - 1e-12 * std::max(1.0, std::abs(obj))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // numerical optimum: no ascent step survives
    prev_beta = std::move(beta);
    prev_grad = std::move(grad);
    beta = std::move(cand);
    obj = std::max(obj, cobj);
    grad = Eigen::VectorXd::Ones(l) - q * beta;
  }
  return beta;
}

TrainedModel train_eplapkls_targets(const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& y,
                                    const std::vector<std::uint8_t>& labeled_mask,
                                    const CandidateSet& cands,
                                    const KernelSpec& kspec,
                                    const RegParams& params, double gamma_exp,
                                    const TrainConfig& cfg) {
  validate_training_inputs(features, y, labeled_mask, cands);
  check_reg_params(params);
  check_train_config(cfg);
  if (!(gamma_exp > 1.0)) throw std::invalid_argument("train: gamma must be > 1");
  const KernelSpec resolved = resolve_kernel_spec(features, kspec);
  const Eigen::MatrixXd kmat = gram(features, resolved);
  return kls_loop(features, kmat, resolved, y, labeled_mask, cands, params,
                  gamma_exp, cfg);
}

TrainedModel train_eplapsvm_targets(const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& y,
                                    const std::vector<std::uint8_t>& labeled_mask,
                                    const CandidateSet& cands,
                                    const KernelSpec& kspec,
                                    const RegParams& params, double gamma_exp,
                                    const TrainConfig& cfg) {
  validate_training_inputs(features, y, labeled_mask, cands);
  check_reg_params(params);
  check_train_config(cfg);
  if (!(gamma_exp > 1.0)) throw std::invalid_argument("train: gamma must be > 1");
  const KernelSpec resolved = resolve_kernel_spec(features, kspec);
  const Eigen::MatrixXd kmat = gram(features, resolved);
  return svm_loop(features, kmat, resolved, y, labeled_mask, cands, params,
                  gamma_exp, cfg);
}

TrainedModel train_eplapkls(const Dataset& train, const CandidateSet& cands,
                            const KernelSpec& kspec, const RegParams& params,
                            double gamma_exp, const TrainConfig& cfg) {
  train.validate();
  const int positive = binary_positive_label(train);
  return train_eplapkls_targets(train.features, binary_targets(train, positive),
                                train.labeled_mask, cands, kspec, params,
                                gamma_exp, cfg);
}

TrainedModel train_eplapsvm(const Dataset& train, const CandidateSet& cands,
                            const KernelSpec& kspec, const RegParams& params,
                            double gamma_exp, const TrainConfig& cfg) {
  train.validate();
  const int positive = binary_positive_label(train);
  return train_eplapsvm_targets(train.features, binary_targets(train, positive),
                                train.labeled_mask, cands, kspec, params,
                                gamma_exp, cfg);
}

Eigen::VectorXd predict(const TrainedModel& model, const Eigen::MatrixXd& queries) {
  if (model.alpha.size() != model.train_features.rows()) {
    throw std::invalid_argument("predict: model alpha/features inconsistent");
  }
  const Eigen::MatrixXd rows =
      cross_kernel(model.train_features, queries, model.kernel);
  return (rows * model.alpha).array() + model.bias;
}

OneVsRestModel train_one_vs_rest(const Dataset& train, const CandidateSet& cands,
                                 const KernelSpec& kspec, const RegParams& params,
                                 double gamma_exp, const TrainConfig& cfg,
                                 LossKind loss, int threads) {
  train.validate();
  check_reg_params(params);
  check_train_config(cfg);
  if (!(gamma_exp > 1.0)) throw std::invalid_argument("train: gamma must be > 1");
  const auto classes = train.class_ids();
  if (classes.size() < 2) {
    throw std::invalid_argument("one-vs-rest: need at least 2 classes");
  }
  for (const int cls : classes) {
    bool any = false;
    for (Eigen::Index i = 0; i < train.size(); ++i) {
      if (train.labels[static_cast<std::size_t>(i)] == cls &&
          train.labeled_mask[static_cast<std::size_t>(i)] != 0) {
        any = true;
        break;
      }
    }
    if (!any) {
      throw std::invalid_argument("one-vs-rest: class " + std::to_string(cls) +
                                  " has no labeled training sample");
    }
  }

  // Gram and candidates are shared; each per-class task re-encodes the
  // targets and trains independently.
  const KernelSpec resolved = resolve_kernel_spec(train.features, kspec);
  const Eigen::MatrixXd kmat = gram(train.features, resolved);

  OneVsRestModel ovr;
  ovr.class_ids = classes;
  ovr.models.resize(classes.size());
  detail::parallel_for(
      classes.size(), threads < 0 ? 0u : static_cast<unsigned>(threads),
      [&](std::size_t c) {
        const Eigen::VectorXd y = binary_targets(train, classes[c]);
        ovr.models[c] =
            (loss == LossKind::squared)
                ? kls_loop(train.features, kmat, resolved, y, train.labeled_mask,
                           cands, params, gamma_exp, cfg)
                : svm_loop(train.features, kmat, resolved, y, train.labeled_mask,
                           cands, params, gamma_exp, cfg);
      });
  return ovr;
}

Eigen::MatrixXd predict_scores(const OneVsRestModel& ovr,
                               const Eigen::MatrixXd& queries) {
  if (ovr.models.empty()) throw std::invalid_argument("predict: empty model");
  Eigen::MatrixXd scores(queries.rows(),
                         static_cast<Eigen::Index>(ovr.models.size()));
  // All one-vs-rest members share training features and kernel, so the
  // cross-kernel block is computed once and reused.
  const Eigen::MatrixXd shared =
      cross_kernel(ovr.models.front().train_features, queries,
                   ovr.models.front().kernel);
  for (std::size_t c = 0; c < ovr.models.size(); ++c) {
    const TrainedModel& m = ovr.models[c];
    const bool shares =
        same_kernel(m.kernel, ovr.models.front().kernel) &&
        m.train_features.rows() == ovr.models.front().train_features.rows() &&
        m.train_features.isApprox(ovr.models.front().train_features, 0.0);
    const Eigen::VectorXd col =
        shares ? Eigen::VectorXd((shared * m.alpha).array() + m.bias)
               : predict(m, queries);
    scores.col(static_cast<Eigen::Index>(c)) = col;
  }
  return scores;
}

std::vector<int> predict_labels(const OneVsRestModel& ovr,
                                const Eigen::MatrixXd& queries) {
  if (ovr.class_ids.size() != ovr.models.size()) {
    throw std::invalid_argument("predict: class/model count mismatch");
  }
  const Eigen::MatrixXd scores = predict_scores(ovr, queries);
  std::vector<int> labels(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;  // ties keep the lower id
    }
    labels[static_cast<std::size_t>(r)] =
        ovr.class_ids[static_cast<std::size_t>(best)];
  }
  return labels;
}

}  // namespace eplap
