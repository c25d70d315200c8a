#include "eplap/plap.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace eplap {

namespace {

// Sum_i |f_i|^p, the p-norm raised to p.
double pnorm_pow(const Eigen::VectorXd& f, double p) {
  if (p == 2.0) return f.squaredNorm();
  return f.array().abs().pow(p).sum();
}

// phi_p applied elementwise to a row/column expression.
Eigen::ArrayXd phi_p_array(const Eigen::ArrayXd& x, double p) {
  if (p == 2.0) return x;
  return x.sign() * x.abs().pow(p - 1.0);
}

struct ColumnTerms {
  Eigen::VectorXd num;  // sum_ij w_ij |f_i - f_j|^p per column (ordered pairs)
  Eigen::VectorXd den;  // |f^k|_p^p per column
};

ColumnTerms column_terms(const Eigen::MatrixXd& basis, const Graph& g, double p) {
  const Eigen::Index K = basis.cols();
  ColumnTerms t{Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K)};
  for (Eigen::Index k = 0; k < K; ++k) t.den(k) = pnorm_pow(basis.col(k), p);
  Eigen::ArrayXd diff(K);
  // Every stored entry of the symmetric W is one ordered pair (i, j).
  for (int col = 0; col < g.weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(g.weights, col); it; ++it) {
      diff = (basis.row(it.row()) - basis.row(it.col())).array().abs();
      if (p == 2.0) {
        t.num += (it.value() * diff.square()).matrix();
      } else {
        t.num += (it.value() * diff.pow(p)).matrix();
      }
    }
  }
  return t;
}

// Objective evaluation that reports failure (collapsed column, non-finite
// value) instead of throwing; the descent loop treats failures as a
// rejected trial step.
bool try_objective(const Eigen::MatrixXd& basis, const Graph& g, double p,
                   double& value) {
  const ColumnTerms t = column_terms(basis, g, p);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    if (!(t.den(k) > 0.0) || !std::isfinite(t.den(k))) return false;
    sum += t.num(k) / t.den(k);
  }
  if (!std::isfinite(sum)) return false;
  value = sum;
  return true;
}

// Modified Gram-Schmidt with a second sweep for numerical orthogonality.
// Returns false when a column is (numerically) inside the span of the
// previous ones.
bool orthonormalize(Eigen::MatrixXd& basis) {
  const Eigen::Index K = basis.cols();
  for (Eigen::Index j = 0; j < K; ++j) {
    Eigen::VectorXd v = basis.col(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) {
        v -= basis.col(i).dot(v) * basis.col(i);
      }
    }
    const double norm = v.norm();
    if (!(norm > 1e-12)) return false;
    basis.col(j) = v / norm;
  }
  return true;
}

}  // namespace

Eigen::Index PLapConfig::resolved_embed_dim(Eigen::Index n) const {
  if (embed_dim > 0) return embed_dim;
  return n <= 512 ? n : std::min<Eigen::Index>(n, 64);
}

void PLapConfig::validate(Eigen::Index n) const {
  if (!(p > 1.0)) throw std::invalid_argument("plap: p must be > 1");
  if (embed_dim < 0 || embed_dim > n) {
    throw std::invalid_argument("plap: embed_dim must lie in [0, n]");
  }
  if (!(step_factor > 0.0)) {
    throw std::invalid_argument("plap: step_factor must be > 0");
  }
  if (max_iters < 1) throw std::invalid_argument("plap: max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw std::invalid_argument("plap: rel_tol must be > 0");
  if (reorth_period < 1) {
    throw std::invalid_argument("plap: reorth_period must be >= 1");
  }
}

Eigen::MatrixXd PLapEigenSystem::reconstruct() const {
  return basis * lambda.asDiagonal() * basis.transpose();
}

double phi_p(double x, double p) {
  if (!(p > 1.0)) throw std::invalid_argument("phi_p: p must be > 1");
  if (p == 2.0) return x;
  if (x == 0.0) return 0.0;
  const double mag = std::pow(std::abs(x), p - 1.0);
  return x > 0.0 ? mag : -mag;
}

double fp_functional(const Eigen::VectorXd& f, const Graph& g, double p) {
  if (f.size() != g.size()) {
    throw std::invalid_argument("fp_functional: vector/graph size mismatch");
  }
  const double den = pnorm_pow(f, p);
  if (!(den > 0.0)) {
    throw std::invalid_argument("fp_functional: f has zero p-norm");
  }
  double num = 0.0;
  for (int col = 0; col < g.weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(g.weights, col); it; ++it) {
      num += it.value() * std::pow(std::abs(f(it.row()) - f(it.col())), p);
    }
  }
  return num / (2.0 * den);
}

double embed_objective(const Eigen::MatrixXd& basis, const Graph& g, double p) {
  if (basis.rows() != g.size()) {
    throw std::invalid_argument("embed_objective: basis/graph size mismatch");
  }
  double value = 0.0;
  if (!try_objective(basis, g, p, value)) {
    throw std::invalid_argument(
        "embed_objective: a basis column has zero p-norm or the value is "
        "non-finite");
  }
  return value;
}

Eigen::MatrixXd embed_gradient(const Eigen::MatrixXd& basis, const Graph& g,
                               double p) {
  if (basis.rows() != g.size()) {
    throw std::invalid_argument("embed_gradient: basis/graph size mismatch");
  }
  const Eigen::Index n = basis.rows();
  const Eigen::Index K = basis.cols();
  const ColumnTerms t = column_terms(basis, g, p);

  // s(i, k) = sum_j w_ij phi_p(f_i^k - f_j^k)
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, K);
  for (int col = 0; col < g.weights.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(g.weights, col); it; ++it) {
      const Eigen::ArrayXd d =
          (basis.row(it.row()) - basis.row(it.col())).array();
      s.row(it.row()) += (it.value() * phi_p_array(d, p)).matrix();
    }
  }

  // Quotient rule on num_k / den_k:
  //   d num_k / d f_i = 2 p s(i, k)          (symmetric W pairs each edge twice)
  //   d den_k / d f_i = p phi_p(f_i^k)
  // giving (p / den_k) * (2 s(i,k) - (num_k / den_k) phi_p(f_i^k)).
  Eigen::MatrixXd grad(n, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!(t.den(k) > 0.0)) {
      throw std::invalid_argument("embed_gradient: basis column " +
                                  std::to_string(k) + " has zero p-norm");
    }
    const double ratio = t.num(k) / t.den(k);
    grad.col(k) =
        (p / t.den(k)) *
        (2.0 * s.col(k).array() - ratio * phi_p_array(basis.col(k).array(), p))
            .matrix();
  }
  return grad;
}

Eigen::MatrixXd orthogonality_correct(const Eigen::MatrixXd& g_raw,
                                      const Eigen::MatrixXd& basis) {
  if (g_raw.rows() != basis.rows() || g_raw.cols() != basis.cols()) {
    throw std::invalid_argument("orthogonality_correct: shape mismatch");
  }
  return g_raw - basis * (g_raw.transpose() * basis);
}

PLapResult approximate_p_laplacian(const Graph& g, const PLapConfig& cfg) {
  g.validate();
  const Eigen::Index n = g.size();
  if (n < 2) throw std::invalid_argument("plap: graph needs >= 2 vertices");
  cfg.validate(n);
  const Eigen::Index K = cfg.resolved_embed_dim(n);
  const double p = cfg.p;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(laplacian(g));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("plap: eigendecomposition of the Laplacian failed");
  }
  Eigen::MatrixXd basis = es.eigenvectors().leftCols(K);

  PLapProvenance prov;
  prov.graph_digest = g.digest();
  prov.graph_connected = g.connected();
  // A (near-)repeated eigenvalue inside or at the edge of the kept block
  // makes the initial basis non-unique up to rotation; callers comparing
  // runs across toolchains should know.
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double ev_scale = std::max(1.0, std::abs(ev(n - 1)));
  for (Eigen::Index k = 1; k < K; ++k) {
    if (ev(k) - ev(k - 1) <= 1e-10 * ev_scale) prov.degenerate_init = true;
  }
  if (K < n && ev(K) - ev(K - 1) <= 1e-10 * ev_scale) prov.degenerate_init = true;

  double objective = embed_objective(basis, g, p);
  std::vector<double> trace{objective};
  bool converged = false;
  int iterations = 0;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const Eigen::MatrixXd g_raw = embed_gradient(basis, g, p);
    const Eigen::MatrixXd dir = orthogonality_correct(g_raw, basis);
    const double dir_sum = dir.cwiseAbs().sum();
    if (!(dir_sum > 0.0)) {
      converged = true;  // exactly stationary
      break;
    }
    const double alpha0 = cfg.step_factor * basis.cwiseAbs().sum() / dir_sum;
    // The relative step rule rescales even a roundoff-level direction into a
    // macroscopic move. When the predicted first-order decrease alpha0*|dir|^2
    // is below the objective's floating-point resolution, any "accepted" step
    // would be pure noise (it can silently rotate converged columns), so the
    // iterate is numerically stationary.
    if (alpha0 * dir.squaredNorm() <=
        64.0 * std::numeric_limits<double>::epsilon() *
            std::max(1.0, std::abs(objective))) {
      converged = true;
      break;
    }

    // Trial move with backtracking: halve the step (up to 20 times) until the
    // objective stops increasing. On re-orthonormalization iterations the
    // orthonormalization is folded into the trial so the recorded trace
    // stays monotone.
    const auto attempt = [&](bool with_reorth, Eigen::MatrixXd& out_basis,
                             double& out_objective) {
      double alpha = alpha0;
      for (int bt = 0; bt <= 20; ++bt, alpha *= 0.5) {
        Eigen::MatrixXd trial = basis - alpha * dir;
        if (with_reorth && !orthonormalize(trial)) continue;
        double value = 0.0;
        if (!try_objective(trial, g, p, value)) continue;
        if (value <= objective) {
          out_basis = std::move(trial);
          out_objective = value;
          return true;
        }
      }
      return false;
    };

    const bool reorth_due = (it % cfg.reorth_period == 0);
    Eigen::MatrixXd next;
    double next_objective = 0.0;
    bool accepted = attempt(reorth_due, next, next_objective);
    if (!accepted && reorth_due) accepted = attempt(false, next, next_objective);
    if (!accepted) {
      converged = true;  // no descent step available: treat as stationary
      break;
    }

    basis = std::move(next);
    iterations = it;
    trace.push_back(next_objective);
    const double rel = std::abs(objective - next_objective) /
                       std::max(std::abs(objective), 1e-300);
    objective = next_objective;
    if (rel < cfg.rel_tol) {
      converged = true;
      break;
    }
  }
  prov.converged = converged;
  prov.iterations = iterations;

  // The returned basis is exactly orthonormalized no matter where the loop
  // stopped; lambda is read off these final columns.
  if (!orthonormalize(basis)) {
    throw std::runtime_error("plap: basis collapsed to rank deficiency");
  }
  const ColumnTerms t = column_terms(basis, g, p);
  Eigen::VectorXd lambda(K);
  for (Eigen::Index k = 0; k < K; ++k) lambda(k) = t.num(k) / t.den(k);

  PLapResult result;
  result.eigensystem = PLapEigenSystem{std::move(basis), std::move(lambda), p};
  const Eigen::MatrixXd recon = result.eigensystem.reconstruct();
  result.matrix.matrix = 0.5 * (recon + recon.transpose());
  result.matrix.p = p;
  result.matrix.provenance = prov;
  result.objective_trace = std::move(trace);
  return result;
}

}  // namespace eplap
