#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "eplap/dataset.hpp"
#include "eplap/eval.hpp"
#include "eplap/graph.hpp"
#include "eplap/kernel.hpp"
#include "eplap/learn.hpp"
#include "eplap/plap.hpp"
#include "test_util.hpp"

using eplap::CandidateSet;
using eplap::Dataset;
using eplap::KernelKind;
using eplap::KernelSpec;
using eplap::LossKind;
using eplap::RegParams;
using eplap::TrainConfig;

namespace {

std::vector<std::uint8_t> all_labeled(Eigen::Index n) {
  return std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1);
}

// Gauss-Jordan elimination with partial pivoting: an independent linear
// solver for the ridge-equivalence oracle.
Eigen::VectorXd gauss_solve(Eigen::MatrixXd a, Eigen::VectorXd b) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index pivot = col;
    for (Eigen::Index r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    a.row(col).swap(a.row(pivot));
    std::swap(b(col), b(pivot));
    const double d = a(col, col);
    a.row(col) /= d;
    b(col) /= d;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == col) continue;
      const double factor = a(r, col);
      a.row(r) -= factor * a.row(col);
      b(r) -= factor * b(col);
    }
  }
  return b;
}

double naive_kls_objective(const Eigen::VectorXd& alpha,
                           const Eigen::VectorXd& mu,
                           const Eigen::MatrixXd& k, const CandidateSet& cands,
                           const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& mask,
                           const RegParams& params, double gamma) {
  const Eigen::Index n = k.rows();
  std::vector<double> f(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) f[static_cast<std::size_t>(i)] += k(i, j) * alpha(j);
  }
  double loss = 0.0;
  int l = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      const double d = y(i) - f[static_cast<std::size_t>(i)];
      loss += d * d;
      ++l;
    }
  }
  loss /= l;
  double reg_a = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) reg_a += alpha(i) * f[static_cast<std::size_t>(i)];
  double reg_i = 0.0;
  for (std::size_t c = 0; c < cands.count(); ++c) {
    double term = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        term += f[static_cast<std::size_t>(i)] * cands.matrices[c](i, j) *
                f[static_cast<std::size_t>(j)];
      }
    }
    reg_i += std::pow(mu(static_cast<Eigen::Index>(c)), gamma) * term;
  }
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  return loss + params.gamma_a * reg_a + params.gamma_i / n2 * reg_i;
}

double naive_svm_objective(const Eigen::VectorXd& alpha, double bias,
                           const Eigen::VectorXd& mu,
                           const Eigen::MatrixXd& k, const CandidateSet& cands,
                           const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& mask,
                           const RegParams& params, double gamma) {
  const Eigen::Index n = k.rows();
  const Eigen::VectorXd f = k * alpha;
  double loss = 0.0;
  int l = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      loss += std::max(0.0, 1.0 - y(i) * (f(i) + bias));
      ++l;
    }
  }
  loss /= l;
  double reg = params.gamma_a * alpha.dot(f);
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  for (std::size_t c = 0; c < cands.count(); ++c) {
    reg += params.gamma_i / n2 * std::pow(mu(static_cast<Eigen::Index>(c)), gamma) *
           f.dot(cands.matrices[c] * f);
  }
  return loss + reg;
}

double qp_value(const Eigen::VectorXd& beta, const Eigen::MatrixXd& q) {
  return beta.sum() - 0.5 * beta.dot(q * beta);
}

// Exact reference for the box/equality QP: enumerate every assignment of
// coordinates to {at 0, at box, free}, solve the bordered KKT system on the
// free block, keep the best feasible candidate. Exponential, fine for l <= 8.
struct QpRef {
  Eigen::VectorXd beta;
  double value = -std::numeric_limits<double>::infinity();
};

QpRef qp_brute_force(const Eigen::MatrixXd& q, const Eigen::VectorXd& y,
                     double box) {
  const int l = static_cast<int>(q.rows());
  QpRef best;
  std::vector<int> state(static_cast<std::size_t>(l), 0);
  long total = 1;
  for (int i = 0; i < l; ++i) total *= 3;
  for (long code = 0; code < total; ++code) {
    long c = code;
    for (int i = 0; i < l; ++i) {
      state[static_cast<std::size_t>(i)] = static_cast<int>(c % 3);
      c /= 3;
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(l);
    std::vector<int> free_idx;
    for (int i = 0; i < l; ++i) {
      if (state[static_cast<std::size_t>(i)] == 1) beta(i) = box;
      if (state[static_cast<std::size_t>(i)] == 2) free_idx.push_back(i);
    }
    const int nf = static_cast<int>(free_idx.size());
    if (nf == 0) {
      if (std::abs(y.dot(beta)) > 1e-12) continue;
    } else {
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + 1, nf + 1);
      Eigen::VectorXd rhs(nf + 1);
      for (int a = 0; a < nf; ++a) {
        for (int b = 0; b < nf; ++b) kkt(a, b) = q(free_idx[a], free_idx[b]);
        kkt(a, nf) = y(free_idx[a]);
        kkt(nf, a) = y(free_idx[a]);
        double fixed_dot = 0.0;
        for (int i = 0; i < l; ++i) {
          if (state[static_cast<std::size_t>(i)] == 1) fixed_dot += q(free_idx[a], i) * box;
        }
        rhs(a) = 1.0 - fixed_dot;
      }
      rhs(nf) = -y.dot(beta);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd sol = lu.solve(rhs);
      bool ok = true;
      for (int a = 0; a < nf; ++a) {
        if (sol(a) < -1e-10 || sol(a) > box + 1e-10) ok = false;
        beta(free_idx[a]) = std::min(std::max(sol(a), 0.0), box);
      }
      if (!ok) continue;
      if (std::abs(y.dot(beta)) > 1e-9) continue;
    }
    const double v = qp_value(beta, q);
    if (v > best.value) {
      best.value = v;
      best.beta = beta;
    }
  }
  return best;
}

CandidateSet laplacian_candidates(const Eigen::MatrixXd& features, int k,
                                  std::initializer_list<double> ps) {
  eplap::GraphSpec gs;
  gs.k_neighbors = k;
  const auto g = eplap::build_knn_graph(features, gs);
  CandidateSet cands;
  for (double p : ps) {
    eplap::PLapConfig cfg;
    cfg.p = p;
    cfg.embed_dim = std::min<Eigen::Index>(features.rows(), 24);
    cfg.max_iters = 300;
    cands.matrices.push_back(eplap::approximate_p_laplacian(g, cfg).matrix.matrix);
    cands.p_values.push_back(p);
  }
  return cands;
}

CandidateSet single_matrix(const Eigen::MatrixXd& m, double p = 2.0) {
  CandidateSet c;
  c.matrices = {m};
  c.p_values = {p};
  return c;
}

Dataset blob_dataset(int classes, int per_class, double spread,
                     std::uint64_t seed) {
  const int n = classes * per_class;
  Dataset ds;
  ds.features.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.labeled_mask.assign(static_cast<std::size_t>(n), 1);
  ds.sample_ids.resize(static_cast<std::size_t>(n));
  const Eigen::MatrixXd noise = testutil::random_matrix(n, 2, seed, -spread, spread);
  for (int i = 0; i < n; ++i) {
    const int cls = i % classes;
    const double angle = 2.0 * M_PI * cls / classes;
    ds.features(i, 0) = 4.0 * std::cos(angle) + noise(i, 0);
    ds.features(i, 1) = 4.0 * std::sin(angle) + noise(i, 1);
    ds.labels[static_cast<std::size_t>(i)] = cls;
    ds.sample_ids[static_cast<std::size_t>(i)] = "b" + std::to_string(i);
  }
  return ds;
}

KernelSpec rbf(double bandwidth, double jitter = 1e-8) {
  KernelSpec s;
  s.kind = KernelKind::rbf;
  s.bandwidth = bandwidth;
  s.jitter = jitter;
  return s;
}

}  // namespace

TEST_CASE("scalar alpha solve") {
  Eigen::MatrixXd k(1, 1);
  k << 1.0;
  const Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(1, 1);
  Eigen::VectorXd y(1);
  y << 1.0;
  RegParams params;
  params.gamma_a = 0.5;
  params.gamma_i = 0.0;
  const auto alpha = eplap::solve_kls_alpha(k, fused, y, all_labeled(1), params);
  CHECK(alpha(0) == doctest::Approx(1.0 / 1.5).epsilon(1e-15));
}

TEST_CASE("identity kernel solves elementwise") {
  const Eigen::Index n = 6;
  const Eigen::MatrixXd k = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd y = testutil::random_vector(n, 4);
  RegParams params;
  params.gamma_a = 0.25;
  const auto alpha = eplap::solve_kls_alpha(k, fused, y, all_labeled(n), params);
  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK(alpha(i) == doctest::Approx(y(i) / 1.25).epsilon(1e-14));
  }
}

TEST_CASE("ridge equivalence against an independent eliminator") {
  const Eigen::Index n = 14;
  const Eigen::MatrixXd x = testutil::random_matrix(n, 3, 9);
  const Eigen::MatrixXd k = eplap::gram(x, rbf(1.2));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; i += 2) {  // half labeled
    mask[static_cast<std::size_t>(i)] = 1;
    y(i) = (i % 4 == 0) ? 1.0 : -1.0;
  }
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.0;
  const auto alpha = eplap::solve_kls_alpha(
      k, Eigen::MatrixXd::Zero(n, n), y, mask, params);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) a.row(i) = k.row(i);
    a(i, i) += params.gamma_a;
  }
  const Eigen::VectorXd oracle = gauss_solve(a, y);
  CHECK((alpha - oracle).norm() / oracle.norm() < 1e-8);
}

TEST_CASE("singular alpha system reports an actionable error") {
  const Eigen::MatrixXd k = Eigen::MatrixXd::Zero(3, 3);
  Eigen::VectorXd y(3);
  y << 1.0, -1.0, 1.0;
  RegParams params;
  params.gamma_a = 0.0;  // JK + 0 I is singular for K = 0
  CHECK_THROWS_WITH_AS(
      eplap::solve_kls_alpha(k, Eigen::MatrixXd::Zero(3, 3), y, all_labeled(3), params),
      doctest::Contains("gamma_a"), std::runtime_error);
}

TEST_CASE("squared-loss objective values") {
  const Eigen::Index n = 8;
  const Eigen::MatrixXd x = testutil::random_matrix(n, 2, 6);
  const Eigen::MatrixXd k = eplap::gram(x, rbf(1.0));
  const auto cands = single_matrix(
      testutil::random_matrix(n, n, 7) * testutil::random_matrix(n, n, 7).transpose());
  Eigen::VectorXd mu(1);
  mu << 1.0;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  mask[0] = mask[3] = mask[5] = 1;
  y(0) = 1.0;
  y(3) = -1.0;
  y(5) = 1.0;
  RegParams params;
  params.gamma_a = 0.1;
  params.gamma_i = 0.4;

  SUBCASE("alpha = 0 leaves only the mean squared labels") {
    const double obj = eplap::kls_objective(Eigen::VectorXd::Zero(n), mu, k,
                                            cands, y, mask, params, 2.0);
    CHECK(obj == doctest::Approx(3.0 / 3.0).epsilon(1e-15));  // (1+1+1)/3
  }

  SUBCASE("interpolating alpha with zero regularization scores zero") {
    RegParams off;
    off.gamma_a = 0.0;
    off.gamma_i = 0.0;
    const auto full = all_labeled(n);
    const Eigen::VectorXd targets = testutil::random_vector(n, 11);
    const Eigen::VectorXd alpha = k.partialPivLu().solve(targets);
    const double obj =
        eplap::kls_objective(alpha, mu, k, cands, targets, full, off, 2.0);
    CHECK(std::abs(obj) < 1e-10);
  }

  SUBCASE("random inputs match the naive transcription") {
    CandidateSet three;
    for (int c = 0; c < 3; ++c) {
      const Eigen::MatrixXd m = testutil::random_matrix(n, n, 20 + c);
      three.matrices.push_back(m * m.transpose());
      three.p_values.push_back(2.0 + 0.2 * c);
    }
    Eigen::VectorXd mu3(3);
    mu3 << 0.5, 0.3, 0.2;
    const Eigen::VectorXd alpha = testutil::random_vector(n, 13);
    const double got =
        eplap::kls_objective(alpha, mu3, k, three, y, mask, params, 2.5);
    const double want =
        naive_kls_objective(alpha, mu3, k, three, y, mask, params, 2.5);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));

    const double bias = -0.3;
    const double got_svm = eplap::svm_objective(alpha, bias, mu3, k, three, y,
                                                mask, params, 2.5);
    const double want_svm = naive_svm_objective(alpha, bias, mu3, k, three, y,
                                                mask, params, 2.5);
    CHECK(got_svm == doctest::Approx(want_svm).epsilon(1e-10));
  }
}

TEST_CASE("svm dual with identity kernel and no manifold term is diagonal") {
  const Eigen::Index n = 5;
  const Eigen::MatrixXd k = Eigen::MatrixXd::Identity(n, n);
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  Eigen::VectorXd y_l(3);
  y_l << 1.0, -1.0, 1.0;
  RegParams params;
  params.gamma_a = 0.2;
  params.gamma_i = 0.0;
  const auto dual = eplap::build_svm_dual(k, Eigen::MatrixXd::Zero(n, n), y_l,
                                          mask, params);
  // hand inversion: Q = Y J (2 gamma_a I)^-1 J^T Y = diag(y_i^2) / (2 gamma_a)
  REQUIRE(dual.q.rows() == 3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double expect = (i == j) ? 1.0 / (2.0 * 0.2) : 0.0;
      CHECK(dual.q(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(dual.labeled == std::vector<Eigen::Index>{0, 2, 3});
}

TEST_CASE("svm dual matches the four-factor naive composition") {
  const Eigen::Index n = 9;
  const Eigen::MatrixXd x = testutil::random_matrix(n, 3, 44);
  const Eigen::MatrixXd k = eplap::gram(x, rbf(1.1));
  const Eigen::MatrixXd raw = testutil::random_matrix(n, n, 45);
  const Eigen::MatrixXd fused = raw * raw.transpose();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> lab{1, 2, 5, 7};
  Eigen::VectorXd y_l(4);
  y_l << 1.0, 1.0, -1.0, -1.0;
  for (auto i : lab) mask[static_cast<std::size_t>(i)] = 1;
  RegParams params;
  params.gamma_a = 0.3;
  params.gamma_i = 0.7;
  const auto dual = eplap::build_svm_dual(k, fused, y_l, mask, params);

  // independent dense composition of Q = Y J K M^-1 J^T Y
  Eigen::MatrixXd selector = Eigen::MatrixXd::Zero(4, n);  // J = [I 0] after reorder
  for (int a = 0; a < 4; ++a) selector(a, lab[static_cast<std::size_t>(a)]) = 1.0;
  const Eigen::MatrixXd m = 2.0 * params.gamma_a * Eigen::MatrixXd::Identity(n, n) +
                            2.0 * (params.gamma_i / (n * n)) * fused * k;
  const Eigen::MatrixXd minv = m.fullPivLu().inverse();
  const Eigen::MatrixXd ymat = y_l.asDiagonal();
  const Eigen::MatrixXd q_ref =
      ymat * selector * k * minv * selector.transpose() * ymat;
  CHECK((dual.q - 0.5 * (q_ref + q_ref.transpose())).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((dual.q - dual.q.transpose()).cwiseAbs().maxCoeff() < 1e-10);

  // recover map: alpha = M^-1 J^T Y beta
  const Eigen::VectorXd beta = testutil::random_vector(4, 3, 0.0, 0.25);
  const Eigen::VectorXd alpha_ref = minv * selector.transpose() * ymat * beta;
  CHECK((dual.recover * beta - alpha_ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("qp hand instances") {
  TrainConfig cfg;

  SUBCASE("single variable is pinned to zero by the equality constraint") {
    Eigen::MatrixXd q(1, 1);
    q << 2.0;
    Eigen::VectorXd y(1);
    y << 1.0;
    const auto beta = eplap::solve_box_simplex_qp(q, y, 1.0, cfg);
    CHECK(beta(0) == 0.0);
  }

  SUBCASE("two symmetric variables ride up to the box") {
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd y(2);
    y << 1.0, -1.0;
    const auto beta = eplap::solve_box_simplex_qp(q, y, 0.5, cfg);
    CHECK(beta(0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(beta(1) == doctest::Approx(0.5).epsilon(1e-10));
  }

  SUBCASE("single-class labels force beta = 0") {
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(3, 3);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(3);
    const auto beta = eplap::solve_box_simplex_qp(q, y, 0.5, cfg);
    CHECK(beta.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("qp matches the exhaustive active-set oracle") {
  TrainConfig cfg;
  cfg.qp_tol = 1e-12;
  std::mt19937_64 rng(515);
  for (int trial = 0; trial < 12; ++trial) {
    const int l = 3 + static_cast<int>(rng() % 6);  // 3..8
    const Eigen::MatrixXd a = testutil::random_matrix(l, l, rng());
    const Eigen::MatrixXd q =
        a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(l, l);
    Eigen::VectorXd y(l);
    for (int i = 0; i < l; ++i) y(i) = (rng() & 1u) ? 1.0 : -1.0;
    y(0) = 1.0;
    y(1) = -1.0;  // both classes present
    const double box = 1.0 / l;

    const auto beta = eplap::solve_box_simplex_qp(q, y, box, cfg);
    // feasibility is exact on the box, tight on the equality
    CHECK(beta.minCoeff() >= 0.0);
    CHECK(beta.maxCoeff() <= box);
    CHECK(std::abs(y.dot(beta)) <= 1e-10);

    const auto ref = qp_brute_force(q, y, box);
    REQUIRE(std::isfinite(ref.value));
    CHECK(qp_value(beta, q) == doctest::Approx(ref.value).epsilon(1e-6));
    CHECK((beta - ref.beta).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("qp satisfies the KKT conditions") {
  TrainConfig cfg;
  cfg.qp_tol = 1e-12;
  std::mt19937_64 rng(99);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int l = 6;
    const Eigen::MatrixXd a = testutil::random_matrix(l, l, rng());
    const Eigen::MatrixXd q =
        a * a.transpose() + 0.2 * Eigen::MatrixXd::Identity(l, l);
    Eigen::VectorXd y(l);
    for (int i = 0; i < l; ++i) y(i) = (i % 2 == 0) ? 1.0 : -1.0;
    // generous box so the stationarity conditions are exercised on free
    // coordinates, not just at saturated bounds
    const double box = 2.0;
    const auto beta = eplap::solve_box_simplex_qp(q, y, box, cfg);
    const Eigen::VectorXd grad = Eigen::VectorXd::Ones(l) - q * beta;

    // estimate the equality multiplier from the free coordinates
    double nu = 0.0;
    int free_count = 0;
    for (int i = 0; i < l; ++i) {
      if (beta(i) > 1e-9 && beta(i) < box - 1e-9) {
        nu += y(i) * grad(i);
        ++free_count;
      }
    }
    if (free_count == 0) continue;
    nu /= free_count;
    ++checked;
    for (int i = 0; i < l; ++i) {
      const double lagr = grad(i) - nu * y(i);
      if (beta(i) <= 1e-9) {
        CHECK(lagr <= 1e-6);  // pushing up would leave the box
      } else if (beta(i) >= box - 1e-9) {
        CHECK(lagr >= -1e-6);
      } else {
        CHECK(std::abs(lagr) <= 1e-6);
      }
    }
  }
  CHECK(checked >= 5);  // the loop must actually exercise the conditions
}

TEST_CASE("single-candidate training is bitwise the plain solve") {
  const Eigen::Index n = 18;
  const Eigen::MatrixXd x = testutil::random_matrix(n, 2, 73);
  eplap::GraphSpec gs;
  gs.k_neighbors = 4;
  const auto g = eplap::build_knn_graph(x, gs);
  const auto cands = single_matrix(2.0 * eplap::laplacian(g), 2.0);
  const KernelSpec kspec = rbf(1.0);
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.5;
  TrainConfig cfg;

  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  auto mask = std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i : {0, 3, 7, 11}) {
    mask[static_cast<std::size_t>(i)] = 1;
    y(i) = (i < 7) ? 1.0 : -1.0;
  }

  const auto model = eplap::train_eplapkls_targets(x, y, mask, cands, kspec,
                                                   params, 2.0, cfg);
  const auto again = eplap::train_eplapkls_targets(x, y, mask, cands, kspec,
                                                   params, 2.0, cfg);
  CHECK(model.alpha == again.alpha);  // bitwise determinism

  // mu has a single vertex; the loop stops once it sees mu unchanged
  REQUIRE(model.mu.size() == 1);
  CHECK(model.mu(0) == 1.0);
  CHECK(model.converged);
  CHECK(model.objective_trace.size() == 2);
  CHECK(model.bias == 0.0);
  CHECK(model.loss_kind == LossKind::squared);

  // and the alpha is exactly one fixed-mu solve
  const auto resolved = eplap::resolve_kernel_spec(x, kspec);
  const Eigen::MatrixXd k = eplap::gram(x, resolved);
  const Eigen::VectorXd direct =
      eplap::solve_kls_alpha(k, cands.matrices[0], y, mask, params);
  CHECK(model.alpha == direct);
}

TEST_CASE("identical candidates share the weight evenly") {
  const Eigen::Index n = 16;
  const Eigen::MatrixXd x = testutil::random_matrix(n, 2, 29);
  eplap::GraphSpec gs;
  gs.k_neighbors = 4;
  const auto g = eplap::build_knn_graph(x, gs);
  const Eigen::MatrixXd L2 = 2.0 * eplap::laplacian(g);

  CandidateSet triple;
  triple.matrices = {L2, L2, L2};
  triple.p_values = {2.0, 2.0, 2.0};

  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  auto mask = std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i : {1, 4, 9, 13}) {
    mask[static_cast<std::size_t>(i)] = 1;
    y(i) = (i < 9) ? 1.0 : -1.0;
  }
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 1.0;
  TrainConfig cfg;
  const double gamma = 2.0;

  const auto model = eplap::train_eplapkls_targets(x, y, mask, triple,
                                                   rbf(1.0), params, gamma, cfg);
  for (int c = 0; c < 3; ++c) {
    CHECK(model.mu(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }

  // equivalent single candidate carries sum mu^gamma = 3^(1-gamma)
  const double scale = std::pow(3.0, 1.0 - gamma);
  const auto model1 = eplap::train_eplapkls_targets(
      x, y, mask, single_matrix(scale * L2), rbf(1.0), params, gamma, cfg);
  CHECK((model.alpha - model1.alpha).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("two-moons squared-loss run fits its labels monotonically") {
  auto ds = eplap::make_two_moons(200, 0.08, 11);
  eplap::apply_label_mask(ds, 0.02, 21);  // 2 labeled per class
  REQUIRE(ds.labeled_count() == 4);

  eplap::GraphSpec gs;
  gs.k_neighbors = 8;
  const auto g = eplap::build_knn_graph(ds.features, gs);
  CandidateSet cands;
  for (double p : {2.0, 2.5, 2.8}) {
    eplap::PLapConfig pc;
    pc.p = p;
    pc.embed_dim = 32;
    cands.matrices.push_back(eplap::approximate_p_laplacian(g, pc).matrix.matrix);
    cands.p_values.push_back(p);
  }

  KernelSpec kspec;  // rbf, auto bandwidth
  RegParams params;
  params.gamma_a = 1e-4;
  params.gamma_i = 1.0;
  TrainConfig cfg;
  const auto model =
      eplap::train_eplapkls(ds, cands, kspec, params, 2.0, cfg);

  REQUIRE(model.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < model.objective_trace.size(); ++i) {
    CHECK(model.objective_trace[i] <= model.objective_trace[i - 1] + 1e-9);
  }
  // every labeled sample ends on its own side of the decision boundary
  const Eigen::VectorXd scores = eplap::predict(model, ds.features);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (!ds.labeled_mask[static_cast<std::size_t>(i)]) continue;
    const double want = ds.labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    CHECK(scores(i) * want > 0.0);
  }
  // weights stay on the simplex
  CHECK(model.mu.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(model.mu.minCoeff() >= 0.0);
}

TEST_CASE("hinge training with no manifold term equals a plain kernel svm") {
  const int l = 6;
  Eigen::MatrixXd x(l, 2);
  x << 1.2, 0.8, 0.9, 1.1, 1.4, 1.3,  // positives around (1,1)
      -1.0, -0.7, -1.3, -1.1, -0.8, -1.2;  // negatives around (-1,-1)
  Eigen::VectorXd y(l);
  y << 1, 1, 1, -1, -1, -1;
  const auto mask = all_labeled(l);
  const KernelSpec kspec = rbf(1.5);
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.0;
  TrainConfig cfg;
  cfg.qp_tol = 1e-12;

  const auto model = eplap::train_eplapsvm_targets(
      x, y, mask, single_matrix(Eigen::MatrixXd::Zero(l, l)), kspec, params,
      2.0, cfg);

  // oracle: brute-force the standard kernel svm dual on the labeled block
  const Eigen::MatrixXd k = eplap::gram(x, kspec);
  Eigen::MatrixXd q_std(l, l);
  for (int i = 0; i < l; ++i) {
    for (int j = 0; j < l; ++j) {
      q_std(i, j) = y(i) * y(j) * k(i, j) / (2.0 * params.gamma_a);
    }
  }
  const auto ref = qp_brute_force(q_std, y, 1.0 / l);
  Eigen::VectorXd alpha_ref(l);
  for (int i = 0; i < l; ++i) {
    alpha_ref(i) = y(i) * ref.beta(i) / (2.0 * params.gamma_a);
  }
  CHECK((model.alpha - alpha_ref).cwiseAbs().maxCoeff() < 1e-6);

  // bias agrees through the margin support vectors of the oracle solution
  const Eigen::VectorXd f_ref = k * alpha_ref;
  double acc = 0.0;
  int cnt = 0;
  for (int i = 0; i < l; ++i) {
    if (ref.beta(i) > 1e-8 && ref.beta(i) < 1.0 / l - 1e-8) {
      acc += y(i) - f_ref(i);
      ++cnt;
    }
  }
  if (cnt > 0) {
    CHECK(model.bias == doctest::Approx(acc / cnt).epsilon(1e-4));
  }
  CHECK(model.loss_kind == LossKind::hinge);
}

TEST_CASE("complementary slackness on a separable instance") {
  const int l = 8;
  Eigen::MatrixXd x(l, 1);
  Eigen::VectorXd y(l);
  for (int i = 0; i < l; ++i) {
    x(i, 0) = (i < 4) ? 1.0 + 0.3 * i : -1.0 - 0.3 * (i - 4);
    y(i) = (i < 4) ? 1.0 : -1.0;
  }
  RegParams params;
  params.gamma_a = 0.02;
  params.gamma_i = 0.0;
  TrainConfig cfg;
  cfg.qp_tol = 1e-12;
  const auto model = eplap::train_eplapsvm_targets(
      x, y, all_labeled(l), single_matrix(Eigen::MatrixXd::Zero(l, l)),
      rbf(1.0), params, 2.0, cfg);

  // recompute the dual at the final state to look at beta
  const Eigen::MatrixXd k = eplap::gram(x, rbf(1.0));
  const auto dual = eplap::build_svm_dual(k, Eigen::MatrixXd::Zero(l, l), y,
                                          all_labeled(l), params);
  const auto beta = eplap::solve_box_simplex_qp(dual.q, y, 1.0 / l, cfg);
  const Eigen::VectorXd margins =
      y.array() * (eplap::predict(model, x).array());
  for (int i = 0; i < l; ++i) {
    if (beta(i) <= 1e-9) CHECK(margins(i) >= 1.0 - 1e-6);
    if (beta(i) >= 1.0 / l - 1e-9) CHECK(margins(i) <= 1.0 + 1e-6);
  }
}

TEST_CASE("symmetric two-point svm has zero bias") {
  Eigen::MatrixXd x(2, 2);
  x << 1.0, 0.5, -1.0, -0.5;
  Eigen::VectorXd y(2);
  y << 1.0, -1.0;
  KernelSpec lin;
  lin.kind = KernelKind::linear;
  lin.jitter = 1e-8;
  RegParams params;
  params.gamma_a = 0.1;
  params.gamma_i = 0.0;
  TrainConfig cfg;
  cfg.qp_tol = 1e-12;
  const auto model = eplap::train_eplapsvm_targets(
      x, y, all_labeled(2), single_matrix(Eigen::MatrixXd::Zero(2, 2)), lin,
      params, 2.0, cfg);
  CHECK(std::abs(model.bias) < 1e-10);
  const Eigen::VectorXd mid = eplap::predict(model, Eigen::MatrixXd::Zero(1, 2));
  CHECK(std::abs(mid(0)) < 1e-10);
}

TEST_CASE("hinge trace is non-increasing on random desk problems") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 4; ++trial) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng() % 20);
    const Eigen::MatrixXd x = testutil::random_matrix(n, 2, rng());
    const auto cands = laplacian_candidates(x, 4, {2.0, 2.5, 2.8});
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    auto mask = std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; i += 3) {
      mask[static_cast<std::size_t>(i)] = 1;
      y(i) = (rng() & 1u) ? 1.0 : -1.0;
    }
    y(0) = 1.0;
    y(3) = -1.0;
    RegParams params;
    params.gamma_a = 0.05;
    params.gamma_i = 2.0;
    TrainConfig cfg;
    const auto model = eplap::train_eplapsvm_targets(x, y, mask, cands,
                                                     rbf(1.0), params, 2.0, cfg);
    REQUIRE(model.objective_trace.size() >= 2);
    for (std::size_t i = 1; i < model.objective_trace.size(); ++i) {
      CHECK(model.objective_trace[i] <= model.objective_trace[i - 1] + 1e-9);
    }
    CHECK(model.mu.sum() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("binary dataset fronts encode the larger label as positive") {
  Dataset ds = blob_dataset(2, 10, 0.3, 5);
  for (auto& label : ds.labels) label = (label == 0) ? 3 : 7;  // ids 3 and 7
  const auto cands = laplacian_candidates(ds.features, 3, {2.0});
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.1;
  TrainConfig cfg;
  const auto model =
      eplap::train_eplapkls(ds, cands, rbf(2.0), params, 2.0, cfg);
  const Eigen::VectorXd scores = eplap::predict(model, ds.features);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const bool positive = ds.labels[static_cast<std::size_t>(i)] == 7;
    CHECK((scores(i) > 0) == positive);
  }

  Dataset three = blob_dataset(3, 5, 0.2, 6);
  CHECK_THROWS_AS(eplap::train_eplapkls(three, laplacian_candidates(three.features, 3, {2.0}),
                                        rbf(2.0), params, 2.0, cfg),
                  std::invalid_argument);
}

TEST_CASE("single-class labeled set cannot train the hinge loss") {
  Eigen::MatrixXd x = testutil::random_matrix(6, 2, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(6);
  TrainConfig cfg;
  RegParams params;
  params.gamma_a = 0.1;
  CHECK_THROWS_AS(
      eplap::train_eplapsvm_targets(x, y, all_labeled(6),
                                    single_matrix(Eigen::MatrixXd::Zero(6, 6)),
                                    rbf(1.0), params, 2.0, cfg),
      std::invalid_argument);
}

TEST_CASE("prediction basics") {
  eplap::TrainedModel model;
  model.train_features = testutil::random_matrix(5, 2, 100);
  model.alpha = Eigen::VectorXd::Zero(5);
  model.alpha(0) = 1.0;
  model.bias = 0.0;
  model.kernel = rbf(0.8, 0.0);
  model.mu = Eigen::VectorXd::Ones(1);

  SUBCASE("unit coefficient at its own training point scores one") {
    const Eigen::VectorXd s =
        eplap::predict(model, model.train_features.topRows(1));
    CHECK(s(0) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("zero alpha leaves only the bias") {
    model.alpha.setZero();
    model.bias = -0.75;
    const Eigen::VectorXd s = eplap::predict(model, testutil::random_matrix(4, 2, 8));
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(s(i) == -0.75);
  }

  SUBCASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(eplap::predict(model, testutil::random_matrix(2, 3, 9)),
                    std::invalid_argument);
  }
}

TEST_CASE("prediction on training rows matches the gram expansion") {
  Dataset ds = blob_dataset(2, 8, 0.4, 17);
  const auto cands = laplacian_candidates(ds.features, 3, {2.2});
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.3;
  TrainConfig cfg;
  const auto model = eplap::train_eplapkls(ds, cands, rbf(1.7), params, 2.0, cfg);
  const Eigen::MatrixXd k = eplap::gram(ds.features, model.kernel);
  const Eigen::VectorXd via_gram =
      (k - model.kernel.jitter * Eigen::MatrixXd::Identity(16, 16)) * model.alpha;
  const Eigen::VectorXd scores = eplap::predict(model, ds.features);
  CHECK((scores - via_gram).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("one-vs-rest on two classes mirrors the binary decision") {
  Dataset ds = blob_dataset(2, 12, 0.5, 23);
  // hide some labels to exercise the semi-supervised path
  for (std::size_t i = 0; i < ds.labeled_mask.size(); ++i) {
    ds.labeled_mask[i] = (i % 3 == 0) ? 1 : 0;
  }
  const auto cands = laplacian_candidates(ds.features, 4, {2.0, 2.6});
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.5;
  TrainConfig cfg;
  const auto ovr = eplap::train_one_vs_rest(ds, cands, rbf(2.0), params, 2.0,
                                            cfg, LossKind::squared);
  REQUIRE(ovr.class_ids == std::vector<int>{0, 1});
  const auto binary = eplap::train_eplapkls(ds, cands, rbf(2.0), params, 2.0, cfg);

  const Eigen::MatrixXd queries = testutil::random_matrix(40, 2, 77, -5.0, 5.0);
  const auto labels = eplap::predict_labels(ovr, queries);
  const Eigen::VectorXd scores = eplap::predict(binary, queries);
  for (Eigen::Index i = 0; i < 40; ++i) {
    const int want = scores(i) > 0.0 ? 1 : 0;
    CHECK(labels[static_cast<std::size_t>(i)] == want);
  }
}

TEST_CASE("one-vs-rest recovers three separable blobs") {
  Dataset ds = blob_dataset(3, 10, 0.4, 9);
  for (std::size_t i = 0; i < ds.labeled_mask.size(); ++i) {
    ds.labeled_mask[i] = (i < 9) ? 1 : 0;  // three labeled per class
  }
  const auto cands = laplacian_candidates(ds.features, 4, {2.0});
  RegParams params;
  params.gamma_a = 0.02;
  params.gamma_i = 0.2;
  TrainConfig cfg;
  const auto ovr = eplap::train_one_vs_rest(ds, cands, rbf(2.0), params, 2.0,
                                            cfg, LossKind::squared);
  const auto predicted = eplap::predict_labels(ovr, ds.features);
  CHECK(eplap::accuracy(predicted, ds.labels) == 1.0);
}

TEST_CASE("one-vs-rest scales to the 21-class protocol shape") {
  Dataset ds = blob_dataset(21, 8, 0.2, 3);
  // five labeled per class
  std::vector<int> seen(21, 0);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const int cls = ds.labels[i];
    ds.labeled_mask[i] = (seen[static_cast<std::size_t>(cls)]++ < 5) ? 1 : 0;
  }
  const auto cands = laplacian_candidates(ds.features, 5, {2.0});
  RegParams params;
  params.gamma_a = 0.05;
  params.gamma_i = 0.0;
  TrainConfig cfg;
  const auto ovr = eplap::train_one_vs_rest(ds, cands, rbf(2.0), params, 2.0,
                                            cfg, LossKind::squared, 3);
  CHECK(ovr.models.size() == 21);
  CHECK(ovr.class_ids.size() == 21);
  for (const auto& m : ovr.models) {
    CHECK(m.alpha.size() == ds.size());  // trained on the full n
  }
  const Eigen::MatrixXd scores = eplap::predict_scores(ovr, ds.features.topRows(7));
  CHECK(scores.rows() == 7);
  CHECK(scores.cols() == 21);

  // threaded and serial runs agree bitwise
  const auto serial = eplap::train_one_vs_rest(ds, cands, rbf(2.0), params, 2.0,
                                               cfg, LossKind::squared, 1);
  for (std::size_t c = 0; c < 21; ++c) {
    CHECK(ovr.models[c].alpha == serial.models[c].alpha);
  }
}

TEST_CASE("one-vs-rest requires every class to have a labeled sample") {
  Dataset ds = blob_dataset(3, 6, 0.3, 2);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    ds.labeled_mask[i] = (ds.labels[i] == 2) ? 0 : 1;  // class 2 fully hidden
  }
  const auto cands = laplacian_candidates(ds.features, 3, {2.0});
  RegParams params;
  params.gamma_a = 0.1;
  TrainConfig cfg;
  CHECK_THROWS_WITH_AS(
      eplap::train_one_vs_rest(ds, cands, rbf(2.0), params, 2.0, cfg,
                               LossKind::squared),
      doctest::Contains("class 2"), std::invalid_argument);

  Dataset single = blob_dataset(1, 6, 0.3, 2);
  CHECK_THROWS_AS(eplap::train_one_vs_rest(single, laplacian_candidates(single.features, 2, {2.0}),
                                           rbf(2.0), params, 2.0, cfg,
                                           LossKind::squared),
                  std::invalid_argument);
}

TEST_CASE("training configuration is validated") {
  Dataset ds = blob_dataset(2, 6, 0.3, 4);
  const auto cands = laplacian_candidates(ds.features, 3, {2.0});
  RegParams params;
  params.gamma_a = 0.1;
  TrainConfig cfg;

  SUBCASE("negative regularization") {
    params.gamma_a = -0.1;
    CHECK_THROWS_AS(eplap::train_eplapkls(ds, cands, rbf(1.0), params, 2.0, cfg),
                    std::invalid_argument);
  }
  SUBCASE("gamma exponent must relax") {
    CHECK_THROWS_AS(eplap::train_eplapkls(ds, cands, rbf(1.0), params, 1.0, cfg),
                    std::invalid_argument);
  }
  SUBCASE("bad outer iteration budget") {
    cfg.outer_max_iters = 0;
    CHECK_THROWS_AS(eplap::train_eplapkls(ds, cands, rbf(1.0), params, 2.0, cfg),
                    std::invalid_argument);
  }
  SUBCASE("an exhausted budget flags non-convergence") {
    cfg.outer_max_iters = 1;
    params.gamma_i = 0.5;
    const auto model = eplap::train_eplapkls(ds, cands, rbf(1.0), params, 2.0, cfg);
    CHECK_FALSE(model.converged);
    CHECK(model.objective_trace.size() == 1);
  }
}
