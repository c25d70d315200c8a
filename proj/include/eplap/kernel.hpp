#pragma once

#include <Eigen/Core>

#include <optional>

namespace eplap {

enum class KernelKind { rbf, linear };

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  std::optional<double> bandwidth;  // rbf only; nullopt = median pairwise distance
  double jitter = 1e-8;

  void validate() const;
};

/// Pins an auto bandwidth to the median pairwise training distance so that
/// later kernel_row calls agree with the training gram. No-op for explicit
/// bandwidths and linear kernels. Throws when all points coincide.
KernelSpec resolve_kernel_spec(const Eigen::MatrixXd& features, KernelSpec spec);

/// Gram matrix K_ij = k(x_i, x_j) + jitter * I.
/// rbf: exp(-|xi - xj|^2 / (2 sigma^2)); linear: xi . xj.
Eigen::MatrixXd gram(const Eigen::MatrixXd& features, const KernelSpec& spec);

/// Kernel evaluations k(x_i, x) against every training point (no jitter).
Eigen::VectorXd kernel_row(const Eigen::MatrixXd& train_features,
                           const Eigen::VectorXd& x, const KernelSpec& spec);

}  // namespace eplap
