#include "eplap/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace eplap {

void KernelSpec::validate() const {
  if (bandwidth && !(*bandwidth > 0.0)) {
    throw std::invalid_argument("kernel: bandwidth must be > 0");
  }
  if (!(jitter >= 0.0)) {
    throw std::invalid_argument("kernel: jitter must be >= 0");
  }
}

KernelSpec resolve_kernel_spec(const Eigen::MatrixXd& features, KernelSpec spec) {
  spec.validate();
  if (spec.kind != KernelKind::rbf || spec.bandwidth) return spec;
  const Eigen::Index n = features.rows();
  if (n < 2) {
    throw std::runtime_error(
        "kernel: cannot infer a bandwidth from fewer than 2 samples; pass one "
        "explicitly");
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dist.push_back((features.row(i) - features.row(j)).norm());
    }
  }
  std::sort(dist.begin(), dist.end());
  const std::size_t m = dist.size();
  const double median =
      (m % 2 == 1) ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  if (!(median > 0.0)) {
    throw std::runtime_error(
        "kernel: median pairwise distance is zero (identical points); pass an "
        "explicit bandwidth");
  }
  spec.bandwidth = median;
  return spec;
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& features, const KernelSpec& spec) {
  spec.validate();
  const Eigen::Index n = features.rows();
  if (n < 1) throw std::invalid_argument("gram: need at least one sample");
  Eigen::MatrixXd k;
  if (spec.kind == KernelKind::linear) {
    k = features * features.transpose();
  } else {
    if (!spec.bandwidth) {
      throw std::logic_error(
          "gram: rbf bandwidth unresolved; call resolve_kernel_spec first");
    }
    const double sigma = *spec.bandwidth;
    const Eigen::VectorXd sq = features.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = -2.0 * (features * features.transpose());
    d2.colwise() += sq;
    d2.rowwise() += sq.transpose();
    d2 = d2.cwiseMax(0.0);
    k = (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
  }
  k.diagonal().array() += spec.jitter;
  return k;
}

Eigen::VectorXd kernel_row(const Eigen::MatrixXd& train_features,
                           const Eigen::VectorXd& x, const KernelSpec& spec) {
  spec.validate();
  if (train_features.cols() != x.size()) {
    throw std::invalid_argument("kernel_row: feature dimension mismatch");
  }
  if (spec.kind == KernelKind::linear) {
    return train_features * x;
  }
  if (!spec.bandwidth) {
    throw std::logic_error(
        "kernel_row: rbf bandwidth unresolved; call resolve_kernel_spec first");
  }
  const double sigma = *spec.bandwidth;
  const Eigen::VectorXd d2 =
      (train_features.rowwise() - x.transpose()).rowwise().squaredNorm();
  return (-d2.array() / (2.0 * sigma * sigma)).exp().matrix();
}

}  // namespace eplap
