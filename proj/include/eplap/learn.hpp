#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "eplap/dataset.hpp"
#include "eplap/ensemble.hpp"
#include "eplap/kernel.hpp"

namespace eplap {

/// Ambient (gamma_a) and intrinsic (gamma_i) regularization strengths.
struct RegParams {
  double gamma_a = 1e-6;
  double gamma_i = 0.0;
};

enum class LossKind { squared, hinge };

struct TrainConfig {
  int outer_max_iters = 50;
  double outer_rel_tol = 1e-6;
  int qp_max_iters = 200000;
  double qp_tol = 1e-10;
};

/// Representer-expansion model over all training points (labeled + unlabeled).
struct TrainedModel {
  Eigen::VectorXd alpha;            // one coefficient per training point
  double bias = 0.0;                // SVM only, 0 for KLS
  Eigen::VectorXd mu;               // learned simplex weights
  KernelSpec kernel;                // resolved spec (bandwidth pinned)
  Eigen::MatrixXd train_features;   // needed by the kernel expansion
  std::vector<double> objective_trace;
  LossKind loss_kind = LossKind::squared;
  std::vector<double> p_values;     // candidate metadata, carried into model files
  RegParams params;
  double gamma_exp = 2.0;
  bool converged = true;
};

/// Solves (J K + gamma_a I + (gamma_i / n^2) L K) alpha = y, with J the
/// labeled-diagonal selector and y the zero-padded label vector.
/// Throws std::runtime_error on a numerically singular system.
Eigen::VectorXd solve_kls_alpha(const Eigen::MatrixXd& kmat,
                                const Eigen::MatrixXd& fused,
                                const Eigen::VectorXd& y,
                                const std::vector<std::uint8_t>& labeled_mask,
                                const RegParams& params);

/// Squared-loss objective
/// (1/l) sum_labeled (y_i - (K alpha)_i)^2 + gamma_a alpha^T K alpha
///   + (gamma_i / n^2) alpha^T K (sum mu_k^gamma L_k) K alpha.
double kls_objective(const Eigen::VectorXd& alpha, const Eigen::VectorXd& mu,
                     const Eigen::MatrixXd& kmat, const CandidateSet& cands,
                     const Eigen::VectorXd& y,
                     const std::vector<std::uint8_t>& labeled_mask,
                     const RegParams& params, double gamma_exp);

/// Hinge-loss primal objective with xi_i = max(0, 1 - y_i (f(x_i))).
double svm_objective(const Eigen::VectorXd& alpha, double bias,
                     const Eigen::VectorXd& mu, const Eigen::MatrixXd& kmat,
                     const CandidateSet& cands, const Eigen::VectorXd& y,
                     const std::vector<std::uint8_t>& labeled_mask,
                     const RegParams& params, double gamma_exp);

/// Dual pieces of the hinge-loss solve: Q = Y J K M^-1 J^T Y with
/// M = 2 gamma_a I + 2 (gamma_i / n^2) L K, and the linear map
/// alpha = recover * beta. `labeled` lists the labeled row indices in
/// ascending order; y_labeled follows that order.
struct SvmDual {
  Eigen::MatrixXd q;        // l x l, symmetric PSD
  Eigen::MatrixXd recover;  // n x l
  std::vector<Eigen::Index> labeled;
};

SvmDual build_svm_dual(const Eigen::MatrixXd& kmat, const Eigen::MatrixXd& fused,
                       const Eigen::VectorXd& y_labeled,
                       const std::vector<std::uint8_t>& labeled_mask,
                       const RegParams& params);

/// Maximizes sum beta_i - 1/2 beta^T Q beta over
/// { 0 <= beta_i <= box, sum beta_i y_i = 0 } by projected gradient ascent
/// with exact projection and monotone step acceptance. `warm_start` may be
/// empty; a single-class y makes beta = 0 the only feasible point.
Eigen::VectorXd solve_box_simplex_qp(const Eigen::MatrixXd& q,
                                     const Eigen::VectorXd& y_l, double box,
                                     const TrainConfig& cfg,
                                     const Eigen::VectorXd& warm_start = {});

/// Alternating trainer for the squared loss: alpha from the linear solve,
/// mu from the closed-form weight update, repeated until the objective
/// stabilizes. y has +-1 at labeled positions and 0 elsewhere.
TrainedModel train_eplapkls_targets(const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& y,
                                    const std::vector<std::uint8_t>& labeled_mask,
                                    const CandidateSet& cands,
                                    const KernelSpec& kspec,
                                    const RegParams& params, double gamma_exp,
                                    const TrainConfig& cfg);

/// Alternating trainer for the hinge loss: dual QP for beta, alpha recovery,
/// KKT bias, then the closed-form mu update. Requires both classes among the
/// labeled samples.
TrainedModel train_eplapsvm_targets(const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& y,
                                    const std::vector<std::uint8_t>& labeled_mask,
                                    const CandidateSet& cands,
                                    const KernelSpec& kspec,
                                    const RegParams& params, double gamma_exp,
                                    const TrainConfig& cfg);

/// Dataset front ends for binary problems: exactly two distinct labels, the
/// larger one encoded +1.
TrainedModel train_eplapkls(const Dataset& train, const CandidateSet& cands,
                            const KernelSpec& kspec, const RegParams& params,
                            double gamma_exp, const TrainConfig& cfg);
TrainedModel train_eplapsvm(const Dataset& train, const CandidateSet& cands,
                            const KernelSpec& kspec, const RegParams& params,
                            double gamma_exp, const TrainConfig& cfg);

/// Decision scores f(x) = sum_i alpha_i k(x_i, x) + b for each query row.
Eigen::VectorXd predict(const TrainedModel& model, const Eigen::MatrixXd& queries);

/// One binary model per class (that class +1, rest -1), sharing one gram and
/// one candidate set across tasks.
struct OneVsRestModel {
  std::vector<int> class_ids;
  std::vector<TrainedModel> models;
};

OneVsRestModel train_one_vs_rest(const Dataset& train, const CandidateSet& cands,
                                 const KernelSpec& kspec, const RegParams& params,
                                 double gamma_exp, const TrainConfig& cfg,
                                 LossKind loss, int threads = 1);

/// q x #classes score matrix, one column per class in class_ids order.
Eigen::MatrixXd predict_scores(const OneVsRestModel& ovr,
                               const Eigen::MatrixXd& queries);

/// Argmax-score class decision per query row.
std::vector<int> predict_labels(const OneVsRestModel& ovr,
                                const Eigen::MatrixXd& queries);

}  // namespace eplap
