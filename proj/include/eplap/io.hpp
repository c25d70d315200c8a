#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "eplap/learn.hpp"
#include "eplap/plap.hpp"

namespace eplap {

/// Raised when a cache or model file fails its integrity or format checks.
struct CacheError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PLapCacheEntry {
  PLapEigenSystem eigensystem;
  PLapProvenance provenance;
};

/// Canonical cache file name for a (graph digest, p, K) triple.
std::string plap_cache_filename(std::uint64_t graph_digest, double p,
                                Eigen::Index embed_dim);

/// Binary cache: header {magic, version, n, K, p, graph digest, flags},
/// row-major F, lambda, and a trailing content digest. The write is atomic
/// (temp file + rename).
void save_plap_cache(const std::string& path, const PLapEigenSystem& sys,
                     const PLapProvenance& prov);

/// Verifies magic, version, and the recomputed content digest before
/// returning; throws CacheError on any mismatch.
PLapCacheEntry load_plap_cache(const std::string& path);

/// Versioned JSON model container: alpha, bias, mu, kernel spec, p values,
/// hyperparameters, training features, and the feature digest.
void save_model_json(const std::string& path, const TrainedModel& model);
TrainedModel load_model_json(const std::string& path);

/// On-disk wrapper for classifiers: a single binary model with its two
/// original class ids, or a one-vs-rest family with one model per class.
struct ModelBundle {
  std::string kind;                  // "binary" | "ovr"
  std::vector<int> class_ids;        // binary: {negative, positive}
  std::vector<TrainedModel> models;  // size 1 for binary
};

void save_model_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_model_bundle(const std::string& path);

/// FNV-1a digest of a dense matrix (shape + element bits), used to tie model
/// files to their training features.
std::uint64_t matrix_digest(const Eigen::MatrixXd& m);

}  // namespace eplap
