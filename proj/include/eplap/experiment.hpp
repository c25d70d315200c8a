#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "eplap/dataset.hpp"
#include "eplap/graph.hpp"
#include "eplap/kernel.hpp"
#include "eplap/learn.hpp"
#include "eplap/plap.hpp"

namespace eplap {

struct DataSourceConfig {
  enum class Kind { two_moons, csv };
  Kind kind = Kind::two_moons;
  int n = 200;
  double noise = 0.08;
  std::uint64_t seed = 1;
  std::string path;  // csv only
  CsvSchema schema;
};

/// One method row of the comparison table: a named candidate set. A method
/// with use_standard_laplacian uses L = D - W itself (the LapR baseline);
/// otherwise each p value contributes one approximated L^p candidate.
struct MethodConfig {
  std::string name;
  std::vector<double> p_values;
  bool use_standard_laplacian = false;
};

struct ExperimentConfig {
  DataSourceConfig data;

  int train_per_class = 50;
  std::vector<double> fractions = {0.1, 0.2, 0.3, 0.5};
  std::uint64_t split_seed = 1;
  std::int64_t mask_seed = -1;  // -1: the mask follows the split seed

  GraphSpec graph;
  PLapConfig plap;    // p is taken from the method configs
  KernelSpec kernel;

  std::vector<MethodConfig> methods;
  LossKind loss = LossKind::squared;
  RegParams params;
  std::vector<double> gamma_a_grid;  // >1 entries trigger holdout validation
  std::vector<double> gamma_i_grid;
  double gamma_exp = 2.0;
  TrainConfig train;

  int repetitions = 5;
  std::string cache_dir = ".eplap-cache";
  int threads = 0;  // 0 = hardware concurrency

  std::vector<double> p_grid;   // pgrid subcommand
  double pgrid_fraction = 0.1;
};

/// Parses the documented JSON config schema, applying defaults for missing
/// keys and validating p > 1 grids and non-empty method lists. The
/// EPLAP_CACHE_DIR environment variable overrides cache_dir when set.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// Fully-resolved config (every default made explicit) for embedding into
/// results files.
nlohmann::json resolved_config_json(const ExperimentConfig& cfg);

/// FNV-1a digest of the resolved config, hex-encoded.
std::string config_digest(const ExperimentConfig& cfg);

struct CacheReport {
  std::vector<std::string> files;
  int computed = 0;
  int hits = 0;
  int recomputed = 0;  // digest mismatches overwritten
};

/// Ensures one verified cache file per (graph digest, p, K); loads instead of
/// recomputing when a valid file exists, recomputes on digest failure.
CacheReport ensure_plap_caches(const Graph& g, const std::vector<double>& p_values,
                               const PLapConfig& cfg, const std::string& cache_dir);

/// Full protocol: repetition x labeled-fraction x method grid with per-cell
/// AP/mAP/accuracy, mu, objective traces and wall time, plus mean/stddev
/// aggregates. Timing lives under the top-level "timing" key so byte-level
/// comparisons can drop it. Cell failures are recorded and do not abort the
/// run; the "all_ok" field reflects them.
nlohmann::json run_experiment(const ExperimentConfig& cfg);

/// Single-candidate sweep over p_grid at pgrid_fraction labeled data;
/// reports the metric curve and its argmax.
nlohmann::json run_pgrid(const ExperimentConfig& cfg);

/// Flat CSV of the headline aggregate table (method, fraction, mAP, acc).
std::string results_csv(const nlohmann::json& results);

}  // namespace eplap
