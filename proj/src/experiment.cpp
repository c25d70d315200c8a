#include "eplap/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>

#include "eplap/detail/digest.hpp"
#include "eplap/detail/parallel.hpp"
#include "eplap/ensemble.hpp"
#include "eplap/eval.hpp"
#include "eplap/io.hpp"
#include "eplap/version.hpp"

namespace eplap {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Mask seeds are decoupled from split seeds so redrawing a mask never moves
// the membership, then spread per repetition and fraction.
std::uint64_t mask_seed_for(std::uint64_t base, int rep, std::size_t fraction_idx) {
  return (base ^ 0x9e3779b97f4a7c15ULL) +
         1315423911ULL * static_cast<std::uint64_t>(rep) +
         static_cast<std::uint64_t>(fraction_idx);
}

LossKind parse_loss(const std::string& s) {
  if (s == "kls" || s == "squared") return LossKind::squared;
  if (s == "svm" || s == "hinge") return LossKind::hinge;
  throw std::invalid_argument("config: loss must be 'kls' or 'svm', got '" + s +
                              "'");
}

std::vector<MethodConfig> default_methods() {
  return {
      MethodConfig{"LapR", {2.0}, true},
      MethodConfig{"pLapR", {2.8}, false},
      MethodConfig{"EpLapR-3G", {2.5, 2.7, 2.8}, false},
      MethodConfig{"EpLapR-5G", {2.4, 2.5, 2.6, 2.7, 2.8}, false},
  };
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  if (cfg.data.kind == DataSourceConfig::Kind::csv && cfg.data.path.empty()) {
    throw std::invalid_argument("config: csv data source needs a path");
  }
  if (cfg.train_per_class < 1) {
    throw std::invalid_argument("config: train_per_class must be >= 1");
  }
  if (cfg.fractions.empty()) {
    throw std::invalid_argument("config: fractions must be non-empty");
  }
  for (const double f : cfg.fractions) {
    if (!(f > 0.0) || f > 1.0) {
      throw std::invalid_argument("config: fractions must lie in (0, 1]");
    }
  }
  if (cfg.methods.empty()) {
    throw std::invalid_argument("config: methods must be non-empty");
  }
  std::set<std::string> names;
  for (const auto& m : cfg.methods) {
    if (m.name.empty()) {
      throw std::invalid_argument("config: method names must be non-empty");
    }
    if (!names.insert(m.name).second) {
      throw std::invalid_argument("config: duplicate method name '" + m.name +
                                  "'");
    }
    if (m.p_values.empty()) {
      throw std::invalid_argument("config: method '" + m.name +
                                  "' has no p values");
    }
    for (const double p : m.p_values) {
      if (!(p > 1.0)) {
        throw std::invalid_argument(
            "config: method '" + m.name + "' has p = " + std::to_string(p) +
            "; the p-Laplacian approximation requires p > 1");
      }
    }
  }
  for (const double p : cfg.p_grid) {
    if (!(p > 1.0)) {
      throw std::invalid_argument(
          "config: p_grid contains p = " + std::to_string(p) +
          "; the p-Laplacian approximation requires p > 1");
    }
  }
  for (const double ga : cfg.gamma_a_grid) {
    if (!(ga >= 0.0)) {
      throw std::invalid_argument("config: gamma_a_grid entries must be >= 0");
    }
  }
  for (const double gi : cfg.gamma_i_grid) {
    if (!(gi >= 0.0)) {
      throw std::invalid_argument("config: gamma_i_grid entries must be >= 0");
    }
  }
  if (!(cfg.gamma_exp > 1.0)) {
    throw std::invalid_argument("config: gamma_exp must be > 1");
  }
  if (cfg.repetitions < 1) {
    throw std::invalid_argument("config: repetitions must be >= 1");
  }
  if (cfg.threads < 0) {
    throw std::invalid_argument("config: threads must be >= 0");
  }
  if (!(cfg.pgrid_fraction > 0.0) || cfg.pgrid_fraction > 1.0) {
    throw std::invalid_argument("config: pgrid_fraction must lie in (0, 1]");
  }
  cfg.kernel.validate();
  if (cfg.graph.k_neighbors < 1) {
    throw std::invalid_argument("config: graph.k must be >= 1");
  }
}

unsigned effective_threads(int configured) {
  if (configured > 0) return static_cast<unsigned>(configured);
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

Dataset load_source(const DataSourceConfig& data) {
  if (data.kind == DataSourceConfig::Kind::two_moons) {
    return make_two_moons(data.n, data.noise, data.seed);
  }
  return load_features_csv(data.path, data.schema);
}

CandidateSet load_candidates(const Graph& g, const std::vector<double>& p_values,
                             const PLapConfig& plap, const std::string& cache_dir) {
  const std::uint64_t gd = g.digest();
  const Eigen::Index k = plap.resolved_embed_dim(g.size());
  CandidateSet cands;
  for (const double p : p_values) {
    const fs::path path = fs::path(cache_dir) / plap_cache_filename(gd, p, k);
    const PLapCacheEntry entry = load_plap_cache(path.string());
    const Eigen::MatrixXd recon = entry.eigensystem.reconstruct();
    cands.matrices.push_back(0.5 * (recon + recon.transpose()));
    cands.p_values.push_back(p);
  }
  return cands;
}

struct GammaCombo {
  double gamma_a = 0.0;
  double gamma_i = 0.0;
};

std::vector<GammaCombo> gamma_combos(const ExperimentConfig& cfg) {
  const std::vector<double> a_grid =
      cfg.gamma_a_grid.empty() ? std::vector<double>{cfg.params.gamma_a}
                               : cfg.gamma_a_grid;
  const std::vector<double> i_grid =
      cfg.gamma_i_grid.empty() ? std::vector<double>{cfg.params.gamma_i}
                               : cfg.gamma_i_grid;
  std::vector<GammaCombo> combos;
  for (const double ga : a_grid) {
    for (const double gi : i_grid) combos.push_back({ga, gi});
  }
  return combos;
}

// Holdout for hyperparameter selection: every 5th labeled sample of each
// class (ascending index) moves to the validation side, but a class keeps at
// least one visible label. Deterministic by construction.
std::vector<Eigen::Index> holdout_rows(const Dataset& train) {
  std::map<int, std::vector<Eigen::Index>> labeled_by_class;
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    if (train.labeled_mask[static_cast<std::size_t>(i)] != 0) {
      labeled_by_class[train.labels[static_cast<std::size_t>(i)]].push_back(i);
    }
  }
  std::vector<Eigen::Index> held;
  for (const auto& [cls, rows] : labeled_by_class) {
    (void)cls;
    if (rows.size() < 2) continue;
    std::size_t taken = 0;
    const std::size_t cap = rows.size() - 1;  // keep one label
    for (std::size_t j = 0; j < rows.size() && taken < cap; j += 5) {
      held.push_back(rows[j]);
      ++taken;
    }
  }
  std::sort(held.begin(), held.end());
  return held;
}

struct CellResult {
  nlohmann::json payload;
  double seconds = 0.0;
  bool ok = false;
  double map = 0.0;
  double acc = 0.0;
};

// Trains on `train` (choosing gammas by holdout when the grid has more than
// one combo), evaluates on `test`, and packages the per-cell record.
CellResult run_cell(const ExperimentConfig& cfg, const Dataset& train,
                    const Dataset& test, const CandidateSet& cands) {
  const auto t0 = Clock::now();
  CellResult out;
  try {
    const std::vector<GammaCombo> combos = gamma_combos(cfg);
    GammaCombo chosen = combos.front();
    bool cv_used = false;
    if (combos.size() > 1) {
      const std::vector<Eigen::Index> held = holdout_rows(train);
      if (!held.empty()) {
        cv_used = true;
        Dataset cv_train = train;
        for (const auto i : held) {
          cv_train.labeled_mask[static_cast<std::size_t>(i)] = 0;
        }
        Eigen::MatrixXd held_x(static_cast<Eigen::Index>(held.size()),
                               train.dim());
        std::vector<int> held_y(held.size());
        for (std::size_t j = 0; j < held.size(); ++j) {
          held_x.row(static_cast<Eigen::Index>(j)) = train.features.row(held[j]);
          held_y[j] = train.labels[static_cast<std::size_t>(held[j])];
        }
        double best = -1.0;
        for (const auto& combo : combos) {
          RegParams params{combo.gamma_a, combo.gamma_i};
          const OneVsRestModel ovr =
              train_one_vs_rest(cv_train, cands, cfg.kernel, params,
                                cfg.gamma_exp, cfg.train, cfg.loss, 1);
          const double acc = accuracy(predict_labels(ovr, held_x), held_y);
          if (acc > best) {
            best = acc;
            chosen = combo;
          }
        }
      }
    }

    const RegParams params{chosen.gamma_a, chosen.gamma_i};
    const OneVsRestModel ovr = train_one_vs_rest(
        train, cands, cfg.kernel, params, cfg.gamma_exp, cfg.train, cfg.loss, 1);

    const Eigen::MatrixXd scores = predict_scores(ovr, test.features);
    std::vector<double> aps;
    nlohmann::json ap_json = nlohmann::json::object();
    for (std::size_t c = 0; c < ovr.class_ids.size(); ++c) {
      RankedScores rs;
      rs.scores = scores.col(static_cast<Eigen::Index>(c));
      rs.relevance.resize(static_cast<std::size_t>(test.size()));
      for (Eigen::Index i = 0; i < test.size(); ++i) {
        rs.relevance[static_cast<std::size_t>(i)] =
            test.labels[static_cast<std::size_t>(i)] == ovr.class_ids[c] ? 1 : 0;
      }
      const double ap = average_precision(rs);
      aps.push_back(ap);
      ap_json[std::to_string(ovr.class_ids[c])] = ap;
    }
    const double map = mean_average_precision(aps);
    const double acc = accuracy(predict_labels(ovr, test.features), test.labels);

    nlohmann::json mu = nlohmann::json::array();
    nlohmann::json traces = nlohmann::json::array();
    nlohmann::json converged = nlohmann::json::array();
    for (const auto& m : ovr.models) {
      mu.push_back(std::vector<double>(m.mu.data(), m.mu.data() + m.mu.size()));
      traces.push_back(m.objective_trace);
      converged.push_back(m.converged);
    }

    out.payload["status"] = "ok";
    out.payload["labeled_count"] = static_cast<int>(train.labeled_count());
    out.payload["selected"] = {{"gamma_a", chosen.gamma_a},
                               {"gamma_i", chosen.gamma_i},
                               {"cv_used", cv_used}};
    out.payload["metrics"] = {{"map", map}, {"accuracy", acc},
                              {"ap_per_class", ap_json}};
    out.payload["mu_per_class"] = std::move(mu);
    out.payload["objective_traces"] = std::move(traces);
    out.payload["converged_per_class"] = std::move(converged);
    out.ok = true;
    out.map = map;
    out.acc = acc;
  } catch (const std::exception& e) {
    out.payload["status"] = "error";
    out.payload["error"] = e.what();
    out.ok = false;
  }
  out.seconds = seconds_since(t0);
  return out;
}

// Result payloads carry only the deterministic part of the cache state (the
// file list); hit/compute counters vary between cold and warm runs and would
// break byte-level reproducibility of otherwise identical experiments.
nlohmann::json cache_report_json(const CacheReport& report) {
  return {{"files", report.files}};
}

void accumulate(CacheReport& total, const CacheReport& part) {
  total.files.insert(total.files.end(), part.files.begin(), part.files.end());
  total.computed += part.computed;
  total.hits += part.hits;
  total.recomputed += part.recomputed;
}

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
  int count = 0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.count = static_cast<int>(xs.size());
  if (xs.empty()) return m;
  double sum = 0.0;
  for (const double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (const double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    const std::string kind = d.value("kind", std::string("two_moons"));
    if (kind == "two_moons") {
      cfg.data.kind = DataSourceConfig::Kind::two_moons;
    } else if (kind == "csv") {
      cfg.data.kind = DataSourceConfig::Kind::csv;
    } else {
      throw std::invalid_argument("config: data.kind must be 'two_moons' or 'csv'");
    }
    cfg.data.n = d.value("n", cfg.data.n);
    cfg.data.noise = d.value("noise", cfg.data.noise);
    cfg.data.seed = d.value("seed", cfg.data.seed);
    cfg.data.path = d.value("path", cfg.data.path);
    cfg.data.schema.label_column =
        d.value("label_column", cfg.data.schema.label_column);
    if (d.contains("id_column") && !d.at("id_column").is_null()) {
      cfg.data.schema.id_column = d.at("id_column").get<std::string>();
    }
  }
  cfg.train_per_class = j.value("train_per_class", cfg.train_per_class);
  cfg.fractions = j.value("fractions", cfg.fractions);
  cfg.split_seed = j.value("split_seed", cfg.split_seed);
  cfg.mask_seed = j.value("mask_seed", cfg.mask_seed);

  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    cfg.graph.k_neighbors = g.value("k", cfg.graph.k_neighbors);
    const std::string scheme = g.value("weights", std::string("heat"));
    if (scheme == "heat") {
      cfg.graph.weight_scheme = WeightScheme::heat;
    } else if (scheme == "binary") {
      cfg.graph.weight_scheme = WeightScheme::binary;
    } else {
      throw std::invalid_argument("config: graph.weights must be 'heat' or 'binary'");
    }
    if (g.contains("bandwidth") && !g.at("bandwidth").is_null()) {
      cfg.graph.bandwidth = g.at("bandwidth").get<double>();
    }
  }
  if (j.contains("plap")) {
    const auto& p = j.at("plap");
    cfg.plap.embed_dim = p.value("embed_dim", static_cast<std::int64_t>(cfg.plap.embed_dim));
    cfg.plap.step_factor = p.value("step_factor", cfg.plap.step_factor);
    cfg.plap.max_iters = p.value("max_iters", cfg.plap.max_iters);
    cfg.plap.rel_tol = p.value("rel_tol", cfg.plap.rel_tol);
    cfg.plap.reorth_period = p.value("reorth_period", cfg.plap.reorth_period);
  }
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    const std::string kind = k.value("kind", std::string("rbf"));
    if (kind == "rbf") {
      cfg.kernel.kind = KernelKind::rbf;
    } else if (kind == "linear") {
      cfg.kernel.kind = KernelKind::linear;
    } else {
      throw std::invalid_argument("config: kernel.kind must be 'rbf' or 'linear'");
    }
    if (k.contains("bandwidth") && !k.at("bandwidth").is_null()) {
      cfg.kernel.bandwidth = k.at("bandwidth").get<double>();
    }
    cfg.kernel.jitter = k.value("jitter", cfg.kernel.jitter);
  }

  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& mj : j.at("methods")) {
      MethodConfig m;
      m.name = mj.at("name").get<std::string>();
      m.use_standard_laplacian = mj.value("standard_laplacian", false);
      if (mj.contains("p_values")) {
        m.p_values = mj.at("p_values").get<std::vector<double>>();
      } else if (m.use_standard_laplacian) {
        m.p_values = {2.0};
      }
      cfg.methods.push_back(std::move(m));
    }
  } else {
    cfg.methods = default_methods();
  }

  cfg.loss = parse_loss(j.value("loss", std::string("kls")));
  if (j.contains("params")) {
    cfg.params.gamma_a = j.at("params").value("gamma_a", cfg.params.gamma_a);
    cfg.params.gamma_i = j.at("params").value("gamma_i", cfg.params.gamma_i);
  }
  cfg.gamma_a_grid = j.value("gamma_a_grid", cfg.gamma_a_grid);
  cfg.gamma_i_grid = j.value("gamma_i_grid", cfg.gamma_i_grid);
  cfg.gamma_exp = j.value("gamma_exp", cfg.gamma_exp);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.outer_max_iters = t.value("outer_max_iters", cfg.train.outer_max_iters);
    cfg.train.outer_rel_tol = t.value("outer_rel_tol", cfg.train.outer_rel_tol);
    cfg.train.qp_max_iters = t.value("qp_max_iters", cfg.train.qp_max_iters);
    cfg.train.qp_tol = t.value("qp_tol", cfg.train.qp_tol);
  }
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  cfg.cache_dir = j.value("cache_dir", cfg.cache_dir);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.p_grid = j.value("p_grid", cfg.p_grid);
  cfg.pgrid_fraction = j.value("pgrid_fraction", cfg.pgrid_fraction);

  if (const char* env = std::getenv("EPLAP_CACHE_DIR"); env && *env) {
    cfg.cache_dir = env;
  }
  validate_experiment_config(cfg);
  return cfg;
}

nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["data"] = {
      {"kind", cfg.data.kind == DataSourceConfig::Kind::two_moons ? "two_moons"
                                                                  : "csv"},
      {"n", cfg.data.n},
      {"noise", cfg.data.noise},
      {"seed", cfg.data.seed},
      {"path", cfg.data.path},
      {"label_column", cfg.data.schema.label_column},
      {"id_column", cfg.data.schema.id_column
                        ? nlohmann::json(*cfg.data.schema.id_column)
                        : nlohmann::json(nullptr)}};
  j["train_per_class"] = cfg.train_per_class;
  j["fractions"] = cfg.fractions;
  j["split_seed"] = cfg.split_seed;
  j["mask_seed"] = cfg.mask_seed;
  j["graph"] = {
      {"k", cfg.graph.k_neighbors},
      {"weights", cfg.graph.weight_scheme == WeightScheme::heat ? "heat" : "binary"},
      {"bandwidth", cfg.graph.bandwidth ? nlohmann::json(*cfg.graph.bandwidth)
                                        : nlohmann::json(nullptr)}};
  j["plap"] = {{"embed_dim", static_cast<std::int64_t>(cfg.plap.embed_dim)},
               {"step_factor", cfg.plap.step_factor},
               {"max_iters", cfg.plap.max_iters},
               {"rel_tol", cfg.plap.rel_tol},
               {"reorth_period", cfg.plap.reorth_period}};
  j["kernel"] = {
      {"kind", cfg.kernel.kind == KernelKind::rbf ? "rbf" : "linear"},
      {"bandwidth", cfg.kernel.bandwidth ? nlohmann::json(*cfg.kernel.bandwidth)
                                         : nlohmann::json(nullptr)},
      {"jitter", cfg.kernel.jitter}};
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : cfg.methods) {
    methods.push_back({{"name", m.name},
                       {"p_values", m.p_values},
                       {"standard_laplacian", m.use_standard_laplacian}});
  }
  j["methods"] = std::move(methods);
  j["loss"] = cfg.loss == LossKind::squared ? "kls" : "svm";
  j["params"] = {{"gamma_a", cfg.params.gamma_a}, {"gamma_i", cfg.params.gamma_i}};
  j["gamma_a_grid"] = cfg.gamma_a_grid;
  j["gamma_i_grid"] = cfg.gamma_i_grid;
  j["gamma_exp"] = cfg.gamma_exp;
  j["train"] = {{"outer_max_iters", cfg.train.outer_max_iters},
                {"outer_rel_tol", cfg.train.outer_rel_tol},
                {"qp_max_iters", cfg.train.qp_max_iters},
                {"qp_tol", cfg.train.qp_tol}};
  j["repetitions"] = cfg.repetitions;
  j["cache_dir"] = cfg.cache_dir;
  j["threads"] = cfg.threads;
  j["p_grid"] = cfg.p_grid;
  j["pgrid_fraction"] = cfg.pgrid_fraction;
  return j;
}

std::string config_digest(const ExperimentConfig& cfg) {
  detail::Fnv1a h;
  h.update_string(resolved_config_json(cfg).dump());
  return detail::to_hex(h.value());
}

CacheReport ensure_plap_caches(const Graph& g, const std::vector<double>& p_values,
                               const PLapConfig& cfg, const std::string& cache_dir) {
  fs::create_directories(cache_dir);
  const std::uint64_t gd = g.digest();
  const Eigen::Index n = g.size();
  const Eigen::Index k = cfg.resolved_embed_dim(n);
  CacheReport report;
  std::set<double> seen;
  for (const double p : p_values) {
    if (!seen.insert(p).second) continue;
    const fs::path path = fs::path(cache_dir) / plap_cache_filename(gd, p, k);
    bool valid = false;
    const bool existed = fs::exists(path);
    if (existed) {
      try {
        const PLapCacheEntry entry = load_plap_cache(path.string());
        valid = entry.provenance.graph_digest == gd &&
                entry.eigensystem.p == p &&
                entry.eigensystem.basis.rows() == n &&
                entry.eigensystem.basis.cols() == k;
      } catch (const CacheError&) {
        valid = false;
      }
    }
    if (valid) {
      ++report.hits;
    } else {
      PLapConfig pc = cfg;
      pc.p = p;
      const PLapResult res = approximate_p_laplacian(g, pc);
      save_plap_cache(path.string(), res.eigensystem, res.matrix.provenance);
      if (existed) {
        ++report.recomputed;
      } else {
        ++report.computed;
      }
    }
    report.files.push_back(path.string());
  }
  return report;
}

nlohmann::json run_experiment(const ExperimentConfig& cfg) {
  validate_experiment_config(cfg);
  const auto t_start = Clock::now();
  const Dataset full = load_source(cfg.data);
  const unsigned threads = effective_threads(cfg.threads);
  const std::uint64_t mask_base =
      cfg.mask_seed >= 0 ? static_cast<std::uint64_t>(cfg.mask_seed)
                         : cfg.split_seed;

  const std::size_t n_fr = cfg.fractions.size();
  const std::size_t n_me = cfg.methods.size();
  const std::size_t cells_per_rep = n_fr * n_me;
  std::vector<CellResult> results(
      static_cast<std::size_t>(cfg.repetitions) * cells_per_rep);
  std::vector<nlohmann::json> cell_meta(results.size());
  CacheReport cache_total;

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t split_seed = cfg.split_seed + static_cast<std::uint64_t>(rep);
    SplitSpec sp;
    sp.train_per_class = cfg.train_per_class;
    sp.labeled_fraction = cfg.fractions.front();
    sp.seed = split_seed;
    Split split = split_and_mask(full, sp);

    // Shared per-repetition artifacts: one graph, one verified cache entry
    // per p value, one candidate set per method.
    const Graph graph = build_knn_graph(split.train.features, cfg.graph);
    std::vector<double> union_p;
    bool any_standard = false;
    for (const auto& m : cfg.methods) {
      if (m.use_standard_laplacian) {
        any_standard = true;
      } else {
        union_p.insert(union_p.end(), m.p_values.begin(), m.p_values.end());
      }
    }
    accumulate(cache_total,
               ensure_plap_caches(graph, union_p, cfg.plap, cfg.cache_dir));
    Eigen::MatrixXd std_lap;
    if (any_standard) std_lap = laplacian(graph);
    std::vector<CandidateSet> method_cands(n_me);
    for (std::size_t mi = 0; mi < n_me; ++mi) {
      const auto& m = cfg.methods[mi];
      if (m.use_standard_laplacian) {
        method_cands[mi].matrices.assign(1, std_lap);
        method_cands[mi].p_values.assign(1, 2.0);
      } else {
        method_cands[mi] =
            load_candidates(graph, m.p_values, cfg.plap, cfg.cache_dir);
      }
    }

    std::vector<Dataset> trains(n_fr, split.train);
    std::vector<std::uint64_t> mask_seeds(n_fr);
    for (std::size_t fi = 0; fi < n_fr; ++fi) {
      mask_seeds[fi] = mask_seed_for(mask_base, rep, fi);
      apply_label_mask(trains[fi], cfg.fractions[fi], mask_seeds[fi]);
    }

    detail::parallel_for(cells_per_rep, threads, [&](std::size_t t) {
      const std::size_t fi = t / n_me;
      const std::size_t mi = t % n_me;
      const std::size_t slot =
          static_cast<std::size_t>(rep) * cells_per_rep + t;
      results[slot] = run_cell(cfg, trains[fi], split.test, method_cands[mi]);
      nlohmann::json meta;
      meta["rep"] = rep;
      meta["fraction"] = cfg.fractions[fi];
      meta["fraction_index"] = static_cast<int>(fi);
      meta["method"] = cfg.methods[mi].name;
      meta["split_seed"] = split_seed;
      meta["mask_seed"] = mask_seeds[fi];
      cell_meta[slot] = std::move(meta);
    });
  }

  nlohmann::json cells = nlohmann::json::array();
  nlohmann::json timing_cells = nlohmann::json::object();
  bool all_ok = true;
  for (std::size_t s = 0; s < results.size(); ++s) {
    nlohmann::json cell = cell_meta[s];
    cell.update(results[s].payload);
    const std::string key = "rep" + cell_meta[s]["rep"].dump() + "_frac" +
                            cell_meta[s]["fraction_index"].dump() + "_" +
                            cell_meta[s]["method"].get<std::string>();
    timing_cells[key] = results[s].seconds;
    all_ok = all_ok && results[s].ok;
    cells.push_back(std::move(cell));
  }

  nlohmann::json aggregates = nlohmann::json::array();
  for (std::size_t mi = 0; mi < n_me; ++mi) {
    for (std::size_t fi = 0; fi < n_fr; ++fi) {
      std::vector<double> maps;
      std::vector<double> accs;
      for (int rep = 0; rep < cfg.repetitions; ++rep) {
        const std::size_t slot =
            static_cast<std::size_t>(rep) * cells_per_rep + fi * n_me + mi;
        if (results[slot].ok) {
          maps.push_back(results[slot].map);
          accs.push_back(results[slot].acc);
        }
      }
      const Moments mm = moments(maps);
      const Moments am = moments(accs);
      aggregates.push_back({{"method", cfg.methods[mi].name},
                            {"fraction", cfg.fractions[fi]},
                            {"map_mean", mm.mean},
                            {"map_stddev", mm.stddev},
                            {"accuracy_mean", am.mean},
                            {"accuracy_stddev", am.stddev},
                            {"repetitions", mm.count}});
    }
  }

  nlohmann::json out;
  out["format_version"] = 1;
  out["library_version"] = kVersion;
  out["config"] = resolved_config_json(cfg);
  out["config_digest"] = config_digest(cfg);
  out["cells"] = std::move(cells);
  out["aggregates"] = std::move(aggregates);
  out["cache"] = cache_report_json(cache_total);
  out["all_ok"] = all_ok;
  out["timing"] = {{"total_seconds", seconds_since(t_start)},
                   {"cells", std::move(timing_cells)}};
  return out;
}

nlohmann::json run_pgrid(const ExperimentConfig& cfg) {
  validate_experiment_config(cfg);
  if (cfg.p_grid.empty()) {
    throw std::invalid_argument("pgrid: p_grid must be non-empty");
  }
  const auto t_start = Clock::now();
  const Dataset full = load_source(cfg.data);
  const unsigned threads = effective_threads(cfg.threads);
  const std::uint64_t mask_base =
      cfg.mask_seed >= 0 ? static_cast<std::uint64_t>(cfg.mask_seed)
                         : cfg.split_seed;

  const std::size_t n_p = cfg.p_grid.size();
  std::vector<CellResult> results(static_cast<std::size_t>(cfg.repetitions) * n_p);
  CacheReport cache_total;

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t split_seed = cfg.split_seed + static_cast<std::uint64_t>(rep);
    SplitSpec sp;
    sp.train_per_class = cfg.train_per_class;
    sp.labeled_fraction = cfg.pgrid_fraction;
    sp.seed = split_seed;
    Split split = split_and_mask(full, sp);
    apply_label_mask(split.train, cfg.pgrid_fraction, mask_seed_for(mask_base, rep, 0));

    const Graph graph = build_knn_graph(split.train.features, cfg.graph);
    accumulate(cache_total,
               ensure_plap_caches(graph, cfg.p_grid, cfg.plap, cfg.cache_dir));
    std::vector<CandidateSet> cands(n_p);
    for (std::size_t pi = 0; pi < n_p; ++pi) {
      cands[pi] = load_candidates(graph, {cfg.p_grid[pi]}, cfg.plap, cfg.cache_dir);
    }

    detail::parallel_for(n_p, threads, [&](std::size_t pi) {
      results[static_cast<std::size_t>(rep) * n_p + pi] =
          run_cell(cfg, split.train, split.test, cands[pi]);
    });
  }

  nlohmann::json curve = nlohmann::json::array();
  nlohmann::json timing_cells = nlohmann::json::object();
  bool all_ok = true;
  double best_map = -1.0;
  double best_p = cfg.p_grid.front();
  for (std::size_t pi = 0; pi < n_p; ++pi) {
    std::vector<double> maps;
    std::vector<double> accs;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const auto& cell = results[static_cast<std::size_t>(rep) * n_p + pi];
      timing_cells["rep" + std::to_string(rep) + "_p" +
                   std::to_string(cfg.p_grid[pi])] = cell.seconds;
      if (cell.ok) {
        maps.push_back(cell.map);
        accs.push_back(cell.acc);
      } else {
        all_ok = false;
      }
    }
    const Moments mm = moments(maps);
    const Moments am = moments(accs);
    curve.push_back({{"p", cfg.p_grid[pi]},
                     {"map_mean", mm.mean},
                     {"map_stddev", mm.stddev},
                     {"accuracy_mean", am.mean},
                     {"accuracy_stddev", am.stddev},
                     {"repetitions", mm.count}});
    if (mm.count > 0 && mm.mean > best_map) {
      best_map = mm.mean;
      best_p = cfg.p_grid[pi];
    }
  }

  nlohmann::json out;
  out["format_version"] = 1;
  out["library_version"] = kVersion;
  out["config"] = resolved_config_json(cfg);
  out["config_digest"] = config_digest(cfg);
  out["curve"] = std::move(curve);
  out["best_p"] = best_p;
  out["selection_metric"] = "map";
  out["labeled_fraction"] = cfg.pgrid_fraction;
  out["cache"] = cache_report_json(cache_total);
  out["all_ok"] = all_ok;
  out["timing"] = {{"total_seconds", seconds_since(t_start)},
                   {"cells", std::move(timing_cells)}};
  return out;
}

std::string results_csv(const nlohmann::json& results) {
  char buf[64];
  const auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string csv;
  if (results.contains("aggregates")) {
    csv = "method,fraction,map_mean,map_stddev,accuracy_mean,accuracy_stddev,"
          "repetitions\n";
    for (const auto& row : results.at("aggregates")) {
      csv += row.at("method").get<std::string>();
      csv += ',' + fmt(row.at("fraction").get<double>());
      csv += ',' + fmt(row.at("map_mean").get<double>());
      csv += ',' + fmt(row.at("map_stddev").get<double>());
      csv += ',' + fmt(row.at("accuracy_mean").get<double>());
      csv += ',' + fmt(row.at("accuracy_stddev").get<double>());
      csv += ',' + std::to_string(row.at("repetitions").get<int>());
      csv += '\n';
    }
    return csv;
  }
  if (results.contains("curve")) {
    csv = "p,map_mean,map_stddev,accuracy_mean,accuracy_stddev,repetitions\n";
    for (const auto& row : results.at("curve")) {
      csv += fmt(row.at("p").get<double>());
      csv += ',' + fmt(row.at("map_mean").get<double>());
      csv += ',' + fmt(row.at("map_stddev").get<double>());
      csv += ',' + fmt(row.at("accuracy_mean").get<double>());
      csv += ',' + fmt(row.at("accuracy_stddev").get<double>());
      csv += ',' + std::to_string(row.at("repetitions").get<int>());
      csv += '\n';
    }
    return csv;
  }
  throw std::invalid_argument("results_csv: no aggregates or curve section");
}

}  // namespace eplap
