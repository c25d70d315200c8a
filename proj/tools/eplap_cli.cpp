// Command-line driver: data generation, graph construction, p-Laplacian
// caching, training, evaluation and the full experiment/p-sweep protocols.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eplap/dataset.hpp"
#include "eplap/detail/digest.hpp"
#include "eplap/eval.hpp"
#include "eplap/experiment.hpp"
#include "eplap/graph.hpp"
#include "eplap/io.hpp"
#include "eplap/kernel.hpp"
#include "eplap/learn.hpp"
#include "eplap/plap.hpp"
#include "eplap/version.hpp"

namespace {

using nlohmann::json;

json load_json_or_die(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CLI::ValidationError("--config", path + ": " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << text << "\n";
}

eplap::Dataset load_dataset_arg(const std::string& path,
                                const std::string& label_column,
                                const std::string& id_column) {
  eplap::CsvSchema schema;
  schema.label_column = label_column;
  if (!id_column.empty()) schema.id_column = id_column;
  return eplap::load_features_csv(path, schema);
}

// The caching subcommand batches over p_grid when given, otherwise over
// every p used by the configured methods.
std::vector<double> cache_p_values(const eplap::ExperimentConfig& cfg) {
  if (!cfg.p_grid.empty()) return cfg.p_grid;
  std::set<double> ps;
  for (const auto& m : cfg.methods) {
    if (m.use_standard_laplacian) continue;
    ps.insert(m.p_values.begin(), m.p_values.end());
  }
  return {ps.begin(), ps.end()};
}

struct SharedDataFlags {
  std::string csv_path;
  std::string label_column = "label";
  std::string id_column;
};

void add_data_flags(CLI::App* cmd, SharedDataFlags& flags) {
  cmd->add_option("--data", flags.csv_path, "feature CSV (header row required)")
      ->required();
  cmd->add_option("--label-column", flags.label_column,
                  "name of the class id column");
  cmd->add_option("--id-column", flags.id_column,
                  "name of the sample id column (default: a column named 'id')");
}

int cmd_gen(int n, double noise, std::uint64_t seed, const std::string& out) {
  const auto ds = eplap::make_two_moons(n, noise, seed);
  eplap::write_features_csv(ds, out);
  json report{{"samples", n}, {"noise", noise}, {"seed", seed}, {"path", out}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_graph(const SharedDataFlags& data, int k, const std::string& weights,
              std::optional<double> bandwidth, const std::string& out) {
  const auto ds = load_dataset_arg(data.csv_path, data.label_column, data.id_column);
  eplap::GraphSpec spec;
  spec.k_neighbors = k;
  if (weights == "binary") {
    spec.weight_scheme = eplap::WeightScheme::binary;
  } else if (weights != "heat") {
    throw CLI::ValidationError("--weights", "must be heat or binary");
  }
  spec.bandwidth = bandwidth;
  const auto g = eplap::build_knn_graph(ds.features, spec);
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot open for write: " + out);
    eplap::dump_graph(g, os);
  }
  json report{{"vertices", g.size()},
              {"edges", g.weights.nonZeros() / 2},
              {"connected", g.connected()},
              {"digest", eplap::detail::to_hex(g.digest())},
              {"mean_degree", g.degrees.mean()}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_plap_cache(const json& config_json) {
  const auto cfg = eplap::parse_experiment_config(config_json);
  const auto ps = cache_p_values(cfg);
  if (ps.empty()) {
    std::cerr << "no p values to cache (empty p_grid and methods)\n";
    return 1;
  }
  const eplap::Dataset full =
      [&cfg] {
        if (cfg.data.kind == eplap::DataSourceConfig::Kind::two_moons) {
          return eplap::make_two_moons(cfg.data.n, cfg.data.noise, cfg.data.seed);
        }
        return eplap::load_features_csv(cfg.data.path, cfg.data.schema);
      }();
  eplap::SplitSpec split_spec;
  split_spec.train_per_class = cfg.train_per_class;
  split_spec.labeled_fraction = 1.0;
  split_spec.seed = cfg.split_seed;
  const auto split = eplap::split_and_mask(full, split_spec);
  const auto g = eplap::build_knn_graph(split.train.features, cfg.graph);
  const auto report = eplap::ensure_plap_caches(g, ps, cfg.plap, cfg.cache_dir);
  json out{{"files", report.files},
           {"computed", report.computed},
           {"hits", report.hits},
           {"recomputed", report.recomputed}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_train(const json& config_json, const SharedDataFlags& data,
              double fraction, std::int64_t mask_seed, const std::string& out) {
  const auto cfg = eplap::parse_experiment_config(config_json);
  auto ds = load_dataset_arg(data.csv_path, data.label_column, data.id_column);
  if (fraction < 1.0) {
    const auto seed = mask_seed >= 0 ? static_cast<std::uint64_t>(mask_seed)
                                     : cfg.split_seed;
    eplap::apply_label_mask(ds, fraction, seed);
  }

  const auto g = eplap::build_knn_graph(ds.features, cfg.graph);
  const auto method = cfg.methods.front();
  eplap::CandidateSet cands;
  if (method.use_standard_laplacian) {
    cands.matrices.push_back(eplap::laplacian(g));
    cands.p_values.push_back(2.0);
  } else {
    const auto report =
        eplap::ensure_plap_caches(g, method.p_values, cfg.plap, cfg.cache_dir);
    for (const auto& file : report.files) {
      const auto entry = eplap::load_plap_cache(file);
      const Eigen::MatrixXd m = entry.eigensystem.reconstruct();
      cands.matrices.push_back(0.5 * (m + m.transpose()));
      cands.p_values.push_back(entry.eigensystem.p);
    }
  }

  const auto classes = ds.class_ids();
  eplap::ModelBundle bundle;
  if (classes.size() == 2) {
    bundle.kind = "binary";
    bundle.class_ids = classes;  // ascending: {negative, positive}
    const auto model =
        cfg.loss == eplap::LossKind::squared
            ? eplap::train_eplapkls(ds, cands, cfg.kernel, cfg.params,
                                    cfg.gamma_exp, cfg.train)
            : eplap::train_eplapsvm(ds, cands, cfg.kernel, cfg.params,
                                    cfg.gamma_exp, cfg.train);
    bundle.models.push_back(model);
  } else {
    const auto ovr =
        eplap::train_one_vs_rest(ds, cands, cfg.kernel, cfg.params,
                                 cfg.gamma_exp, cfg.train, cfg.loss, cfg.threads);
    bundle.kind = "ovr";
    bundle.class_ids = ovr.class_ids;
    bundle.models = ovr.models;
  }
  eplap::save_model_bundle(out, bundle);

  json report{{"model", out},
              {"kind", bundle.kind},
              {"classes", bundle.class_ids},
              {"labeled", ds.labeled_count()},
              {"samples", ds.size()}};
  json traces = json::array();
  json converged = json::array();
  for (const auto& m : bundle.models) {
    traces.push_back(m.objective_trace);
    converged.push_back(m.converged);
  }
  report["objective_traces"] = traces;
  report["converged"] = converged;
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const SharedDataFlags& data,
             const std::string& out) {
  const auto bundle = eplap::load_model_bundle(model_path);
  const auto ds = load_dataset_arg(data.csv_path, data.label_column, data.id_column);

  json metrics;
  std::vector<int> predicted;
  std::vector<double> aps;
  json ap_per_class;
  if (bundle.kind == "binary") {
    const auto& model = bundle.models.front();
    const Eigen::VectorXd scores = eplap::predict(model, ds.features);
    const int positive = bundle.class_ids.back();
    eplap::RankedScores rs;
    rs.scores = scores;
    rs.relevance.resize(static_cast<std::size_t>(ds.size()));
    predicted.resize(static_cast<std::size_t>(ds.size()));
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      rs.relevance[static_cast<std::size_t>(i)] =
          ds.labels[static_cast<std::size_t>(i)] == positive;
      predicted[static_cast<std::size_t>(i)] =
          scores(i) > 0.0 ? positive : bundle.class_ids.front();
    }
    const double ap = eplap::average_precision(rs);
    aps.push_back(ap);
    ap_per_class[std::to_string(positive)] = ap;
  } else {
    eplap::OneVsRestModel ovr;
    ovr.class_ids = bundle.class_ids;
    ovr.models = bundle.models;
    const Eigen::MatrixXd scores = eplap::predict_scores(ovr, ds.features);
    predicted = eplap::predict_labels(ovr, ds.features);
    for (std::size_t c = 0; c < ovr.class_ids.size(); ++c) {
      eplap::RankedScores rs;
      rs.scores = scores.col(static_cast<Eigen::Index>(c));
      rs.relevance.resize(static_cast<std::size_t>(ds.size()));
      for (Eigen::Index i = 0; i < ds.size(); ++i) {
        rs.relevance[static_cast<std::size_t>(i)] =
            ds.labels[static_cast<std::size_t>(i)] == ovr.class_ids[c];
      }
      const double ap = eplap::average_precision(rs);
      aps.push_back(ap);
      ap_per_class[std::to_string(ovr.class_ids[c])] = ap;
    }
  }
  metrics["ap_per_class"] = ap_per_class;
  metrics["map"] = eplap::mean_average_precision(aps);
  metrics["accuracy"] = eplap::accuracy(predicted, ds.labels);
  metrics["samples"] = ds.size();
  write_text(out, metrics.dump(2));
  return 0;
}

int cmd_experiment(const json& config_json, const std::string& out,
                   const std::string& csv_out) {
  const auto cfg = eplap::parse_experiment_config(config_json);
  const json results = eplap::run_experiment(cfg);
  write_text(out, results.dump(2));
  if (!csv_out.empty()) {
    std::ofstream csv(csv_out);
    if (!csv) throw std::runtime_error("cannot open for write: " + csv_out);
    csv << eplap::results_csv(results);
  }
  return results.at("all_ok").get<bool>() ? 0 : 1;
}

int cmd_pgrid(const json& config_json, const std::string& out,
              const std::string& csv_out) {
  const auto cfg = eplap::parse_experiment_config(config_json);
  const json results = eplap::run_pgrid(cfg);
  write_text(out, results.dump(2));
  if (!csv_out.empty()) {
    std::ofstream csv(csv_out);
    if (!csv) throw std::runtime_error("cannot open for write: " + csv_out);
    csv << eplap::results_csv(results);
  }
  return results.at("all_ok").get<bool>() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensemble graph p-Laplacian semi-supervised learning toolkit"};
  app.set_version_flag("--version", std::string(eplap::kVersion));
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a two-moons CSV dataset");
  int gen_n = 200;
  double gen_noise = 0.08;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "moons.csv";
  gen->add_option("--n", gen_n, "total sample count (even, >= 4)");
  gen->add_option("--noise", gen_noise, "gaussian noise stddev");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // graph
  auto* graph = app.add_subcommand("graph", "build a kNN graph and report stats");
  SharedDataFlags graph_data;
  add_data_flags(graph, graph_data);
  int graph_k = 10;
  std::string graph_weights = "heat";
  double graph_bandwidth = 0.0;
  std::string graph_out;
  graph->add_option("--k", graph_k, "neighbors per point");
  graph->add_option("--weights", graph_weights, "heat | binary");
  auto* bw_opt = graph->add_option("--bandwidth", graph_bandwidth,
                                   "heat bandwidth (default: median distance)");
  graph->add_option("--out", graph_out, "edge list output path");

  // config-driven subcommands
  std::string cache_config, train_config, exp_config, pgrid_config;
  auto* plap_cache =
      app.add_subcommand("plap-cache", "precompute p-Laplacian cache files");
  plap_cache->add_option("--config", cache_config, "experiment config JSON")
      ->required();

  auto* train = app.add_subcommand("train", "train a classifier on a CSV");
  SharedDataFlags train_data;
  add_data_flags(train, train_data);
  train->add_option("--config", train_config, "experiment config JSON")
      ->required();
  double train_fraction = 1.0;
  std::int64_t train_mask_seed = -1;
  std::string train_out = "model.json";
  train->add_option("--fraction", train_fraction,
                    "labeled fraction kept per class (rest masked)");
  train->add_option("--mask-seed", train_mask_seed, "label mask seed");
  train->add_option("--out", train_out, "model bundle output path");

  auto* eval = app.add_subcommand("eval", "evaluate a model bundle on a CSV");
  SharedDataFlags eval_data;
  add_data_flags(eval, eval_data);
  std::string eval_model, eval_out;
  eval->add_option("--model", eval_model, "model bundle path")->required();
  eval->add_option("--out", eval_out, "metrics output path (default stdout)");

  auto* experiment =
      app.add_subcommand("experiment", "run the repetition x fraction x method grid");
  experiment->add_option("--config", exp_config, "experiment config JSON")
      ->required();
  std::string exp_out, exp_csv;
  experiment->add_option("--out", exp_out, "results JSON path (default stdout)");
  experiment->add_option("--csv", exp_csv, "flat aggregate table CSV path");

  auto* pgrid = app.add_subcommand("pgrid", "sweep p and report the best value");
  pgrid->add_option("--config", pgrid_config, "experiment config JSON")
      ->required();
  std::string pgrid_out, pgrid_csv;
  pgrid->add_option("--out", pgrid_out, "results JSON path (default stdout)");
  pgrid->add_option("--csv", pgrid_csv, "curve CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_n, gen_noise, gen_seed, gen_out);
    if (graph->parsed()) {
      std::optional<double> bw;
      if (bw_opt->count() > 0) bw = graph_bandwidth;
      return cmd_graph(graph_data, graph_k, graph_weights, bw, graph_out);
    }
    if (plap_cache->parsed()) return cmd_plap_cache(load_json_or_die(cache_config));
    if (train->parsed()) {
      return cmd_train(load_json_or_die(train_config), train_data,
                       train_fraction, train_mask_seed, train_out);
    }
    if (eval->parsed()) return cmd_eval(eval_model, eval_data, eval_out);
    if (experiment->parsed()) {
      return cmd_experiment(load_json_or_die(exp_config), exp_out, exp_csv);
    }
    if (pgrid->parsed()) {
      return cmd_pgrid(load_json_or_die(pgrid_config), pgrid_out, pgrid_csv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
