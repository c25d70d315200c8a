#include "eplap/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <system_error>

#include "eplap/detail/digest.hpp"

namespace eplap {

namespace {

constexpr char kCacheMagic[8] = {'E', 'P', 'L', 'A', 'P', 'C', '0', '1'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr int kModelFormatVersion = 1;

// Shortest round-trip decimal for doubles (what std::to_chars gives us);
// used in file names and nowhere near JSON, which has its own formatter.
std::string shortest_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class CacheWriter {
 public:
  explicit CacheWriter(const std::string& path) : os_(path, std::ios::binary) {
    if (!os_) throw CacheError("cache: cannot open for write: " + path);
  }

  void raw(const void* data, std::size_t len) {
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    hash_.update(data, len);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void finish() {
    const std::uint64_t digest = hash_.value();
    os_.write(reinterpret_cast<const char*>(&digest), sizeof digest);
    os_.close();
    if (!os_) throw CacheError("cache: write failed");
  }

 private:
  std::ofstream os_;
  detail::Fnv1a hash_;
};

class CacheReader {
 public:
  explicit CacheReader(const std::string& path) : is_(path, std::ios::binary) {
    if (!is_) throw CacheError("cache: cannot open: " + path);
  }

  void raw(void* data, std::size_t len) {
    is_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (is_.gcount() != static_cast<std::streamsize>(len)) {
      throw CacheError("cache: truncated file");
    }
    hash_.update(data, len);
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int32_t i32() { std::int32_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }

  void verify_trailer() {
    const std::uint64_t expected = hash_.value();
    std::uint64_t stored = 0;
    is_.read(reinterpret_cast<char*>(&stored), sizeof stored);
    if (is_.gcount() != sizeof stored) throw CacheError("cache: truncated file");
    if (stored != expected) {
      throw CacheError("cache: content digest mismatch (corrupted file)");
    }
  }

 private:
  std::ifstream is_;
  detail::Fnv1a hash_;
};

nlohmann::json kernel_to_json(const KernelSpec& spec) {
  nlohmann::json j;
  j["kind"] = spec.kind == KernelKind::rbf ? "rbf" : "linear";
  if (spec.bandwidth) {
    j["bandwidth"] = *spec.bandwidth;
  } else {
    j["bandwidth"] = nullptr;
  }
  j["jitter"] = spec.jitter;
  return j;
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  KernelSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "rbf") {
    spec.kind = KernelKind::rbf;
  } else if (kind == "linear") {
    spec.kind = KernelKind::linear;
  } else {
    throw CacheError("model: unknown kernel kind '" + kind + "'");
  }
  if (!j.at("bandwidth").is_null()) {
    spec.bandwidth = j.at("bandwidth").get<double>();
  }
  spec.jitter = j.at("jitter").get<double>();
  return spec;
}

nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json j;
  j["alpha"] = std::vector<double>(model.alpha.data(),
                                   model.alpha.data() + model.alpha.size());
  j["bias"] = model.bias;
  j["mu"] =
      std::vector<double>(model.mu.data(), model.mu.data() + model.mu.size());
  j["kernel"] = kernel_to_json(model.kernel);
  j["loss"] = model.loss_kind == LossKind::squared ? "squared" : "hinge";
  j["p_values"] = model.p_values;
  j["params"] = {{"gamma_a", model.params.gamma_a},
                 {"gamma_i", model.params.gamma_i}};
  j["gamma_exp"] = model.gamma_exp;
  j["objective_trace"] = model.objective_trace;
  j["converged"] = model.converged;
  std::vector<std::vector<double>> rows(
      static_cast<std::size_t>(model.train_features.rows()));
  for (Eigen::Index i = 0; i < model.train_features.rows(); ++i) {
    rows[static_cast<std::size_t>(i)].assign(
        model.train_features.row(i).begin(), model.train_features.row(i).end());
  }
  j["train_features"] = rows;
  j["feature_digest"] = detail::to_hex(matrix_digest(model.train_features));
  return j;
}

TrainedModel model_from_json(const nlohmann::json& j) {
  TrainedModel model;
  const auto alpha = j.at("alpha").get<std::vector<double>>();
  model.alpha = Eigen::Map<const Eigen::VectorXd>(
      alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  model.bias = j.at("bias").get<double>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  model.mu = Eigen::Map<const Eigen::VectorXd>(
      mu.data(), static_cast<Eigen::Index>(mu.size()));
  model.kernel = kernel_from_json(j.at("kernel"));
  const std::string loss = j.at("loss").get<std::string>();
  if (loss == "squared") {
    model.loss_kind = LossKind::squared;
  } else if (loss == "hinge") {
    model.loss_kind = LossKind::hinge;
  } else {
    throw CacheError("model: unknown loss '" + loss + "'");
  }
  model.p_values = j.at("p_values").get<std::vector<double>>();
  model.params.gamma_a = j.at("params").at("gamma_a").get<double>();
  model.params.gamma_i = j.at("params").at("gamma_i").get<double>();
  model.gamma_exp = j.at("gamma_exp").get<double>();
  model.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  model.converged = j.at("converged").get<bool>();

  const auto rows = j.at("train_features").get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw CacheError("model: empty training features");
  const auto cols = rows.front().size();
  model.train_features.resize(static_cast<Eigen::Index>(rows.size()),
                              static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw CacheError("model: ragged training feature rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      model.train_features(static_cast<Eigen::Index>(i),
                           static_cast<Eigen::Index>(c)) = rows[i][c];
    }
  }
  const std::string stored = j.at("feature_digest").get<std::string>();
  if (stored != detail::to_hex(matrix_digest(model.train_features))) {
    throw CacheError("model: feature digest mismatch (corrupted file)");
  }
  if (model.alpha.size() != model.train_features.rows()) {
    throw CacheError("model: alpha length does not match training features");
  }
  return model;
}

nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw CacheError(std::string(what) + ": cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CacheError(std::string(what) + ": invalid JSON in " + path + ": " +
                     e.what());
  }
  return j;
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CacheError("cannot open for write: " + tmp);
    out << text;
    if (!out) throw CacheError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CacheError("rename failed for " + path + ": " + ec.message());
}

void require_version(const nlohmann::json& j, const char* what) {
  if (j.value("format_version", -1) != kModelFormatVersion) {
    throw CacheError(std::string(what) + ": unsupported format_version");
  }
}

}  // namespace

std::string plap_cache_filename(std::uint64_t graph_digest, double p,
                                Eigen::Index embed_dim) {
  return "plap_" + detail::to_hex(graph_digest) + "_p" + shortest_double(p) +
         "_K" + std::to_string(embed_dim) + ".bin";
}

void save_plap_cache(const std::string& path, const PLapEigenSystem& sys,
                     const PLapProvenance& prov) {
  if (sys.basis.cols() != sys.lambda.size()) {
    throw std::invalid_argument("cache: basis/lambda size mismatch");
  }
  const std::string tmp = path + ".tmp";
  {
    CacheWriter w(tmp);
    w.raw(kCacheMagic, sizeof kCacheMagic);
    w.u32(kCacheVersion);
    std::uint32_t flags = 0;
    if (prov.converged) flags |= 1u;
    if (prov.graph_connected) flags |= 2u;
    if (prov.degenerate_init) flags |= 4u;
    w.u32(flags);
    w.u64(static_cast<std::uint64_t>(sys.basis.rows()));
    w.u64(static_cast<std::uint64_t>(sys.basis.cols()));
    w.f64(sys.p);
    w.u64(prov.graph_digest);
    w.i32(prov.iterations);
    for (Eigen::Index i = 0; i < sys.basis.rows(); ++i) {
      for (Eigen::Index k = 0; k < sys.basis.cols(); ++k) {
        w.f64(sys.basis(i, k));
      }
    }
    for (Eigen::Index k = 0; k < sys.lambda.size(); ++k) w.f64(sys.lambda(k));
    w.finish();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CacheError("cache: rename failed for " + path + ": " + ec.message());
}

PLapCacheEntry load_plap_cache(const std::string& path) {
  CacheReader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
    throw CacheError("cache: bad magic in " + path);
  }
  if (r.u32() != kCacheVersion) {
    throw CacheError("cache: unsupported version in " + path);
  }
  const std::uint32_t flags = r.u32();
  const std::uint64_t n = r.u64();
  const std::uint64_t k = r.u64();
  if (n == 0 || k == 0 || k > n || n > (1ull << 24)) {
    throw CacheError("cache: implausible dimensions in " + path);
  }
  PLapCacheEntry entry;
  entry.eigensystem.p = r.f64();
  entry.provenance.graph_digest = r.u64();
  entry.provenance.iterations = r.i32();
  entry.provenance.converged = (flags & 1u) != 0;
  entry.provenance.graph_connected = (flags & 2u) != 0;
  entry.provenance.degenerate_init = (flags & 4u) != 0;
  entry.eigensystem.basis.resize(static_cast<Eigen::Index>(n),
                                 static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
      entry.eigensystem.basis(i, c) = r.f64();
    }
  }
  entry.eigensystem.lambda.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
    entry.eigensystem.lambda(c) = r.f64();
  }
  r.verify_trailer();
  return entry;
}

void save_model_json(const std::string& path, const TrainedModel& model) {
  nlohmann::json j = model_to_json(model);
  j["format_version"] = kModelFormatVersion;
  atomic_write_text(path, j.dump(2) + "\n");
}

TrainedModel load_model_json(const std::string& path) {
  const nlohmann::json j = load_json_file(path, "model");
  require_version(j, "model");
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw CacheError("model: malformed field in " + path + ": " + e.what());
  }
}

void save_model_bundle(const std::string& path, const ModelBundle& bundle) {
  if (bundle.kind != "binary" && bundle.kind != "ovr") {
    throw std::invalid_argument("bundle: kind must be 'binary' or 'ovr'");
  }
  if (bundle.kind == "binary" &&
      (bundle.models.size() != 1 || bundle.class_ids.size() != 2)) {
    throw std::invalid_argument(
        "bundle: binary kind needs 1 model and 2 class ids");
  }
  if (bundle.kind == "ovr" && bundle.models.size() != bundle.class_ids.size()) {
    throw std::invalid_argument("bundle: one model per class id required");
  }
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = bundle.kind;
  j["class_ids"] = bundle.class_ids;
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : bundle.models) models.push_back(model_to_json(m));
  j["models"] = std::move(models);
  atomic_write_text(path, j.dump(2) + "\n");
}

ModelBundle load_model_bundle(const std::string& path) {
  const nlohmann::json j = load_json_file(path, "bundle");
  require_version(j, "bundle");
  ModelBundle bundle;
  try {
    bundle.kind = j.at("kind").get<std::string>();
    bundle.class_ids = j.at("class_ids").get<std::vector<int>>();
    for (const auto& mj : j.at("models")) {
      bundle.models.push_back(model_from_json(mj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CacheError("bundle: malformed field in " + path + ": " + e.what());
  }
  if (bundle.kind == "binary" &&
      (bundle.models.size() != 1 || bundle.class_ids.size() != 2)) {
    throw CacheError("bundle: binary kind needs 1 model and 2 class ids");
  }
  if (bundle.kind == "ovr" && bundle.models.size() != bundle.class_ids.size()) {
    throw CacheError("bundle: one model per class id required");
  }
  return bundle;
}

std::uint64_t matrix_digest(const Eigen::MatrixXd& m) {
  detail::Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(m.rows()));
  h.update_u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) h.update_double(m(i, j));
  }
  return h.value();
}

}  // namespace eplap
