#include "eplap/dataset.hpp"

#include "eplap/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace eplap {

namespace {

// Stratified labeled count. ceil() on a double product can round a value
// like 0.1 * 50 up to 6 because 0.1 is not representable, so shave an
// epsilon before taking the ceiling.
int labeled_count_for(double fraction, int class_count) {
  const double raw = fraction * static_cast<double>(class_count);
  int c = static_cast<int>(std::ceil(raw - 1e-9));
  c = std::max(c, 1);
  c = std::min(c, class_count);
  return c;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_ws(std::string s) {
  const auto is_ws = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  };
  while (!s.empty() && is_ws(s.back())) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && is_ws(s[start])) ++start;
  return s.substr(start);
}

double parse_double_or_throw(const std::string& field, std::size_t line_no,
                             const std::string& column) {
  const std::string trimmed = strip_ws(field);
  double value = 0.0;
  const char* begin = trimmed.data();
  const char* end = begin + trimmed.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("csv line " + std::to_string(line_no) +
                                ", column '" + column + "': cannot parse '" +
                                trimmed + "' as a real number");
  }
  return value;
}

int parse_label_or_throw(const std::string& field, std::size_t line_no) {
  const std::string trimmed = strip_ws(field);
  int value = 0;
  const char* begin = trimmed.data();
  const char* end = begin + trimmed.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || value < 0) {
    throw std::invalid_argument("csv line " + std::to_string(line_no) +
                                ": label '" + trimmed +
                                "' is not a nonnegative integer");
  }
  return value;
}

}  // namespace

std::vector<int> Dataset::class_ids() const {
  std::set<int> ids(labels.begin(), labels.end());
  return {ids.begin(), ids.end()};
}

Eigen::Index Dataset::labeled_count() const {
  Eigen::Index c = 0;
  for (auto m : labeled_mask) c += (m != 0);
  return c;
}

void Dataset::validate() const {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n || labeled_mask.size() != n || sample_ids.size() != n) {
    throw std::invalid_argument(
        "dataset: labels/mask/ids must all have one entry per feature row");
  }
  if (!features.allFinite()) {
    throw std::invalid_argument("dataset: features contain NaN or Inf");
  }
  for (int label : labels) {
    if (label < 0) throw std::invalid_argument("dataset: negative class id");
  }
}

Dataset make_two_moons(int n, double noise, std::uint64_t seed) {
  if (n < 4 || n % 2 != 0) {
    throw std::invalid_argument("two moons: n must be even and >= 4");
  }
  if (noise < 0.0) {
    throw std::invalid_argument("two moons: noise must be >= 0");
  }
  const int h = n / 2;
  Dataset ds;
  ds.features.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.labeled_mask.assign(static_cast<std::size_t>(n), 1);
  ds.sample_ids.resize(static_cast<std::size_t>(n));

  GaussianSampler gauss(seed);
  for (int i = 0; i < h; ++i) {
    const double t = M_PI * static_cast<double>(i) / static_cast<double>(h - 1);
    ds.features(i, 0) = std::cos(t) + noise * gauss.next();
    ds.features(i, 1) = std::sin(t) + noise * gauss.next();
    ds.labels[static_cast<std::size_t>(i)] = 0;
  }
  for (int i = 0; i < h; ++i) {
    const double t = M_PI * static_cast<double>(i) / static_cast<double>(h - 1);
    const int row = h + i;
    ds.features(row, 0) = 1.0 - std::cos(t) + noise * gauss.next();
    ds.features(row, 1) = 0.5 - std::sin(t) + noise * gauss.next();
    ds.labels[static_cast<std::size_t>(row)] = 1;
  }
  char buf[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "tm-%05d", i);
    ds.sample_ids[static_cast<std::size_t>(i)] = buf;
  }
  return ds;
}

Dataset load_features_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv file: " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("csv file is empty: " + path);
  }
  const auto header = split_fields(line);
  std::ptrdiff_t label_col = -1;
  std::ptrdiff_t id_col = -1;
  // With no explicit id column in the schema, a column literally named "id"
  // is treated as one so our own writer output round-trips.
  const std::string id_name = schema.id_column.value_or("id");
  std::vector<std::ptrdiff_t> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = strip_ws(header[c]);
    if (name == schema.label_column) {
      if (label_col >= 0) {
        throw std::invalid_argument("csv: duplicate label column '" + name + "'");
      }
      label_col = static_cast<std::ptrdiff_t>(c);
    } else if (name == id_name) {
      id_col = static_cast<std::ptrdiff_t>(c);
    } else {
      feature_cols.push_back(static_cast<std::ptrdiff_t>(c));
      feature_names.push_back(name);
    }
  }
  if (label_col < 0) {
    throw std::invalid_argument("csv: missing label column '" +
                                schema.label_column + "' in " + path);
  }
  if (schema.id_column && id_col < 0) {
    throw std::invalid_argument("csv: missing id column '" + *schema.id_column +
                                "' in " + path);
  }
  if (feature_cols.empty()) {
    throw std::invalid_argument("csv: no feature columns in " + path);
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_ws(line).empty()) continue;  // tolerate trailing blank lines
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw std::invalid_argument(
          "csv line " + std::to_string(line_no) + ": has " +
          std::to_string(fields.size()) + " fields, expected " +
          std::to_string(header.size()));
    }
    std::vector<double> row(feature_cols.size());
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      row[f] = parse_double_or_throw(
          fields[static_cast<std::size_t>(feature_cols[f])], line_no,
          feature_names[f]);
    }
    rows.push_back(std::move(row));
    labels.push_back(parse_label_or_throw(
        fields[static_cast<std::size_t>(label_col)], line_no));
    if (id_col >= 0) {
      ids.push_back(strip_ws(fields[static_cast<std::size_t>(id_col)]));
    } else {
      ids.push_back("row-" + std::to_string(rows.size() - 1));
    }
  }
  if (rows.empty()) {
    throw std::invalid_argument("csv: no data rows in " + path);
  }

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(feature_cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
    }
  }
  ds.labels = std::move(labels);
  ds.sample_ids = std::move(ids);
  ds.labeled_mask.assign(rows.size(), 1);
  ds.validate();
  return ds;
}

void write_features_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open csv file for write: " + path);
  out << "id,label";
  for (Eigen::Index j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    out << ds.sample_ids[static_cast<std::size_t>(i)] << ','
        << ds.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, j));
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Split split_and_mask(const Dataset& ds, const SplitSpec& spec) {
  ds.validate();
  if (spec.train_per_class < 1) {
    throw std::invalid_argument("split: train_per_class must be >= 1");
  }
  if (!(spec.labeled_fraction > 0.0) || spec.labeled_fraction > 1.0) {
    throw std::invalid_argument("split: labeled_fraction must be in (0, 1]");
  }

  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<Eigen::Index> train_idx;
  std::vector<Eigen::Index> test_idx;
  for (auto& [cls, members] : by_class) {  // std::map iterates classes ascending
    if (static_cast<int>(members.size()) <= spec.train_per_class) {
      throw std::invalid_argument(
          "split: class " + std::to_string(cls) + " has " +
          std::to_string(members.size()) + " samples, need more than " +
          std::to_string(spec.train_per_class) +
          " to populate both train and test");
    }
    std::vector<Eigen::Index> order = members;  // already ascending
    shuffle_deterministic(order, rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k < static_cast<std::size_t>(spec.train_per_class)) {
        train_idx.push_back(order[k]);
      } else {
        test_idx.push_back(order[k]);
      }
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  const auto take = [&ds](const std::vector<Eigen::Index>& idx) {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.dim());
    out.labels.resize(idx.size());
    out.labeled_mask.assign(idx.size(), 1);
    out.sample_ids.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.features.row(static_cast<Eigen::Index>(k)) = ds.features.row(idx[k]);
      out.labels[k] = ds.labels[static_cast<std::size_t>(idx[k])];
      out.sample_ids[k] = ds.sample_ids[static_cast<std::size_t>(idx[k])];
    }
    return out;
  };

  Split split;
  split.train = take(train_idx);
  split.test = take(test_idx);
  // Mask seed is offset from the split seed so the two draws are independent
  // streams; apply_label_mask lets callers re-draw with any seed later.
  apply_label_mask(split.train, spec.labeled_fraction,
                   spec.seed ^ 0x9e3779b97f4a7c15ULL);
  return split;
}

void apply_label_mask(Dataset& train, double labeled_fraction,
                      std::uint64_t seed) {
  train.validate();
  if (!(labeled_fraction > 0.0) || labeled_fraction > 1.0) {
    throw std::invalid_argument("label mask: fraction must be in (0, 1]");
  }
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    by_class[train.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  std::fill(train.labeled_mask.begin(), train.labeled_mask.end(),
            static_cast<std::uint8_t>(0));
  std::mt19937_64 rng(seed);
  for (auto& [cls, members] : by_class) {
    (void)cls;
    std::vector<Eigen::Index> order = members;
    shuffle_deterministic(order, rng);
    const int keep =
        labeled_count_for(labeled_fraction, static_cast<int>(members.size()));
    for (int k = 0; k < keep; ++k) {
      train.labeled_mask[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1;
    }
  }
}

}  // namespace eplap
