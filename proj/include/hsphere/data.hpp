#pragma once

// Synthetic hierarchical Gaussian-mixture datasets and their on-disk form:
//   manifest.txt   key=value lines naming the other files
//   data.csv       header "label,f1,...,fd", then one sample per line
//   train.txt      row indices of the training split, one per line
//   test.txt       row indices of the test split
//   hierarchy.txt  optional, child/parent pair format

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hsphere/common.hpp"
#include "hsphere/hierarchy.hpp"
#include "hsphere/sphere.hpp"

namespace hsphere {

struct SyntheticSpec {
  int num_supers = 9;
  int subs_per_super = 4;
  int samples_per_class = 40;
  int input_dim = 16;
  double super_spread = 4.0;
  double sub_spread = 1.5;
  double noise_sigma = 0.6;
  std::uint64_t seed = 0;
  // Optional deeper trees: branching factor per level, overriding
  // {num_supers, subs_per_super}. Offsets shrink geometrically from
  // super_spread at depth 1 to sub_spread at the leaves.
  std::vector<int> branching;
  double train_fraction = 0.8;

  std::vector<int> levels() const {
    return branching.empty() ? std::vector<int>{num_supers, subs_per_super} : branching;
  }
};

struct LabeledDataset {
  Matrix features;  // n x input_dim
  std::vector<int> labels;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t size() const noexcept { return labels.size(); }
  Eigen::Index input_dim() const noexcept { return features.cols(); }
  int num_classes() const {
    int m = -1;
    for (int y : labels) m = std::max(m, y);
    return m + 1;
  }

  Matrix rows(std::span<const std::size_t> idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
    return out;
  }
  std::vector<int> labels_of(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels.at(i));
    return out;
  }
};

struct GeneratedData {
  LabeledDataset dataset;
  HierarchyTree tree;
  Matrix class_means;  // input_dim x |L|
};

inline void validate_spec(const SyntheticSpec& s) {
  for (int b : s.levels()) {
    if (b < 1) throw std::invalid_argument("branching counts must be >= 1");
  }
  if (s.samples_per_class < 1 || s.input_dim < 1) throw std::invalid_argument("counts must be >= 1");
  if (!(s.super_spread > 0.0) || !(s.sub_spread > 0.0) || !(s.noise_sigma > 0.0)) {
    throw std::invalid_argument("spreads and noise sigma must be positive");
  }
  if (!(s.sub_spread < s.super_spread)) throw std::invalid_argument("sub_spread must be smaller than super_spread");
  if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) throw std::invalid_argument("train_fraction must be in (0, 1)");
}

/// Node means are offsets from the parent mean along random directions; the
/// depth-1 offsets have norm super_spread (super-class means on that sphere)
/// and leaf offsets have norm sub_spread. Samples add isotropic noise. Each
/// class is split train/test by a seeded shuffle.
inline GeneratedData generate(const SyntheticSpec& spec) {
  validate_spec(spec);
  const auto levels = spec.levels();
  GeneratedData out;
  out.tree = layered_tree(levels);
  TreeIndex index(out.tree);
  const int depth = static_cast<int>(levels.size());

  Rng rng(spec.seed);
  std::map<NodeId, Vector> mean;
  mean.emplace(index.root(), Vector::Zero(spec.input_dim));
  for (NodeId id : out.tree.p_order) {  // breadth-first, parents come first
    const int k = index.depth(id);
    const double frac = depth == 1 ? 0.0 : static_cast<double>(k - 1) / (depth - 1);
    const double spread = spec.super_spread * std::pow(spec.sub_spread / spec.super_spread, frac);
    const Vector dir = sphere::random_sphere_point(spec.input_dim, rng).vector();
    mean.emplace(id, mean.at(*index.parent(id)) + spread * dir);
  }

  const auto num_l = static_cast<int>(out.tree.num_l());
  out.class_means.resize(spec.input_dim, num_l);
  for (int j = 0; j < num_l; ++j) out.class_means.col(j) = mean.at(out.tree.l_order[static_cast<std::size_t>(j)]);

  const auto n = static_cast<Eigen::Index>(num_l) * spec.samples_per_class;
  auto& ds = out.dataset;
  ds.features.resize(n, spec.input_dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, spec.noise_sigma);
  Eigen::Index row = 0;
  for (int j = 0; j < num_l; ++j) {
    std::vector<std::size_t> rows;
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (Eigen::Index c = 0; c < spec.input_dim; ++c) ds.features(row, c) = out.class_means(c, j) + normal(rng);
      ds.labels[static_cast<std::size_t>(row)] = j;
      rows.push_back(static_cast<std::size_t>(row));
    }
    shuffle_in_place(rows, rng);
    auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * spec.samples_per_class));
    n_train = std::clamp<std::size_t>(n_train, 1, rows.size() > 1 ? rows.size() - 1 : 1);
    for (std::size_t k = 0; k < rows.size(); ++k) (k < n_train ? ds.train : ds.test).push_back(rows[k]);
  }
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  return out;
}

/// Labels cover 0..C-1, splits are disjoint and together cover every row.
inline void check_dataset(const LabeledDataset& ds) {
  const auto n = ds.size();
  if (static_cast<std::size_t>(ds.features.rows()) != n) throw std::invalid_argument("feature/label count mismatch");
  const int c = ds.num_classes();
  std::vector<bool> seen_label(static_cast<std::size_t>(std::max(c, 0)), false);
  for (int y : ds.labels) {
    if (y < 0) throw std::invalid_argument("negative label");
    seen_label[static_cast<std::size_t>(y)] = true;
  }
  for (int y = 0; y < c; ++y) {
    if (!seen_label[static_cast<std::size_t>(y)]) throw std::invalid_argument("label " + std::to_string(y) + " never occurs");
  }
  std::vector<int> owner(n, 0);
  for (const auto* split : {&ds.train, &ds.test}) {
    for (std::size_t i : *split) {
      if (i >= n) throw std::invalid_argument("split index " + std::to_string(i) + " out of range");
      if (owner[i]++) throw std::invalid_argument("row " + std::to_string(i) + " appears in more than one split");
    }
  }
  if (!ds.train.empty() || !ds.test.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!owner[i]) throw std::invalid_argument("row " + std::to_string(i) + " belongs to no split");
    }
  }
}

inline void write_csv(std::ostream& out, const LabeledDataset& ds) {
  out << "label";
  for (Eigen::Index c = 0; c < ds.input_dim(); ++c) out << ",f" << c + 1;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (Eigen::Index c = 0; c < ds.input_dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(static_cast<Eigen::Index>(i), c));
      out << ',' << buf;
    }
    out << '\n';
  }
}

/// Reads labels and features; the splits are left empty.
inline LabeledDataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header_fields = std::count(line.begin(), line.end(), ',') + 1;
  if (line.rfind("label", 0) != 0 || header_fields < 2) throw ParseError("line 1: header must be 'label,f1,...,fd'");
  const auto dim = static_cast<Eigen::Index>(header_fields - 1);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (static_cast<Eigen::Index>(fields.size()) != dim + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) + " columns, found " +
                       std::to_string(fields.size()));
    }
    int label = 0;
    auto f0 = fields[0];
    auto [p0, e0] = std::from_chars(f0.data(), f0.data() + f0.size(), label);
    if (e0 != std::errc() || p0 != f0.data() + f0.size() || label < 0) {
      throw ParseError("line " + std::to_string(line_no) + ": bad label '" + std::string(f0) + "'");
    }
    labels.push_back(label);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      auto f = fields[k];
      while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
      double v = 0.0;
      auto [p, e] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (e != std::errc() || p != f.data() + f.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(fields[k]) + "'");
      }
      values.push_back(v);
    }
  }
  LabeledDataset ds;
  ds.labels = std::move(labels);
  ds.features.resize(static_cast<Eigen::Index>(ds.labels.size()), dim);
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index c = 0; c < dim; ++c) ds.features(i, c) = values[static_cast<std::size_t>(i * dim + c)];
  }
  return ds;
}

namespace detail {

inline void write_indices(const std::filesystem::path& path, const std::vector<std::size_t>& idx) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i : idx) out << i << '\n';
}

inline std::vector<std::size_t> read_indices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::size_t> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    auto v = tokens.size() == 1 ? parse_id(tokens[0]) : std::nullopt;
    if (!v || *v < 0) throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": bad index");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

inline std::map<std::string, std::string> read_key_values(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source + " line " + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t");
      auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace detail

struct StoredDataset {
  LabeledDataset dataset;
  std::optional<HierarchyTree> tree;
};

/// Writes the dataset (and optionally its hierarchy) into `dir`.
inline void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds,
                         const HierarchyTree* tree = nullptr) {
  check_dataset(ds);
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "data.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "data.csv").string());
    write_csv(out, ds);
  }
  detail::write_indices(dir / "train.txt", ds.train);
  detail::write_indices(dir / "test.txt", ds.test);
  if (tree) save_hierarchy(dir / "hierarchy.txt", *tree);
  std::ofstream m(dir / "manifest.txt");
  m << "format=hsphere-dataset-1\n"
    << "data=data.csv\n"
    << "train=train.txt\n"
    << "test=test.txt\n";
  if (tree) m << "hierarchy=hierarchy.txt\n";
  m << "samples=" << ds.size() << "\n"
    << "input_dim=" << ds.input_dim() << "\n"
    << "num_classes=" << ds.num_classes() << "\n";
}

/// Loads a dataset from a manifest file or a directory containing manifest.txt.
inline StoredDataset load_dataset(const std::filesystem::path& path) {
  const auto manifest = std::filesystem::is_directory(path) ? path / "manifest.txt" : path;
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open dataset manifest " + manifest.string());
  const auto kv = detail::read_key_values(in, manifest.filename().string());
  const auto base = manifest.parent_path();
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("manifest is missing '" + std::string(key) + "'");
    return base / it->second;
  };

  for (const char* key : {"data", "train", "test"}) need(key);
  if (auto it = kv.find("format"); it != kv.end() && it->second != "hsphere-dataset-1") {
    throw ParseError("unsupported dataset format '" + it->second + "'");
  }

  StoredDataset out;
  std::ifstream csv(need("data"));
  if (!csv) throw std::runtime_error("cannot open " + need("data").string());
  out.dataset = read_csv(csv);
  out.dataset.train = detail::read_indices(need("train"));
  out.dataset.test = detail::read_indices(need("test"));
  check_dataset(out.dataset);
  if (kv.contains("hierarchy")) out.tree = load_hierarchy(need("hierarchy"));
  return out;
}

}  // namespace hsphere
