#pragma once

// Model checkpoints and embedding export.
//
// Checkpoint (plain text, versioned):
//   hsphere-checkpoint 1
//   input-dim <n>
//   config <key>=<value>        one line per configuration key
//   tensor <name> <rows> <cols>
//   <rows lines of row-major doubles, 17 significant digits>
//   ...
//   end

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "hsphere/data.hpp"
#include "hsphere/model.hpp"
#include "hsphere/training.hpp"

namespace hsphere {

inline constexpr const char* kCheckpointMagic = "hsphere-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const Model& model) {
  TrainConfig echo;
  echo.model = model.config();
  std::ostringstream cfg;
  write_config(cfg, echo);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "input-dim " << model.config().input_dim << '\n';
  std::istringstream lines(cfg.str());
  for (std::string line; std::getline(lines, line);) out << "config " << line << '\n';
  char buf[32];
  for (const auto& [name, t] : model.params().tensors()) {
    out << "tensor " << name << ' ' << t->rows() << ' ' << t->cols() << '\n';
    for (Eigen::Index i = 0; i < t->rows(); ++i) {
      for (Eigen::Index j = 0; j < t->cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", (*t)(i, j));
        out << (j ? " " : "") << buf;
      }
      out << '\n';
    }
  }
  out << "end\n";
}

/// Rebuilds a model from a checkpoint. The tree must be the one it was trained on.
inline Model read_checkpoint(std::istream& in, const HierarchyTree& tree) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw ParseError("not a checkpoint file");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));

  TrainConfig cfg;
  int input_dim = -1;
  std::map<std::string, Matrix> tensors;
  std::string word;
  while (in >> word) {
    if (word == "end") break;
    if (word == "input-dim") {
      in >> input_dim;
    } else if (word == "config") {
      std::string kv;
      in >> kv;
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("bad config line in checkpoint");
      apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    } else if (word == "tensor") {
      std::string name;
      Eigen::Index rows = 0;
      Eigen::Index cols = 0;
      if (!(in >> name >> rows >> cols)) throw ParseError("bad tensor header in checkpoint");
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
          if (!(in >> m(i, j))) throw ParseError("truncated tensor '" + name + "'");
        }
      }
      tensors.emplace(name, std::move(m));
    } else {
      throw ParseError("unexpected token '" + word + "' in checkpoint");
    }
  }
  if (word != "end") throw ParseError("checkpoint is missing its end marker");
  if (input_dim < 1) throw ParseError("checkpoint is missing input-dim");

  ModelConfig mc = cfg.model;
  mc.input_dim = input_dim;
  Model model(mc, tree, 0);
  for (auto& [name, t] : model.params().tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint lacks tensor '" + name + "'");
    if (it->second.rows() != t->rows() || it->second.cols() != t->cols()) {
      throw ParseError("tensor '" + name + "' has the wrong shape for this hierarchy");
    }
    *t = it->second;
    tensors.erase(it);
  }
  if (!tensors.empty()) throw ParseError("checkpoint has unexpected tensor '" + tensors.begin()->first + "'");
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
}

inline Model load_checkpoint(const std::filesystem::path& path, const HierarchyTree& tree) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in, tree);
}

/// CSV "sample_id,label,superclass,e1..ek" with the last-layer input of every
/// sample (k = 2 when the probe is attached).
inline void write_embeddings(std::ostream& out, const Model& model, const LabeledDataset& data) {
  const Matrix e = model.features(data.features);
  const auto supers = model.super_labels(data.labels);
  out << "sample_id,label,superclass";
  for (Eigen::Index c = 0; c < e.cols(); ++c) out << ",e" << c + 1;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i << ',' << data.labels[i] << ',' << supers[i];
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", e(static_cast<Eigen::Index>(i), c));
      out << ',' << buf;
    }
    out << '\n';
  }
}

inline void export_embeddings(const Model& model, const LabeledDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embeddings " + path.string());
  write_embeddings(out, model, data);
  if (!out) throw std::runtime_error("failed writing embeddings " + path.string());
}

}  // namespace hsphere
