#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hsphere/hsphere.hpp"

namespace fs = std::filesystem;
using namespace hsphere;

namespace {

// Training flags share their names with the configuration file keys, so a
// flag given on the command line simply replaces the key read from --config.
const std::vector<std::pair<std::string, std::string>> kValueFlags = {
    {"variant", "plain|multitask|hierarchy|manifold|riemann"},
    {"gamma", "radius decay"},
    {"r0", "initial radius"},
    {"radius-mode", "fixed|learnable"},
    {"sphere-update", "riemannian|projected"},
    {"epochs", "number of epochs"},
    {"batch", "mini-batch size"},
    {"lr", "initial learning rate"},
    {"momentum", "SGD momentum"},
    {"wd", "weight decay"},
    {"seed", "random seed"},
    {"lambda-multitask", "weight of the super-class loss (multitask)"},
    {"lr-milestones", "comma-separated epoch fractions"},
    {"lr-factor", "learning-rate decay factor"},
    {"hidden", "comma-separated hidden widths"},
    {"feature-dim", "feature dimension d"},
    {"superclass-level", "tree depth used as super-classes"},
};
const std::vector<std::pair<std::string, std::string>> kSwitchFlags = {
    {"probe-2d", "insert a 2-d reduction layer before the last layer"},
    {"sphere-momentum", "keep a momentum buffer for the sphere columns"},
};

struct TrainFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  for (const auto& [name, help] : kValueFlags) cmd->add_option("--" + name, f.values[name], help);
  for (const auto& [name, help] : kSwitchFlags) cmd->add_flag("--" + name, f.switches[name], help);
}

TrainConfig resolve_config(CLI::App* cmd, const TrainFlags& f, TrainConfig base = {}) {
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    base = read_config(in, base);
  }
  for (const auto& [name, help] : kValueFlags) {
    if (cmd->count("--" + name)) apply_config_value(base, name, f.values.at(name));
  }
  for (const auto& [name, help] : kSwitchFlags) {
    if (cmd->count("--" + name)) apply_config_value(base, name, "true");
  }
  base.validate();
  return base;
}

struct Inputs {
  LabeledDataset data;
  HierarchyTree tree;
};

Inputs load_inputs(const std::string& data_path, const std::string& hierarchy_path) {
  auto stored = load_dataset(data_path);
  Inputs in{std::move(stored.dataset), {}};
  if (!hierarchy_path.empty()) {
    in.tree = load_hierarchy(hierarchy_path);
  } else if (stored.tree) {
    in.tree = std::move(*stored.tree);
  } else {
    throw std::runtime_error("no hierarchy: pass --hierarchy or store one with the dataset");
  }
  return in;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string config_text(const TrainConfig& c) {
  std::ostringstream out;
  write_config(out, c);
  return out.str();
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical sphere classification layers: hierarchy tools, training and checks"};
  app.require_subcommand(1);

  // hierarchy-validate
  std::string validate_file;
  bool validate_merge = false;
  auto* validate = app.add_subcommand("hierarchy-validate", "Parse a child/parent file and report |P| and |L|");
  validate->add_option("file", validate_file, "hierarchy file")->required();
  validate->add_flag("--merge-chains", validate_merge, "also report counts after merging single-child chains");

  // hierarchy-random
  int rand_leaves = 36;
  int rand_supers = 9;
  std::uint64_t rand_seed = 0;
  std::string rand_out;
  auto* hrandom = app.add_subcommand("hierarchy-random", "Write a random two-level hierarchy");
  hrandom->add_option("--leaves", rand_leaves, "number of leaves")->capture_default_str();
  hrandom->add_option("--supers", rand_supers, "number of super-classes")->capture_default_str();
  hrandom->add_option("--seed", rand_seed, "random seed")->capture_default_str();
  hrandom->add_option("--out", rand_out, "output file (stdout if omitted)");

  // hierarchy-export
  std::string export_hier;
  std::string export_out;
  double export_gamma = 0.5;
  double export_r0 = 1.0;
  auto* hexport = app.add_subcommand("hierarchy-export", "Write H and D as plain-text matrices");
  hexport->add_option("--hierarchy", export_hier, "hierarchy file")->required()->check(CLI::ExistingFile);
  hexport->add_option("--out", export_out, "output directory")->required();
  hexport->add_option("--gamma", export_gamma, "radius decay")->capture_default_str();
  hexport->add_option("--r0", export_r0, "initial radius")->capture_default_str();

  // gen-data
  SyntheticSpec spec;
  std::string gen_out;
  std::string gen_branching;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic hierarchical dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--supers", spec.num_supers, "super-classes")->capture_default_str();
  gen->add_option("--subs", spec.subs_per_super, "sub-classes per super-class")->capture_default_str();
  gen->add_option("--samples", spec.samples_per_class, "samples per class")->capture_default_str();
  gen->add_option("--input-dim", spec.input_dim, "input dimension")->capture_default_str();
  gen->add_option("--super-spread", spec.super_spread, "norm of the depth-1 offsets")->capture_default_str();
  gen->add_option("--sub-spread", spec.sub_spread, "norm of the leaf offsets")->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "sample noise sigma")->capture_default_str();
  gen->add_option("--branching", gen_branching, "comma-separated branching per level (overrides --supers/--subs)");
  gen->add_option("--seed", spec.seed, "random seed")->capture_default_str();

  // train
  TrainFlags train_flags;
  std::string train_data;
  std::string train_hier;
  std::string train_out;
  auto* cmd_train = app.add_subcommand("train", "Train one model and write metrics, summary and checkpoint");
  cmd_train->add_option("--data", train_data, "dataset directory or manifest")->required();
  cmd_train->add_option("--hierarchy", train_hier, "hierarchy file (default: the dataset's)");
  cmd_train->add_option("--out", train_out, "output directory")->required();
  add_train_flags(cmd_train, train_flags);

  // eval
  std::string eval_data;
  std::string eval_hier;
  std::string eval_ckpt;
  std::string eval_split = "test";
  std::string eval_out;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  cmd_eval->add_option("--data", eval_data, "dataset directory or manifest")->required();
  cmd_eval->add_option("--hierarchy", eval_hier, "hierarchy file (default: the dataset's)");
  cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  cmd_eval->add_option("--split", eval_split, "test|train|all")->capture_default_str()->check(CLI::IsMember({"test", "train", "all"}));
  cmd_eval->add_option("--out", eval_out, "directory for eval.txt");

  // gradcheck
  TrainFlags gc_flags;
  std::string gc_hier;
  double gc_tol = 1e-5;
  double gc_step = 1e-5;
  int gc_input = 6;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  cmd_gc->add_option("--hierarchy", gc_hier, "hierarchy file (default: 2 supers x 3 subs)");
  cmd_gc->add_option("--tol", gc_tol, "pass threshold on the relative error")->capture_default_str();
  cmd_gc->add_option("--step", gc_step, "finite-difference step")->capture_default_str();
  cmd_gc->add_option("--input-dim", gc_input, "input dimension")->capture_default_str();
  add_train_flags(cmd_gc, gc_flags);

  // sweep-radius
  TrainFlags sweep_flags;
  std::string sweep_data;
  std::string sweep_hier;
  std::string sweep_out;
  std::string sweep_gammas = "0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9,0.95,1.0";
  int sweep_jobs = 1;
  auto* cmd_sweep = app.add_subcommand("sweep-radius", "Train once per radius decay and tabulate accuracy");
  cmd_sweep->add_option("--data", sweep_data, "dataset directory or manifest")->required();
  cmd_sweep->add_option("--hierarchy", sweep_hier, "hierarchy file (default: the dataset's)");
  cmd_sweep->add_option("--out", sweep_out, "output directory")->required();
  cmd_sweep->add_option("--gammas", sweep_gammas, "comma-separated decays in (0, 1]")->capture_default_str();
  cmd_sweep->add_option("--parallel", sweep_jobs, "number of trainings run at once")->capture_default_str()->check(CLI::PositiveNumber);
  add_train_flags(cmd_sweep, sweep_flags);

  // ablate-random-tree
  TrainFlags abl_flags;
  std::string abl_data;
  std::string abl_hier;
  std::string abl_out;
  std::uint64_t abl_tree_seed = 0;
  auto* cmd_abl = app.add_subcommand("ablate-random-tree", "Compare the true hierarchy with a random one");
  cmd_abl->add_option("--data", abl_data, "dataset directory or manifest")->required();
  cmd_abl->add_option("--hierarchy", abl_hier, "true hierarchy (default: the dataset's)");
  cmd_abl->add_option("--out", abl_out, "output directory");
  cmd_abl->add_option("--tree-seed", abl_tree_seed, "seed of the random hierarchy")->capture_default_str();
  add_train_flags(cmd_abl, abl_flags);

  // export-embeddings
  std::string emb_data;
  std::string emb_hier;
  std::string emb_ckpt;
  std::string emb_out;
  auto* cmd_emb = app.add_subcommand("export-embeddings", "Write last-layer inputs of every sample as CSV");
  cmd_emb->add_option("--data", emb_data, "dataset directory or manifest")->required();
  cmd_emb->add_option("--hierarchy", emb_hier, "hierarchy file (default: the dataset's)");
  cmd_emb->add_option("--checkpoint", emb_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  cmd_emb->add_option("--out", emb_out, "output CSV file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      auto tree = load_hierarchy(validate_file);
      TreeIndex index(tree);
      std::cout << "|P|=" << tree.num_p() << " |L|=" << tree.num_l() << '\n';
      std::cout << "depth=" << index.max_depth() << '\n';
      if (validate_merge) {
        auto merged = merge_single_child_chains(tree);
        std::cout << "merged |P|=" << merged.num_p() << " |L|=" << merged.num_l() << '\n';
      }
    } else if (*hrandom) {
      auto tree = random_hierarchy(rand_leaves, rand_supers, rand_seed);
      if (rand_out.empty()) {
        write_hierarchy(std::cout, tree);
      } else {
        save_hierarchy(rand_out, tree);
        std::cout << "wrote " << rand_out << " |P|=" << tree.num_p() << " |L|=" << tree.num_l() << '\n';
      }
    } else if (*hexport) {
      auto tree = load_hierarchy(export_hier);
      RadiusSpec rs;
      rs.gamma = export_gamma;
      rs.r0 = export_r0;
      HierarchicalLayer h(tree);
      const Vector d = build_radius_diagonal(h, rs);
      fs::create_directories(export_out);
      std::ofstream hout(fs::path(export_out) / "H.txt");
      write_matrix_text(hout, h.to_dense());
      std::ofstream dout(fs::path(export_out) / "D.txt");
      write_matrix_text(dout, Matrix(d.asDiagonal()));
      std::cout << "H " << h.rows() << "x" << h.cols() << ", D " << d.size() << "x" << d.size() << " -> " << export_out
                << '\n';
    } else if (*gen) {
      if (!gen_branching.empty()) {
        for (double b : parse_list(gen_branching)) spec.branching.push_back(static_cast<int>(b));
      }
      auto g = generate(spec);
      save_dataset(gen_out, g.dataset, &g.tree);
      std::cout << "samples=" << g.dataset.size() << " classes=" << g.tree.num_l() << " |P|=" << g.tree.num_p()
                << " train=" << g.dataset.train.size() << " test=" << g.dataset.test.size() << " -> " << gen_out << '\n';
    } else if (*cmd_train) {
      const TrainConfig config = resolve_config(cmd_train, train_flags);
      auto in = load_inputs(train_data, train_hier);
      fs::create_directories(train_out);
      const fs::path out(train_out);
      write_text(out / "config.txt", config_text(config));
      auto result = train(config, in.data, in.tree);
      std::ostringstream metrics;
      write_metrics_csv(metrics, result.history);
      write_text(out / "metrics.csv", metrics.str());
      const std::string summary = result.history.empty() ? std::string("no epochs run\n")
                                                         : format_summary(config.model.variant, result.history.back());
      write_text(out / "summary.txt", summary);
      save_checkpoint(out / "checkpoint.txt", result.model);
      std::cout << summary;
    } else if (*cmd_eval) {
      auto in = load_inputs(eval_data, eval_hier);
      const Model model = load_checkpoint(eval_ckpt, in.tree);
      std::vector<std::size_t> rows;
      if (eval_split == "test") rows = in.data.test;
      else if (eval_split == "train") rows = in.data.train;
      else for (std::size_t i = 0; i < in.data.size(); ++i) rows.push_back(i);
      const auto rec = evaluate(model, in.data, rows);
      std::ostringstream text;
      text << format_summary(model.variant(), rec);
      char buf[96];
      std::snprintf(buf, sizeof buf, "split=%s samples=%zu loss=%.6f\n", eval_split.c_str(), rows.size(), rec.train_loss);
      text << buf;
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_text(fs::path(eval_out) / "eval.txt", text.str());
      }
      std::cout << text.str();
    } else if (*cmd_gc) {
      TrainConfig base;
      base.model.hidden_dims = {8, 8};
      base.model.feature_dim = 8;
      base.batch_size = 4;
      const TrainConfig config = resolve_config(cmd_gc, gc_flags, base);
      const int small[] = {2, 3};
      const HierarchyTree tree = gc_hier.empty() ? layered_tree(small) : load_hierarchy(gc_hier);
      ModelConfig mc = config.model;
      mc.input_dim = gc_input;
      const Model model(mc, tree, config.seed);
      Rng rng(config.seed + 1);
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix x(config.batch_size, gc_input);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
      std::vector<int> labels;
      for (int i = 0; i < config.batch_size; ++i) labels.push_back(static_cast<int>(uniform_index(rng, tree.num_l())));
      const auto report = grad_check(model, x, labels, gc_tol, gc_step);
      for (const auto& e : report.entries) {
        std::printf("%-22s %6zu  %.3e\n", e.tensor.c_str(), e.size, e.max_rel_error);
      }
      std::printf("max-rel-error %.3e (%s, tolerance %.1e)\n", report.max_error(), report.passed() ? "pass" : "FAIL",
                  report.tolerance);
      return report.passed() ? 0 : 2;
    } else if (*cmd_sweep) {
      const TrainConfig config = resolve_config(cmd_sweep, sweep_flags);
      auto in = load_inputs(sweep_data, sweep_hier);
      const auto gammas = parse_list(sweep_gammas);
      std::vector<SweepRow> rows;
      if (sweep_jobs <= 1) {
        rows = radius_sweep(config, in.data, in.tree, gammas);
      } else {
        // each gamma is an independent run; results are collected in order
        rows.resize(gammas.size());
        for (std::size_t start = 0; start < gammas.size(); start += static_cast<std::size_t>(sweep_jobs)) {
          std::vector<std::future<std::vector<SweepRow>>> jobs;
          const auto end = std::min(gammas.size(), start + static_cast<std::size_t>(sweep_jobs));
          for (std::size_t k = start; k < end; ++k) {
            jobs.push_back(std::async(std::launch::async, [&, k] {
              return radius_sweep(config, in.data, in.tree, std::span<const double>(&gammas[k], 1));
            }));
          }
          for (std::size_t k = start; k < end; ++k) rows[k] = jobs[k - start].get().front();
        }
      }
      fs::create_directories(sweep_out);
      const fs::path out(sweep_out);
      write_text(out / "config.txt", config_text(config));
      const std::string table = format_sweep_table(rows);
      write_text(out / "sweep.txt", table);
      std::ostringstream csv;
      csv << "gamma,acc,super_acc,loss\n";
      char buf[128];
      for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", r.gamma, r.test_accuracy, r.superclass_accuracy,
                      r.final_loss);
        csv << buf;
      }
      write_text(out / "sweep.csv", csv.str());
      std::cout << table;
    } else if (*cmd_abl) {
      const TrainConfig config = resolve_config(cmd_abl, abl_flags);
      auto in = load_inputs(abl_data, abl_hier);
      const auto r = random_hierarchy_ablation(config, in.data, in.tree, abl_tree_seed);
      std::string table = "Hierarchy | Test acc (%) | Super acc (%)\n----------+--------------+--------------\n";
      char line[96];
      std::snprintf(line, sizeof line, "true      | %12.2f | %13.2f\n", r.true_tree.test_accuracy,
                    r.true_tree.superclass_accuracy);
      table += line;
      std::snprintf(line, sizeof line, "random    | %12.2f | %13.2f\n", r.random.test_accuracy,
                    r.random.superclass_accuracy);
      table += line;
      if (!abl_out.empty()) {
        fs::create_directories(abl_out);
        write_text(fs::path(abl_out) / "config.txt", config_text(config));
        write_text(fs::path(abl_out) / "ablation.txt", table);
        save_hierarchy(fs::path(abl_out) / "random_hierarchy.txt", r.random_tree);
      }
      std::cout << table;
    } else if (*cmd_emb) {
      auto in = load_inputs(emb_data, emb_hier);
      const Model model = load_checkpoint(emb_ckpt, in.tree);
      if (fs::path(emb_out).has_parent_path()) fs::create_directories(fs::path(emb_out).parent_path());
      export_embeddings(model, in.data, emb_out);
      std::cout << "wrote " << in.data.size() << " rows x " << model.last_layer_dim() + 3 << " columns to " << emb_out
                << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
