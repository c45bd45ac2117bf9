#pragma once

// Class hierarchies: parsing the child/parent pair format, validation,
// post-processing (DAG resolution, single-child merging), random trees and
// the canonical orderings of the node set P and the leaf set L.
//
// Conventions:
//  - The root is excluded from P; every other node is a row of H.
//  - P follows the order in which nodes first appear in the child column of
//    the source, followed by any top-level nodes that only ever appear as
//    parents (these hang off a synthetic root).
//  - L holds the nodes that never appear as a parent, in P order.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hsphere/common.hpp"

namespace hsphere {

/// Sequence of 1-based child positions from the root. Empty means the root.
struct NodePath {
  std::vector<int> indices;

  bool is_root() const noexcept { return indices.empty(); }
  std::size_t length() const noexcept { return indices.size(); }

  /// The path <p, i> of the i-th child.
  NodePath child(int i) const {
    if (i < 1) throw std::invalid_argument("child position must be >= 1");
    NodePath out = *this;
    out.indices.push_back(i);
    return out;
  }

  friend bool operator==(const NodePath&, const NodePath&) = default;
};

struct NodeRecord {
  NodeId id = 0;
  std::optional<NodeId> parent;  // empty for the root
  std::string label;             // empty when unlabeled

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

/// Plain data. Use validate_tree() or TreeIndex to check the invariants.
struct HierarchyTree {
  std::vector<NodeRecord> nodes;
  std::vector<NodeId> p_order;  // non-root nodes, row order of H
  std::vector<NodeId> l_order;  // leaves, column order of H; dataset label j is l_order[j]

  std::size_t num_p() const noexcept { return p_order.size(); }
  std::size_t num_l() const noexcept { return l_order.size(); }

  friend bool operator==(const HierarchyTree&, const HierarchyTree&) = default;
};

struct ValidationReport {
  std::vector<std::string> issues;

  bool ok() const noexcept { return issues.empty(); }

  bool mentions(std::string_view fragment) const {
    return std::any_of(issues.begin(), issues.end(),
                       [&](const std::string& s) { return s.find(fragment) != std::string::npos; });
  }

  std::string to_string() const {
    std::string out;
    for (const auto& s : issues) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
};

inline ValidationReport validate_tree(const HierarchyTree& tree) {
  ValidationReport report;
  auto issue = [&](std::string s) { report.issues.push_back(std::move(s)); };

  if (tree.nodes.empty()) {
    issue("empty tree: no nodes");
    return report;
  }

  std::unordered_map<NodeId, std::optional<NodeId>> parent_of;
  for (const auto& n : tree.nodes) {
    auto [it, inserted] = parent_of.emplace(n.id, n.parent);
    if (!inserted) {
      if (it->second != n.parent) {
        issue("multiple parents: node " + std::to_string(n.id));
      } else {
        issue("duplicate node record: " + std::to_string(n.id));
      }
    }
  }

  std::vector<NodeId> roots;
  std::unordered_map<NodeId, int> child_count;
  for (const auto& n : tree.nodes) {
    if (!n.parent) {
      roots.push_back(n.id);
    } else if (!parent_of.contains(*n.parent)) {
      issue("unknown parent: node " + std::to_string(n.id) + " refers to " + std::to_string(*n.parent));
    } else {
      ++child_count[*n.parent];
    }
  }
  if (roots.empty()) issue("no root");
  if (roots.size() > 1) issue("multiple roots: " + std::to_string(roots.size()) + " parentless nodes");

  // Every walk upward must terminate at a parentless node within |nodes| steps.
  std::unordered_set<NodeId> reported_cycle;
  for (const auto& [id, parent] : parent_of) {
    NodeId cur = id;
    std::size_t steps = 0;
    bool cyclic = false;
    while (true) {
      auto it = parent_of.find(cur);
      if (it == parent_of.end() || !it->second) break;
      cur = *it->second;
      if (++steps > parent_of.size()) {
        cyclic = true;
        break;
      }
    }
    if (cyclic && reported_cycle.insert(cur).second) {
      issue("cycle through node " + std::to_string(cur));
    }
  }

  if (tree.p_order.empty()) issue("no classes: P is empty");
  std::unordered_set<NodeId> in_p;
  for (NodeId id : tree.p_order) {
    auto it = parent_of.find(id);
    if (it == parent_of.end()) {
      issue("P lists unknown node " + std::to_string(id));
    } else if (!it->second) {
      issue("P lists the root " + std::to_string(id));
    }
    if (!in_p.insert(id).second) issue("P lists node " + std::to_string(id) + " twice");
  }
  for (const auto& [id, parent] : parent_of) {
    if (parent && !in_p.contains(id)) issue("P is missing node " + std::to_string(id));
  }

  std::unordered_set<NodeId> in_l;
  for (NodeId id : tree.l_order) {
    if (!in_p.contains(id)) issue("L lists node " + std::to_string(id) + " which is not in P");
    if (child_count.contains(id)) issue("L lists internal node " + std::to_string(id));
    if (!in_l.insert(id).second) issue("L lists node " + std::to_string(id) + " twice");
  }
  for (NodeId id : tree.p_order) {
    if (parent_of.contains(id) && !child_count.contains(id) && !in_l.contains(id)) {
      issue("leaf " + std::to_string(id) + " is missing from L");
    }
  }
  if (tree.l_order.size() > tree.p_order.size()) issue("|L| exceeds |P|");
  return report;
}

/// Read-only lookup structure over a valid tree. Construction throws
/// TreeError listing every violated invariant.
class TreeIndex {
 public:
  explicit TreeIndex(const HierarchyTree& tree) {
    if (auto report = validate_tree(tree); !report.ok()) throw TreeError("invalid tree: " + report.to_string());
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      const auto& n = tree.nodes[i];
      record_pos_.emplace(n.id, i);
      if (!n.parent) root_ = n.id;
    }
    records_ = tree.nodes;
    children_[root_];
    for (std::size_t i = 0; i < tree.p_order.size(); ++i) {
      NodeId id = tree.p_order[i];
      p_index_.emplace(id, i);
      children_[*record(id).parent].push_back(id);
      children_[id];
    }
    for (std::size_t j = 0; j < tree.l_order.size(); ++j) l_index_.emplace(tree.l_order[j], j);
    p_order_ = tree.p_order;
    depth_.emplace(root_, 0);
    // P is not necessarily top-down, so resolve depths through memoized walks.
    for (NodeId id : p_order_) depth_of(id);
    for (const auto& [id, d] : depth_) max_depth_ = std::max(max_depth_, d);
  }

  NodeId root() const noexcept { return root_; }
  bool contains(NodeId id) const { return record_pos_.contains(id); }
  std::size_t size() const noexcept { return records_.size(); }

  const NodeRecord& node(NodeId id) const { return record(id); }
  std::optional<NodeId> parent(NodeId id) const { return record(id).parent; }
  const std::vector<NodeId>& children(NodeId id) const {
    check(id);
    return children_.at(id);
  }
  bool is_leaf(NodeId id) const { return children(id).empty(); }

  /// Number of edges from the root; the root has depth 0.
  int depth(NodeId id) const {
    check(id);
    return depth_.at(id);
  }
  int max_depth() const noexcept { return max_depth_; }

  /// Row of `id` in H.
  std::size_t p_index(NodeId id) const {
    auto it = p_index_.find(id);
    if (it == p_index_.end()) throw std::out_of_range("node " + std::to_string(id) + " is not in P");
    return it->second;
  }
  /// Column of `id` in H.
  std::size_t l_index(NodeId id) const {
    auto it = l_index_.find(id);
    if (it == l_index_.end()) throw std::out_of_range("node " + std::to_string(id) + " is not in L");
    return it->second;
  }

  /// Non-root nodes from depth 1 down to `id` inclusive.
  std::vector<NodeId> path_from_root(NodeId id) const {
    std::vector<NodeId> path;
    for (NodeId cur = id; cur != root_; cur = *record(cur).parent) path.push_back(cur);
    std::reverse(path.begin(), path.end());
    return path;
  }

  NodeId ancestor_at_depth(NodeId id, int level) const {
    int d = depth(id);
    if (level < 0 || level > d) {
      throw std::out_of_range("node " + std::to_string(id) + " has no ancestor at depth " + std::to_string(level));
    }
    NodeId cur = id;
    for (; d > level; --d) cur = *record(cur).parent;
    return cur;
  }

  /// Nodes at exactly `level`, in P order.
  std::vector<NodeId> nodes_at_depth(int level) const {
    std::vector<NodeId> out;
    for (NodeId id : p_order_) {
      if (depth_.at(id) == level) out.push_back(id);
    }
    return out;
  }

  NodePath path_of(NodeId id) const {
    NodePath p;
    for (NodeId cur : path_from_root(id)) {
      const auto& siblings = children_.at(*record(cur).parent);
      auto pos = std::find(siblings.begin(), siblings.end(), cur) - siblings.begin();
      p.indices.push_back(static_cast<int>(pos) + 1);
    }
    return p;
  }

  NodeId node_at(const NodePath& path) const {
    NodeId cur = root_;
    for (int i : path.indices) {
      const auto& kids = children_.at(cur);
      if (i < 1 || static_cast<std::size_t>(i) > kids.size()) throw std::out_of_range("path leaves the tree");
      cur = kids[static_cast<std::size_t>(i) - 1];
    }
    return cur;
  }

 private:
  void check(NodeId id) const {
    if (!contains(id)) throw std::out_of_range("unknown node id " + std::to_string(id));
  }
  const NodeRecord& record(NodeId id) const {
    check(id);
    return records_[record_pos_.at(id)];
  }
  int depth_of(NodeId id) {
    if (auto it = depth_.find(id); it != depth_.end()) return it->second;
    int d = depth_of(*record(id).parent) + 1;
    depth_.emplace(id, d);
    return d;
  }

  std::vector<NodeRecord> records_;
  std::vector<NodeId> p_order_;
  std::unordered_map<NodeId, std::size_t> record_pos_;
  std::unordered_map<NodeId, std::vector<NodeId>> children_;
  std::unordered_map<NodeId, std::size_t> p_index_;
  std::unordered_map<NodeId, std::size_t> l_index_;
  std::unordered_map<NodeId, int> depth_;
  NodeId root_ = 0;
  int max_depth_ = 0;
};

inline int depth(const HierarchyTree& tree, NodeId id) { return TreeIndex(tree).depth(id); }

namespace detail {

// Builds a tree from (child, parent) edges where each child occurs once.
inline HierarchyTree tree_from_edges(const std::vector<std::pair<NodeId, NodeId>>& edges) {
  std::unordered_set<NodeId> children;
  std::unordered_set<NodeId> parents;
  for (const auto& [c, p] : edges) {
    children.insert(c);
    parents.insert(p);
  }
  std::vector<NodeId> tops;  // parent-only nodes, first appearance order
  std::unordered_set<NodeId> seen_top;
  NodeId max_id = 0;
  for (const auto& [c, p] : edges) {
    max_id = std::max({max_id, c, p});
    if (!children.contains(p) && seen_top.insert(p).second) tops.push_back(p);
  }
  if (tops.empty()) throw TreeError("cycle detected: every node has a parent");

  HierarchyTree tree;
  NodeId root = tops.front();
  const bool synthetic = tops.size() > 1;
  if (synthetic) root = max_id + 1;
  tree.nodes.push_back({root, std::nullopt, {}});
  for (const auto& [c, p] : edges) {
    tree.nodes.push_back({c, p, {}});
    tree.p_order.push_back(c);
  }
  if (synthetic) {
    for (NodeId t : tops) {
      tree.nodes.push_back({t, root, {}});
      tree.p_order.push_back(t);
    }
  }
  for (NodeId id : tree.p_order) {
    if (!parents.contains(id)) tree.l_order.push_back(id);
  }

  auto report = validate_tree(tree);
  if (report.mentions("cycle")) throw TreeError("cycle detected: " + report.to_string());
  if (!report.ok()) throw TreeError("invalid tree: " + report.to_string());
  return tree;
}

inline std::optional<NodeId> parse_id(std::string_view token) {
  NodeId value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Parses the pair format: a count N on the first line, then N lines
/// "child parent" of integer ids.
inline HierarchyTree parse_hierarchy(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_nonblank = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!detail::split_ws(line).empty()) return true;
    }
    return false;
  };

  if (!next_nonblank()) throw ParseError("empty hierarchy file");
  auto header = detail::split_ws(line);
  auto count = header.size() == 1 ? detail::parse_id(header[0]) : std::nullopt;
  if (!count || *count < 0) throw ParseError("line " + std::to_string(line_no) + ": expected a non-negative entry count");
  if (*count == 0) throw TreeError("no classes: the hierarchy file declares 0 entries");

  std::vector<std::pair<NodeId, NodeId>> edges;
  std::unordered_map<NodeId, NodeId> parent_of;
  for (NodeId k = 0; k < *count; ++k) {
    if (!next_nonblank()) {
      throw ParseError("count mismatch: header declares " + std::to_string(*count) + " entries, file has " +
                       std::to_string(k));
    }
    auto tokens = detail::split_ws(line);
    auto child = tokens.size() == 2 ? detail::parse_id(tokens[0]) : std::nullopt;
    auto parent = tokens.size() == 2 ? detail::parse_id(tokens[1]) : std::nullopt;
    if (!child || !parent) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed pair '" + line + "'");
    }
    if (*child == *parent) throw TreeError("cycle detected: node " + std::to_string(*child) + " is its own parent");
    auto [it, inserted] = parent_of.emplace(*child, *parent);
    if (!inserted) {
      if (it->second != *parent) {
        throw TreeError("line " + std::to_string(line_no) + ": node " + std::to_string(*child) +
                        " has multiple parents (" + std::to_string(it->second) + ", " + std::to_string(*parent) + ")");
      }
      continue;  // repeated identical pair
    }
    edges.emplace_back(*child, *parent);
  }
  if (next_nonblank()) {
    throw ParseError("count mismatch: extra entry at line " + std::to_string(line_no) + " beyond the declared " +
                     std::to_string(*count));
  }
  return detail::tree_from_edges(edges);
}

inline HierarchyTree parse_hierarchy_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_hierarchy(in);
}

inline HierarchyTree load_hierarchy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hierarchy file " + path.string());
  return parse_hierarchy(in);
}

/// Writes one "child parent" line per node of P, in P order, so parsing the
/// output reproduces the tree. Labels are not part of the format.
inline void write_hierarchy(std::ostream& out, const HierarchyTree& tree) {
  TreeIndex index(tree);
  out << tree.p_order.size() << '\n';
  for (NodeId id : tree.p_order) out << id << ' ' << *index.parent(id) << '\n';
}

inline std::string hierarchy_to_string(const HierarchyTree& tree) {
  std::ostringstream out;
  write_hierarchy(out, tree);
  return out.str();
}

inline void save_hierarchy(const std::filesystem::path& path, const HierarchyTree& tree) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write hierarchy file " + path.string());
  write_hierarchy(out, tree);
}

/// Removes every non-root node with exactly one child, attaching the child to
/// the removed node's parent. Leaves, labels and the ancestor relation among
/// surviving nodes are preserved; P keeps its relative order.
inline HierarchyTree merge_single_child_chains(const HierarchyTree& tree) {
  TreeIndex index(tree);
  auto removed = [&](NodeId id) { return id != index.root() && index.children(id).size() == 1; };

  HierarchyTree out;
  for (const auto& n : tree.nodes) {
    if (removed(n.id)) continue;
    NodeRecord rec = n;
    if (rec.parent) {
      NodeId p = *rec.parent;
      while (removed(p)) p = *index.parent(p);
      rec.parent = p;
    }
    out.nodes.push_back(rec);
  }
  for (NodeId id : tree.p_order) {
    if (!removed(id)) out.p_order.push_back(id);
  }
  out.l_order = tree.l_order;
  return out;
}

/// Resolves a DAG given as (child, parent) edges into a tree by keeping, for
/// each child, the smallest parent id. Children keep first-appearance order.
inline HierarchyTree dag_to_tree(const std::vector<std::pair<NodeId, NodeId>>& edges) {
  std::vector<NodeId> child_order;
  std::map<NodeId, std::set<NodeId>> parents;
  for (const auto& [c, p] : edges) {
    if (!parents.contains(c)) child_order.push_back(c);
    parents[c].insert(p);
  }
  std::vector<NodeId> sources;
  std::unordered_set<NodeId> seen;
  for (const auto& [c, p] : edges) {
    if (!parents.contains(p) && seen.insert(p).second) sources.push_back(p);
  }
  if (sources.empty()) throw TreeError("no root: every node has at least one parent");
  if (sources.size() > 1) {
    throw TreeError("disconnected node: " + std::to_string(sources[1]) + " cannot reach root " +
                    std::to_string(sources[0]));
  }
  const NodeId root = sources.front();

  std::vector<std::pair<NodeId, NodeId>> resolved;
  std::unordered_map<NodeId, NodeId> chosen;
  for (NodeId c : child_order) {
    NodeId p = *parents.at(c).begin();
    resolved.emplace_back(c, p);
    chosen.emplace(c, p);
  }
  for (NodeId c : child_order) {
    NodeId cur = c;
    std::size_t steps = 0;
    while (cur != root) {
      cur = chosen.at(cur);
      if (++steps > chosen.size()) {
        throw TreeError("disconnected node: " + std::to_string(c) + " does not reach root " + std::to_string(root));
      }
    }
  }
  return detail::tree_from_edges(resolved);
}

/// Two-level tree with leaves 0..L-1 (L in id order), super-classes L..L+S-1
/// and root L+S. P lists the super-classes first, then the leaves.
inline HierarchyTree two_level_tree(std::span<const int> super_of_leaf, int num_supers) {
  if (num_supers < 1) throw std::invalid_argument("need at least one super-class");
  const auto num_leaves = static_cast<NodeId>(super_of_leaf.size());
  const NodeId root = num_leaves + num_supers;
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (int s = 0; s < num_supers; ++s) edges.emplace_back(num_leaves + s, root);
  for (NodeId j = 0; j < num_leaves; ++j) {
    int s = super_of_leaf[static_cast<std::size_t>(j)];
    if (s < 0 || s >= num_supers) throw std::invalid_argument("super-class index out of range");
    edges.emplace_back(j, num_leaves + s);
  }
  return detail::tree_from_edges(edges);
}

/// Complete tree with the given branching factor per level. Leaves get ids
/// 0..L-1 in depth-first order, internal nodes follow in breadth-first order
/// and the root takes the last id. P is breadth-first (internal levels, then
/// leaves), so {S, k} reproduces two_level_tree with leaf j under super j / k.
inline HierarchyTree layered_tree(std::span<const int> branching) {
  if (branching.empty()) throw std::invalid_argument("branching must have at least one level");
  std::vector<NodeId> level_sizes{1};
  for (int b : branching) {
    if (b < 1) throw std::invalid_argument("branching factors must be >= 1");
    level_sizes.push_back(level_sizes.back() * b);
  }
  const NodeId num_leaves = level_sizes.back();
  NodeId internal = 0;
  for (std::size_t k = 1; k + 1 < level_sizes.size(); ++k) internal += level_sizes[k];
  const NodeId root = num_leaves + internal;

  std::vector<std::pair<NodeId, NodeId>> edges;
  std::vector<NodeId> prev{root};
  NodeId next_internal = num_leaves;
  for (std::size_t k = 1; k < level_sizes.size(); ++k) {
    const bool leaf_level = k + 1 == level_sizes.size();
    std::vector<NodeId> cur;
    NodeId leaf_id = 0;
    for (NodeId parent : prev) {
      for (int c = 0; c < branching[k - 1]; ++c) {
        NodeId id = leaf_level ? leaf_id++ : next_internal++;
        edges.emplace_back(id, parent);
        cur.push_back(id);
      }
    }
    prev = std::move(cur);
  }
  return detail::tree_from_edges(edges);
}

/// Random super-class assignment: every super-class receives at least one
/// leaf, the remaining leaves are assigned uniformly. Deterministic per seed.
inline HierarchyTree random_hierarchy(int num_leaves, int num_superclasses, std::uint64_t seed) {
  if (num_superclasses < 1 || num_leaves < num_superclasses) {
    throw std::invalid_argument("infeasible counts: need num_leaves >= num_superclasses >= 1");
  }
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(num_leaves));
  for (int j = 0; j < num_leaves; ++j) order[static_cast<std::size_t>(j)] = j;
  shuffle_in_place(order, rng);
  std::vector<int> super_of_leaf(static_cast<std::size_t>(num_leaves));
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto s = k < static_cast<std::size_t>(num_superclasses)
                 ? k
                 : uniform_index(rng, static_cast<std::size_t>(num_superclasses));
    super_of_leaf[static_cast<std::size_t>(order[k])] = static_cast<int>(s);
  }
  return two_level_tree(super_of_leaf, num_superclasses);
}

}  // namespace hsphere
