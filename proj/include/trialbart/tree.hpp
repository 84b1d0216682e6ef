#pragma once

#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace trialbart {

// One predictor the trees may split on. Binary columns are continuous
// variables with the single cutpoint 0.5; an unordered source indicator with
// three or more levels is categorical and splits on level subsets.
struct Variable {
  enum class Kind { kContinuous, kCategorical };
  Kind kind = Kind::kContinuous;
  std::vector<double> cutpoints;  // ascending, strictly inside the observed range
  int num_levels = 0;             // categorical only
};

using VariableSet = std::vector<Variable>;

// Equally spaced interior cutpoints over the observed range. A constant
// column gets no cutpoints and is never selected for splitting.
inline std::vector<double> interior_cutpoints(std::span<const double> values, int count) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> cuts;
  if (!(hi > lo)) return cuts;
  cuts.reserve(static_cast<std::size_t>(count));
  const double step = (hi - lo) / (count + 1);
  for (int t = 1; t <= count; ++t) cuts.push_back(lo + step * t);
  return cuts;
}

struct SplitRule {
  std::int32_t var = -1;          // -1 marks a terminal node
  std::int32_t cut_index = -1;    // continuous: index into Variable::cutpoints
  double threshold = 0.0;         // continuous: x[var] <= threshold goes left
  std::uint32_t left_levels = 0;  // categorical: level bit set goes left
};

struct TreeNode {
  SplitRule rule;
  std::int32_t parent = -1;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double leaf_value = 0.0;

  bool is_leaf() const { return rule.var < 0; }
};

// Per-variable range of split rules still usable beneath a node, given the
// rules on the path from the root.
struct VarBounds {
  std::int32_t lo = 0;          // continuous: usable cut_index range [lo, hi]
  std::int32_t hi = -1;
  std::uint32_t levels = 0;     // categorical: levels that can still reach the node
};

using BoundsSet = std::vector<VarBounds>;

inline BoundsSet root_bounds(const VariableSet& vars) {
  BoundsSet b(vars.size());
  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (vars[v].kind == Variable::Kind::kContinuous) {
      b[v].lo = 0;
      b[v].hi = static_cast<std::int32_t>(vars[v].cutpoints.size()) - 1;
    } else {
      b[v].levels = (vars[v].num_levels >= 32)
                        ? ~0u
                        : ((1u << vars[v].num_levels) - 1u);
    }
  }
  return b;
}

inline void apply_rule_to_bounds(const SplitRule& rule, const Variable& var, bool left_child,
                                 VarBounds& b) {
  if (var.kind == Variable::Kind::kContinuous) {
    if (left_child) {
      b.hi = std::min(b.hi, rule.cut_index - 1);
    } else {
      b.lo = std::max(b.lo, rule.cut_index + 1);
    }
  } else {
    b.levels &= left_child ? rule.left_levels : ~rule.left_levels;
  }
}

// Number of distinct split rules available for one variable. For a
// categorical variable with K reachable levels this counts the proper
// unordered binary partitions, 2^(K-1) - 1.
inline std::int64_t available_rule_count(const Variable& var, const VarBounds& b) {
  if (var.kind == Variable::Kind::kContinuous) {
    return b.hi >= b.lo ? (b.hi - b.lo + 1) : 0;
  }
  int k = std::popcount(b.levels);
  return k >= 2 ? ((std::int64_t{1} << (k - 1)) - 1) : 0;
}

inline bool rule_is_available(const SplitRule& rule, const Variable& var, const VarBounds& b) {
  if (var.kind == Variable::Kind::kContinuous) {
    return rule.cut_index >= b.lo && rule.cut_index <= b.hi;
  }
  std::uint32_t left = rule.left_levels & b.levels;
  return left != 0 && left != b.levels;
}

// Binary decision tree with one mean parameter per terminal node. Nodes live
// in a flat vector; index 0 is the root.
class DecisionTree {
 public:
  explicit DecisionTree(double root_value = 0.0) {
    nodes_.resize(1);
    nodes_[0].leaf_value = root_value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  TreeNode& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const TreeNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  int depth(int i) const {
    int d = 0;
    while (nodes_[static_cast<std::size_t>(i)].parent >= 0) {
      i = nodes_[static_cast<std::size_t>(i)].parent;
      ++d;
    }
    return d;
  }

  int num_leaves() const {
    int n = 0;
    for (const auto& nd : nodes_) n += nd.is_leaf();
    return n;
  }

  std::vector<int> leaf_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_nodes(); ++i)
      if (nodes_[static_cast<std::size_t>(i)].is_leaf()) out.push_back(i);
    return out;
  }

  std::vector<int> internal_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_nodes(); ++i)
      if (!nodes_[static_cast<std::size_t>(i)].is_leaf()) out.push_back(i);
    return out;
  }

  bool is_nog(int i) const {
    const auto& nd = nodes_[static_cast<std::size_t>(i)];
    return !nd.is_leaf() && node(nd.left).is_leaf() && node(nd.right).is_leaf();
  }

  std::vector<int> nog_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_nodes(); ++i)
      if (is_nog(i)) out.push_back(i);
    return out;
  }

  // Internal parent / internal child pairs, candidates for a rule swap.
  std::vector<std::pair<int, int>> internal_pairs() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < num_nodes(); ++i) {
      const auto& nd = nodes_[static_cast<std::size_t>(i)];
      if (nd.is_leaf()) continue;
      if (!node(nd.left).is_leaf()) out.emplace_back(i, nd.left);
      if (!node(nd.right).is_leaf()) out.emplace_back(i, nd.right);
    }
    return out;
  }

  void grow(int leaf, const SplitRule& rule, double left_value, double right_value) {
    auto li = static_cast<std::int32_t>(nodes_.size());
    auto ri = li + 1;
    TreeNode left;
    left.parent = leaf;
    left.leaf_value = left_value;
    TreeNode right;
    right.parent = leaf;
    right.leaf_value = right_value;
    nodes_.push_back(left);
    nodes_.push_back(right);
    auto& nd = nodes_[static_cast<std::size_t>(leaf)];
    nd.rule = rule;
    nd.left = li;
    nd.right = ri;
  }

  // Collapse a node whose children are both leaves back into a leaf.
  // Returns the node's index after compaction.
  int prune(int nog, double value) {
    auto& nd = nodes_[static_cast<std::size_t>(nog)];
    nd.rule = SplitRule{};
    nd.left = nd.right = -1;
    nd.leaf_value = value;
    // Rebuild in preorder; the two detached leaves drop out.
    std::vector<TreeNode> rebuilt;
    rebuilt.reserve(nodes_.size() - 2);
    int tracked = -1;
    copy_subtree(0, -1, rebuilt, nog, tracked);
    nodes_ = std::move(rebuilt);
    return tracked;
  }

  template <class GetVar>
  int route(GetVar&& value_of) const {
    int i = 0;
    while (true) {
      const TreeNode& nd = nodes_[static_cast<std::size_t>(i)];
      if (nd.is_leaf()) return i;
      const double v = value_of(nd.rule.var);
      const bool left = nd.rule.left_levels != 0
                            ? ((nd.rule.left_levels >> static_cast<int>(v)) & 1u) != 0
                            : v <= nd.rule.threshold;
      i = left ? nd.left : nd.right;
    }
  }

 private:
  int copy_subtree(int i, int parent, std::vector<TreeNode>& out, int track, int& tracked) const {
    const int self = static_cast<int>(out.size());
    out.push_back(nodes_[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(self)].parent = parent;
    if (i == track) tracked = self;
    if (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      int l = copy_subtree(nodes_[static_cast<std::size_t>(i)].left, self, out, track, tracked);
      int r = copy_subtree(nodes_[static_cast<std::size_t>(i)].right, self, out, track, tracked);
      out[static_cast<std::size_t>(self)].left = l;
      out[static_cast<std::size_t>(self)].right = r;
    }
    return self;
  }

  std::vector<TreeNode> nodes_;
};

// Split-rule availability at a node, given the rules on its root path.
inline BoundsSet bounds_at(const DecisionTree& tree, int node, const VariableSet& vars) {
  std::vector<int> path;
  for (int i = node; i >= 0; i = tree.node(i).parent) path.push_back(i);
  BoundsSet b = root_bounds(vars);
  for (std::size_t k = path.size(); k-- > 1;) {
    const TreeNode& p = tree.node(path[k]);
    const auto v = static_cast<std::size_t>(p.rule.var);
    apply_rule_to_bounds(p.rule, vars[v], p.left == path[k - 1], b[v]);
  }
  return b;
}

// Evaluates g(x, s; T, M): the leaf mean reached by routing (x, s). The
// source level, when the tree was built with one, is the variable following
// the covariates.
inline double evaluate_tree(const DecisionTree& tree, std::span<const double> x, int source,
                            std::size_t num_covariates) {
  for (const auto& nd : tree.nodes()) {
    if (!nd.is_leaf() && nd.rule.var > static_cast<std::int32_t>(num_covariates)) {
      throw std::invalid_argument("evaluate_tree: tree splits on a variable beyond the design");
    }
  }
  if (x.size() < num_covariates) {
    throw std::invalid_argument("evaluate_tree: covariate vector has wrong dimension");
  }
  int leaf = tree.route([&](std::int32_t v) {
    return v < static_cast<std::int32_t>(num_covariates) ? x[static_cast<std::size_t>(v)]
                                                         : static_cast<double>(source);
  });
  return tree.node(leaf).leaf_value;
}

namespace detail {

inline double log_nonterminal_prob(int depth, double base, double power) {
  return std::log(base) - power * std::log1p(static_cast<double>(depth));
}

inline double log_structure_prior_walk(const DecisionTree& tree, const VariableSet& vars,
                                       int node, int depth, BoundsSet& bounds, double base,
                                       double power) {
  const TreeNode& nd = tree.node(node);
  std::int64_t usable_vars = 0;
  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (available_rule_count(vars[v], bounds[v]) > 0) ++usable_vars;
  }
  if (nd.is_leaf()) {
    // A node with nothing left to split on is terminal with probability one.
    if (usable_vars == 0) return 0.0;
    return std::log1p(-std::exp(log_nonterminal_prob(depth, base, power)));
  }
  const Variable& var = vars[static_cast<std::size_t>(nd.rule.var)];
  const VarBounds& vb = bounds[static_cast<std::size_t>(nd.rule.var)];
  if (usable_vars == 0 || !rule_is_available(nd.rule, var, vb)) {
    return -std::numeric_limits<double>::infinity();
  }
  double lp = log_nonterminal_prob(depth, base, power);
  lp -= std::log(static_cast<double>(usable_vars));
  lp -= std::log(static_cast<double>(available_rule_count(var, vb)));

  VarBounds saved = vb;
  auto& slot = bounds[static_cast<std::size_t>(nd.rule.var)];
  apply_rule_to_bounds(nd.rule, var, true, slot);
  lp += log_structure_prior_walk(tree, vars, nd.left, depth + 1, bounds, base, power);
  slot = saved;
  apply_rule_to_bounds(nd.rule, var, false, slot);
  lp += log_structure_prior_walk(tree, vars, nd.right, depth + 1, bounds, base, power);
  slot = saved;
  return lp;
}

}  // namespace detail

// Log prior probability of the tree shape and its split rules: each node at
// depth d is nonterminal with probability base*(1+d)^-power when a split is
// possible, the splitting variable is uniform over usable variables, and the
// rule is uniform over that variable's available rules. Returns -inf for a
// tree whose rules are not available given their ancestors.
inline double log_tree_structure_prior(const DecisionTree& tree, const VariableSet& vars,
                                       double base, double power) {
  BoundsSet bounds = root_bounds(vars);
  return detail::log_structure_prior_walk(tree, vars, 0, 0, bounds, base, power);
}

}  // namespace trialbart
