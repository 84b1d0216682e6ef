#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "trialbart/dataset.hpp"
#include "trialbart/mcmc.hpp"
#include "trialbart/posterior.hpp"
#include "trialbart/rng.hpp"
#include "trialbart/tree.hpp"

namespace trialbart {

// Ensemble and prior settings. Leaf means are N(0, sd^2) with
// sd = 0.5 / (leaf_spread_k * sqrt(num_trees)) on the shifted/scaled outcome;
// the residual variance gets a scaled-inverse-chi-squared prior whose scale
// puts sigma_quantile of the prior mass above a least-squares estimate.
struct BartHyper {
  int num_trees = 200;
  double split_base = 0.95;
  double split_power = 2.0;
  double leaf_spread_k = 2.0;
  double sigma_df = 3.0;
  double sigma_quantile = 0.90;
  int cutpoint_count = 100;
  // grow, prune, change, swap; renormalized over the applicable moves
  std::array<double, 4> move_probs{0.25, 0.25, 0.40, 0.10};
  // Pin the residual sd (on the internal scale) and skip its update. Used to
  // reduce the chain to an exact conjugate Gibbs sampler.
  std::optional<double> fixed_sigma;

  double leaf_sd() const { return 0.5 / (leaf_spread_k * std::sqrt(static_cast<double>(num_trees))); }

  void validate() const {
    if (num_trees < 1) throw std::invalid_argument("bart: num_trees must be >= 1");
    if (!(split_base > 0.0 && split_base < 1.0)) {
      throw std::invalid_argument("bart: split_base must lie in (0, 1)");
    }
    if (split_power < 0.0) throw std::invalid_argument("bart: split_power must be >= 0");
    if (cutpoint_count < 2) throw std::invalid_argument("bart: cutpoint_count must be >= 2");
    if (leaf_spread_k <= 0.0) throw std::invalid_argument("bart: leaf_spread_k must be > 0");
    if (sigma_df <= 0.0 || sigma_quantile <= 0.0 || sigma_quantile >= 1.0) {
      throw std::invalid_argument("bart: bad residual-variance prior settings");
    }
    for (double p : move_probs) {
      if (p < 0.0) throw std::invalid_argument("bart: move probabilities must be >= 0");
    }
  }
};

// Predictor matrix for one response surface. Covariate columns come first;
// when the fit borrows across data sources the source indicator is the final
// variable (binary for two levels, categorical beyond that).
struct BartDesign {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t num_covariates = 0;
  bool has_source = false;
  VariableSet vars;
  std::vector<double> values;  // row-major n x p

  const double* row(std::size_t i) const { return values.data() + i * p; }
};

inline BartDesign make_design(const TrialDataset& data, std::span<const std::size_t> rows,
                              bool include_source, int cutpoint_count) {
  BartDesign d;
  d.n = rows.size();
  d.num_covariates = data.num_covariates();
  d.has_source = include_source;
  d.p = d.num_covariates + (include_source ? 1 : 0);
  d.values.resize(d.n * d.p);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    for (std::size_t q = 0; q < d.num_covariates; ++q) {
      d.values[r * d.p + q] = data.covariates[q][i];
    }
    if (include_source) d.values[r * d.p + d.num_covariates] = static_cast<double>(data.source[i]);
  }
  d.vars.resize(d.p);
  for (std::size_t q = 0; q < d.num_covariates; ++q) {
    std::vector<double> col(d.n);
    for (std::size_t r = 0; r < d.n; ++r) col[r] = d.values[r * d.p + q];
    Variable v;
    if (data.covariate_types[q] == ColumnType::kBinary) {
      bool saw0 = false, saw1 = false;
      for (double x : col) (x == 0.0 ? saw0 : saw1) = true;
      if (saw0 && saw1) v.cutpoints = {0.5};
    } else {
      v.cutpoints = interior_cutpoints(col, cutpoint_count);
    }
    d.vars[q] = std::move(v);
  }
  if (include_source) {
    int levels = 0;
    for (std::size_t r = 0; r < d.n; ++r) {
      levels = std::max(levels, static_cast<int>(d.values[r * d.p + d.num_covariates]) + 1);
    }
    Variable v;
    if (levels <= 2) {
      // source behaves like a binary covariate
      bool saw0 = false, saw1 = false;
      for (std::size_t r = 0; r < d.n; ++r) {
        (d.values[r * d.p + d.num_covariates] == 0.0 ? saw0 : saw1) = true;
      }
      if (saw0 && saw1) v.cutpoints = {0.5};
    } else {
      v.kind = Variable::Kind::kCategorical;
      v.num_levels = levels;
    }
    d.vars[d.num_covariates] = std::move(v);
  }
  return d;
}

// Shift/scale putting the observed outcome range on [-0.5, 0.5].
struct OutcomeScaling {
  double offset = 0.0;
  double scale = 1.0;
};

inline OutcomeScaling outcome_scaling(std::span<const double> y) {
  double lo = y[0], hi = y[0];
  for (double v : y) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  OutcomeScaling s;
  s.offset = 0.5 * (lo + hi);
  s.scale = hi > lo ? hi - lo : 1.0;
  return s;
}

// Residual sd of an ordinary least-squares fit of y on the design (intercept,
// covariates, source dummies). Falls back to the sample sd when the design is
// rank deficient or has as many columns as rows.
inline double least_squares_residual_sd(const BartDesign& d, std::span<const double> y) {
  const auto n = static_cast<Eigen::Index>(d.n);
  auto fallback = [&]() {
    double sd = d.n >= 2 ? sd_of(y) : 0.0;
    return std::max(sd, 1e-9);
  };
  Eigen::Index cols = 1 + static_cast<Eigen::Index>(d.num_covariates);
  int source_levels = 0;
  if (d.has_source) {
    const Variable& sv = d.vars[d.num_covariates];
    source_levels = sv.kind == Variable::Kind::kCategorical ? sv.num_levels
                    : sv.cutpoints.empty()                  ? 1
                                                            : 2;
    cols += source_levels - 1;
  }
  if (n <= cols) return fallback();
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, cols);
  Eigen::VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* row = d.row(static_cast<std::size_t>(i));
    z(i, 0) = 1.0;
    for (std::size_t q = 0; q < d.num_covariates; ++q) {
      z(i, 1 + static_cast<Eigen::Index>(q)) = row[q];
    }
    if (source_levels > 1) {
      int s = static_cast<int>(row[d.num_covariates]);
      if (s >= 1) z(i, static_cast<Eigen::Index>(d.num_covariates) + s) = 1.0;
    }
    yy(i) = y[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  if (qr.rank() < cols) return fallback();
  Eigen::VectorXd resid = yy - z * qr.solve(yy);
  double ss = resid.squaredNorm();
  double sd = std::sqrt(ss / static_cast<double>(n - cols));
  return std::max(sd, 1e-9);
}

struct LeafSufficientStats {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t count = 0;
};

// Log marginal likelihood of per-leaf residuals with the leaf mean
// N(0, leaf_sd^2) integrated out. A leaf holding no observations makes the
// proposal invalid, signalled by -inf.
inline double leaf_log_marginal(std::span<const LeafSufficientStats> leaves, double sigma,
                                double leaf_sd) {
  const double s2 = sigma * sigma;
  const double t2 = leaf_sd * leaf_sd;
  const double log_2pi_s2 = std::log(2.0 * std::numbers::pi * s2);
  double total = 0.0;
  for (const auto& st : leaves) {
    if (st.count <= 0) return -std::numeric_limits<double>::infinity();
    const auto nk = static_cast<double>(st.count);
    const double denom = s2 + nk * t2;
    total += -0.5 * nk * log_2pi_s2 - 0.5 * std::log(denom / s2) - st.sum_sq / (2.0 * s2) +
             t2 * st.sum * st.sum / (2.0 * s2 * denom);
  }
  return total;
}

// Sum-of-trees prediction on the outcome scale.
inline double predict_forest(const std::vector<DecisionTree>& trees, double offset, double scale,
                             std::span<const double> x, int source, std::size_t num_covariates) {
  if (trees.empty()) throw std::invalid_argument("predict_forest: empty forest");
  double acc = 0.0;
  for (const auto& t : trees) acc += evaluate_tree(t, x, source, num_covariates);
  return offset + scale * acc;
}

// Retained posterior forests, stored as one node arena per surface.
class ForestDraws {
 public:
  ForestDraws() = default;
  ForestDraws(std::size_t num_covariates, bool has_source, int num_trees, double offset,
              double scale)
      : num_covariates_(num_covariates),
        has_source_(has_source),
        num_trees_(num_trees),
        offset_(offset),
        scale_(scale) {
    offsets_.push_back(0);
  }

  std::size_t num_draws() const { return num_draws_; }
  int num_trees() const { return num_trees_; }
  double offset() const { return offset_; }
  double scale() const { return scale_; }
  std::size_t num_covariates() const { return num_covariates_; }

  void append_forest(const std::vector<DecisionTree>& trees) {
    for (const auto& t : trees) {
      arena_.insert(arena_.end(), t.nodes().begin(), t.nodes().end());
      offsets_.push_back(static_cast<std::uint32_t>(arena_.size()));
    }
    ++num_draws_;
  }

  double value(std::size_t draw, std::span<const double> x, int source) const {
    if (x.size() < num_covariates_) {
      throw std::invalid_argument("forest evaluation: covariate vector has wrong dimension");
    }
    double acc = 0.0;
    const std::size_t base = draw * static_cast<std::size_t>(num_trees_);
    for (std::size_t t = 0; t < static_cast<std::size_t>(num_trees_); ++t) {
      const TreeNode* nodes = arena_.data() + offsets_[base + t];
      std::size_t i = 0;
      while (!nodes[i].is_leaf()) {
        const SplitRule& r = nodes[i].rule;
        const double v = r.var < static_cast<std::int32_t>(num_covariates_)
                             ? x[static_cast<std::size_t>(r.var)]
                             : static_cast<double>(source);
        const bool left = r.left_levels != 0 ? ((r.left_levels >> static_cast<int>(v)) & 1u) != 0
                                             : v <= r.threshold;
        i = static_cast<std::size_t>(left ? nodes[i].left : nodes[i].right);
      }
      acc += nodes[i].leaf_value;
    }
    return offset_ + scale_ * acc;
  }

 private:
  std::size_t num_covariates_ = 0;
  bool has_source_ = false;
  int num_trees_ = 0;
  double offset_ = 0.0;
  double scale_ = 1.0;
  std::size_t num_draws_ = 0;
  std::vector<TreeNode> arena_;
  std::vector<std::uint32_t> offsets_;
};

// One backfitting chain over a single response surface. Each step cycles
// through the trees, proposing one structural move per tree against the
// partial residuals, redrawing every leaf mean from its conjugate normal,
// then redrawing the residual variance from its conjugate posterior.
class BartSampler {
 public:
  BartSampler(const BartDesign& design, std::span<const double> y, const BartHyper& hyper,
              std::uint64_t seed)
      : design_(design), hyper_(hyper), rng_(seed) {
    hyper.validate();
    if (design.n < 1 || y.size() != design.n) {
      throw std::invalid_argument("bart: design and outcome sizes disagree");
    }
    scaling_ = outcome_scaling(y);
    y_.resize(design.n);
    for (std::size_t i = 0; i < design.n; ++i) y_[i] = (y[i] - scaling_.offset) / scaling_.scale;

    const double sigma_hat = least_squares_residual_sd(design_, y_);
    boost::math::chi_squared_distribution<double> chi(hyper_.sigma_df);
    sigma_lambda_ = sigma_hat * sigma_hat *
                    boost::math::quantile(chi, 1.0 - hyper_.sigma_quantile) / hyper_.sigma_df;
    sigma_ = hyper_.fixed_sigma.value_or(sigma_hat);
    leaf_sd_ = hyper_.leaf_sd();

    trees_.assign(static_cast<std::size_t>(hyper_.num_trees), DecisionTree(0.0));
    tree_fit_.assign(static_cast<std::size_t>(hyper_.num_trees) * design_.n, 0.0);
    all_fit_.assign(design_.n, 0.0);
    resid_.resize(design_.n);
  }

  void step() {
    for (std::size_t j = 0; j < trees_.size(); ++j) {
      double* fit_j = tree_fit_.data() + j * design_.n;
      for (std::size_t i = 0; i < design_.n; ++i) {
        resid_[i] = y_[i] - all_fit_[i] + fit_j[i];
      }
      update_tree(trees_[j]);
      draw_leaf_values(trees_[j]);
      for (std::size_t i = 0; i < design_.n; ++i) {
        const double nf = trees_[j].node(scratch_leaf_of_[i]).leaf_value;
        all_fit_[i] += nf - fit_j[i];
        fit_j[i] = nf;
      }
    }
    if (!hyper_.fixed_sigma) {
      double ssr = 0.0;
      for (std::size_t i = 0; i < design_.n; ++i) {
        const double e = y_[i] - all_fit_[i];
        ssr += e * e;
      }
      const double df = hyper_.sigma_df + static_cast<double>(design_.n);
      sigma_ = std::sqrt((hyper_.sigma_df * sigma_lambda_ + ssr) / rng_.chi_squared(df));
    }
  }

  const std::vector<DecisionTree>& trees() const { return trees_; }
  double sigma() const { return sigma_; }
  const OutcomeScaling& scaling() const { return scaling_; }
  std::span<const double> in_sample_fit() const { return all_fit_; }

  double current_prediction(std::span<const double> x, int source) const {
    return predict_forest(trees_, scaling_.offset, scaling_.scale, x, source,
                          design_.num_covariates);
  }

 private:
  enum Move { kGrow = 0, kPrune = 1, kChange = 2, kSwap = 3 };

  struct RuleDraw {
    SplitRule rule;
    std::int64_t var_choices = 0;   // usable variables at the node
    std::int64_t rule_choices = 0;  // rules available for the chosen variable
  };

  // Routes every observation and accumulates residual sufficient statistics
  // per leaf; the log marginal of the whole tree comes out alongside.
  double tree_log_marginal(const DecisionTree& tree, std::vector<LeafSufficientStats>& stats,
                           std::vector<int>& leaf_of) {
    const auto m = static_cast<std::size_t>(tree.num_nodes());
    stats.assign(m, LeafSufficientStats{});
    leaf_of.resize(design_.n);
    for (std::size_t i = 0; i < design_.n; ++i) {
      const double* row = design_.row(i);
      const int leaf = tree.route([&](std::int32_t v) { return row[v]; });
      leaf_of[i] = leaf;
      auto& st = stats[static_cast<std::size_t>(leaf)];
      st.sum += resid_[i];
      st.sum_sq += resid_[i] * resid_[i];
      ++st.count;
    }
    const double s2 = sigma_ * sigma_;
    const double t2 = leaf_sd_ * leaf_sd_;
    const double log_2pi_s2 = std::log(2.0 * std::numbers::pi * s2);
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (!tree.node(static_cast<int>(k)).is_leaf()) continue;
      const auto& st = stats[k];
      if (st.count <= 0) return -std::numeric_limits<double>::infinity();
      const auto nk = static_cast<double>(st.count);
      const double denom = s2 + nk * t2;
      total += -0.5 * nk * log_2pi_s2 - 0.5 * std::log(denom / s2) - st.sum_sq / (2.0 * s2) +
               t2 * st.sum * st.sum / (2.0 * s2 * denom);
    }
    return total;
  }

  std::vector<int> growable_leaves(const DecisionTree& tree) const {
    std::vector<int> out;
    for (int leaf : tree.leaf_indices()) {
      const BoundsSet b = bounds_at(tree, leaf, design_.vars);
      for (std::size_t v = 0; v < design_.vars.size(); ++v) {
        if (available_rule_count(design_.vars[v], b[v]) > 0) {
          out.push_back(leaf);
          break;
        }
      }
    }
    return out;
  }

  // Renormalized move distribution for the tree's current shape.
  std::array<double, 4> move_distribution(const DecisionTree& tree, bool& any) const {
    std::array<double, 4> w{0.0, 0.0, 0.0, 0.0};
    const bool root_only = tree.num_nodes() == 1;
    w[kGrow] = hyper_.move_probs[kGrow] > 0.0 && !growable_leaves(tree).empty()
                   ? hyper_.move_probs[kGrow]
                   : 0.0;
    if (!root_only) {
      if (!tree.nog_indices().empty()) w[kPrune] = hyper_.move_probs[kPrune];
      w[kChange] = hyper_.move_probs[kChange];
      if (!tree.internal_pairs().empty()) w[kSwap] = hyper_.move_probs[kSwap];
    }
    double total = w[0] + w[1] + w[2] + w[3];
    any = total > 0.0;
    if (any) {
      for (auto& x : w) x /= total;
    }
    return w;
  }

  RuleDraw draw_rule(const DecisionTree& tree, int node) {
    const BoundsSet b = bounds_at(tree, node, design_.vars);
    std::vector<int> usable;
    for (std::size_t v = 0; v < design_.vars.size(); ++v) {
      if (available_rule_count(design_.vars[v], b[v]) > 0) usable.push_back(static_cast<int>(v));
    }
    RuleDraw d;
    d.var_choices = static_cast<std::int64_t>(usable.size());
    if (usable.empty()) return d;
    const int var = usable[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(usable.size())))];
    const Variable& vv = design_.vars[static_cast<std::size_t>(var)];
    const VarBounds& vb = b[static_cast<std::size_t>(var)];
    d.rule_choices = available_rule_count(vv, vb);
    d.rule.var = var;
    if (vv.kind == Variable::Kind::kContinuous) {
      const int ci = vb.lo + rng_.uniform_int(vb.hi - vb.lo + 1);
      d.rule.cut_index = ci;
      d.rule.threshold = vv.cutpoints[static_cast<std::size_t>(ci)];
    } else {
      d.rule.left_levels = draw_level_subset(vb.levels);
    }
    return d;
  }

  // Uniform draw over the proper unordered binary partitions of the active
  // levels; the returned subset contains the lowest active level.
  std::uint32_t draw_level_subset(std::uint32_t active) {
    std::vector<int> rest;
    int lowest = -1;
    for (int l = 0; l < 32; ++l) {
      if (!((active >> l) & 1u)) continue;
      if (lowest < 0) {
        lowest = l;
      } else {
        rest.push_back(l);
      }
    }
    const auto k1 = static_cast<int>(rest.size());
    const std::int64_t count = (std::int64_t{1} << k1) - 1;  // exclude the full set
    const auto code =
        static_cast<std::uint64_t>(rng_.uniform_int(static_cast<int>(count)));
    std::uint32_t mask = 1u << lowest;
    for (int bit = 0; bit < k1; ++bit) {
      if ((code >> bit) & 1u) mask |= 1u << rest[static_cast<std::size_t>(bit)];
    }
    return mask;
  }

  double log_structure_prior(const DecisionTree& tree) const {
    return log_tree_structure_prior(tree, design_.vars, hyper_.split_base, hyper_.split_power);
  }

  void update_tree(DecisionTree& tree) {
    bool any = false;
    const std::array<double, 4> w = move_distribution(tree, any);
    if (!any) {
      tree_log_marginal(tree, scratch_stats_, scratch_leaf_of_);
      return;
    }
    const double u = rng_.uniform();
    int move = 0;
    double cum = 0.0;
    for (int k = 0; k < 4; ++k) {
      cum += w[static_cast<std::size_t>(k)];
      if (u < cum || k == 3) {
        move = k;
        break;
      }
    }

    DecisionTree proposal = tree;
    double log_q_fwd = 0.0;
    double log_q_rev = 0.0;
    switch (move) {
      case kGrow: {
        const std::vector<int> candidates = growable_leaves(tree);
        const int leaf = candidates[static_cast<std::size_t>(
            rng_.uniform_int(static_cast<int>(candidates.size())))];
        const RuleDraw d = draw_rule(tree, leaf);
        proposal.grow(leaf, d.rule, 0.0, 0.0);
        log_q_fwd = std::log(w[kGrow]) - std::log(static_cast<double>(candidates.size())) -
                    std::log(static_cast<double>(d.var_choices)) -
                    std::log(static_cast<double>(d.rule_choices));
        bool rev_any = false;
        const std::array<double, 4> wr = move_distribution(proposal, rev_any);
        const auto nogs = static_cast<double>(proposal.nog_indices().size());
        log_q_rev = safe_log(wr[kPrune]) - std::log(nogs);
        break;
      }
      case kPrune: {
        const std::vector<int> nogs = tree.nog_indices();
        const int nog =
            nogs[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(nogs.size())))];
        const SplitRule removed = tree.node(nog).rule;
        const int new_index = proposal.prune(nog, 0.0);
        log_q_fwd = std::log(w[kPrune]) - std::log(static_cast<double>(nogs.size()));
        bool rev_any = false;
        const std::array<double, 4> wr = move_distribution(proposal, rev_any);
        const auto candidates = static_cast<double>(growable_leaves(proposal).size());
        const BoundsSet b = bounds_at(proposal, new_index, design_.vars);
        std::int64_t usable = 0;
        for (std::size_t v = 0; v < design_.vars.size(); ++v) {
          if (available_rule_count(design_.vars[v], b[v]) > 0) ++usable;
        }
        const std::int64_t rules = available_rule_count(
            design_.vars[static_cast<std::size_t>(removed.var)],
            b[static_cast<std::size_t>(removed.var)]);
        log_q_rev = safe_log(wr[kGrow]) - std::log(candidates) -
                    std::log(static_cast<double>(usable)) - std::log(static_cast<double>(rules));
        break;
      }
      case kChange: {
        const std::vector<int> internal = tree.internal_indices();
        const int node =
            internal[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(internal.size())))];
        const SplitRule old_rule = tree.node(node).rule;
        const RuleDraw d = draw_rule(tree, node);
        proposal.node(node).rule = d.rule;
        // Same node set both ways; availability at the node only depends on
        // its ancestors, so only the per-variable rule counts differ.
        const BoundsSet b = bounds_at(tree, node, design_.vars);
        const std::int64_t old_rules = available_rule_count(
            design_.vars[static_cast<std::size_t>(old_rule.var)],
            b[static_cast<std::size_t>(old_rule.var)]);
        log_q_fwd = std::log(w[kChange]) - std::log(static_cast<double>(d.rule_choices));
        bool rev_any = false;
        const std::array<double, 4> wr = move_distribution(proposal, rev_any);
        log_q_rev = safe_log(wr[kChange]) - std::log(static_cast<double>(old_rules));
        break;
      }
      case kSwap:
      default: {
        const auto pairs = tree.internal_pairs();
        const auto& pick =
            pairs[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(pairs.size())))];
        std::swap(proposal.node(pick.first).rule, proposal.node(pick.second).rule);
        log_q_fwd = std::log(w[kSwap]);
        bool rev_any = false;
        const std::array<double, 4> wr = move_distribution(proposal, rev_any);
        log_q_rev = safe_log(wr[kSwap]);
        break;
      }
    }

    const double cur = log_structure_prior(tree) + tree_log_marginal(tree, scratch_stats_, scratch_leaf_of_);
    const double prior_new = log_structure_prior(proposal);
    double accept = -std::numeric_limits<double>::infinity();
    if (std::isfinite(prior_new) && std::isfinite(log_q_rev)) {
      const double marg_new = tree_log_marginal(proposal, new_stats_, new_leaf_of_);
      accept = prior_new + marg_new - cur + log_q_rev - log_q_fwd;
    }
    if (std::isfinite(accept) && std::log(rng_.uniform()) < accept) {
      tree = std::move(proposal);
      scratch_stats_.swap(new_stats_);
      scratch_leaf_of_.swap(new_leaf_of_);
    }
  }

  static double safe_log(double v) {
    return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
  }

  // Conjugate normal draw for every leaf mean, given the residual stats left
  // in the scratch buffers by update_tree.
  void draw_leaf_values(DecisionTree& tree) {
    const double s2 = sigma_ * sigma_;
    const double t2 = leaf_sd_ * leaf_sd_;
    for (int k = 0; k < tree.num_nodes(); ++k) {
      auto& nd = tree.node(k);
      if (!nd.is_leaf()) continue;
      const auto& st = scratch_stats_[static_cast<std::size_t>(k)];
      const double denom = s2 + static_cast<double>(st.count) * t2;
      const double mean = t2 * st.sum / denom;
      const double var = t2 * s2 / denom;
      nd.leaf_value = rng_.normal(mean, std::sqrt(var));
    }
  }

  const BartDesign& design_;
  BartHyper hyper_;
  Rng rng_;
  OutcomeScaling scaling_;
  std::vector<double> y_;
  double sigma_ = 1.0;
  double sigma_lambda_ = 1.0;
  double leaf_sd_ = 0.1;
  std::vector<DecisionTree> trees_;
  std::vector<double> tree_fit_;  // num_trees x n
  std::vector<double> all_fit_;
  std::vector<double> resid_;
  std::vector<LeafSufficientStats> scratch_stats_;
  std::vector<LeafSufficientStats> new_stats_;
  std::vector<int> scratch_leaf_of_;
  std::vector<int> new_leaf_of_;
};

// Retained draws plus summaries for one surface fit.
struct SurfaceFit {
  ForestDraws draws;
  std::vector<double> sigma_draws;   // outcome scale
  std::vector<double> fitted_mean;   // in-sample posterior mean fit, outcome scale
};

inline SurfaceFit fit_bart_surface(const BartDesign& design, std::span<const double> y,
                                   const BartHyper& hyper, const McmcConfig& mcmc) {
  mcmc.validate();
  if (design.n < 2) throw std::invalid_argument("bart: need at least 2 observations");
  for (double v : y) {
    if (!std::isfinite(v)) throw std::invalid_argument("bart: outcome must be finite");
  }
  BartSampler sampler(design, y, hyper, mcmc.seed);
  SurfaceFit fit;
  fit.draws = ForestDraws(design.num_covariates, design.has_source, hyper.num_trees,
                          sampler.scaling().offset, sampler.scaling().scale);
  fit.sigma_draws.reserve(static_cast<std::size_t>(mcmc.num_draws()));
  std::vector<double> fit_sum(design.n, 0.0);
  for (int it = 0; it < mcmc.n_iter; ++it) {
    sampler.step();
    if (it < mcmc.n_burn) continue;
    fit.draws.append_forest(sampler.trees());
    fit.sigma_draws.push_back(sampler.sigma() * sampler.scaling().scale);
    const auto in_fit = sampler.in_sample_fit();
    for (std::size_t i = 0; i < design.n; ++i) fit_sum[i] += in_fit[i];
  }
  fit.fitted_mean.resize(design.n);
  const double L = static_cast<double>(mcmc.num_draws());
  for (std::size_t i = 0; i < design.n; ++i) {
    fit.fitted_mean[i] = sampler.scaling().offset + sampler.scaling().scale * fit_sum[i] / L;
  }
  return fit;
}

// Joint posterior over both surfaces from independent tree-ensemble fits:
// f0 on the control rows (optionally spanning external sources) and f1 on
// the treated trial rows.
class BartPosterior final : public PosteriorDraws {
 public:
  BartPosterior(SurfaceFit control, SurfaceFit treatment)
      : control_(std::move(control)), treatment_(std::move(treatment)) {
    sigma_control_ = control_.sigma_draws;
    sigma_treatment_ = treatment_.sigma_draws;
  }

  std::size_t num_draws() const override { return control_.draws.num_draws(); }

  double control_value(std::size_t draw, std::span<const double> x, int source) const override {
    return control_.draws.value(draw, x, source);
  }

  double treatment_value(std::size_t draw, std::span<const double> x) const override {
    return treatment_.draws.value(draw, x, 0);
  }

  const SurfaceFit& control_fit() const { return control_; }
  const SurfaceFit& treatment_fit() const { return treatment_; }

 private:
  SurfaceFit control_;
  SurfaceFit treatment_;
};

// Fits the two-surface model. With use_external the control surface pools
// current and external control rows with the source indicator as an extra
// splitting variable; without it only trial rows enter.
inline std::unique_ptr<BartPosterior> fit_bart(const TrialDataset& data, const BartHyper& hyper,
                                               const McmcConfig& mcmc, bool use_external = true) {
  data.validate();
  mcmc.validate();
  std::vector<std::size_t> control_rows;
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    if (data.arm[i] != 0) continue;
    if (!use_external && data.source[i] != 0) continue;
    control_rows.push_back(i);
  }
  const std::vector<std::size_t> treated_rows = data.rows_where(1, 0);
  if (control_rows.size() < 2 || treated_rows.size() < 2) {
    throw std::invalid_argument("bart: need at least 2 rows per arm");
  }
  const bool with_source = use_external && data.num_sources() > 1;
  const BartDesign control_design =
      make_design(data, control_rows, with_source, hyper.cutpoint_count);
  const BartDesign treated_design = make_design(data, treated_rows, false, hyper.cutpoint_count);
  std::vector<double> y0, y1;
  for (std::size_t i : control_rows) y0.push_back(data.outcome[i]);
  for (std::size_t i : treated_rows) y1.push_back(data.outcome[i]);
  McmcConfig m0 = mcmc;
  m0.seed = derive_seed(mcmc.seed, 0);
  McmcConfig m1 = mcmc;
  m1.seed = derive_seed(mcmc.seed, 1);
  SurfaceFit control = fit_bart_surface(control_design, y0, hyper, m0);
  SurfaceFit treatment = fit_bart_surface(treated_design, y1, hyper, m1);
  return std::make_unique<BartPosterior>(std::move(control), std::move(treatment));
}

}  // namespace trialbart
