// Copyright 2026 The ROAD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "road/cohort.hpp"
#include "road/counterfactual.hpp"
#include "road/error.hpp"
#include "road/io.hpp"
#include "road/matrix.hpp"

namespace road {

struct TreeConfig {
  int max_depth = 4;
  int minbucket = 15;
  // Candidate thresholds per covariate and node; 0 keeps every midpoint.
  int max_thresholds = 256;
  std::uint64_t seed = 0;
};

struct PolicyNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;   // x[feature] <  threshold
  int right = -1;  // x[feature] >= threshold
  int treatment = 0;
  std::size_t count = 0;
  double mean_r0 = 0.0;
  double mean_r1 = 0.0;

  bool is_leaf() const { return feature < 0; }
};

/// Axis-aligned treatment policy; node 0 is the root.
class PolicyTree {
 public:
  PolicyTree() : nodes_(1) {}
  PolicyTree(std::vector<PolicyNode> nodes, std::size_t n_features)
      : nodes_(std::move(nodes)), n_features_(n_features) {}

  /// Single-leaf policy prescribing `treatment` to everyone.
  static PolicyTree constant(int treatment, std::size_t n_features) {
    PolicyNode leaf;
    leaf.treatment = treatment;
    return PolicyTree({leaf}, n_features);
  }

  const std::vector<PolicyNode>& nodes() const { return nodes_; }
  std::size_t n_features() const { return n_features_; }

  int leaf_of(std::span<const double> x) const {
    require(x.size() == n_features_, ErrorCode::DimensionMismatch,
            "policy expects " + std::to_string(n_features_) + " covariates, got " + std::to_string(x.size()));
    int at = 0;
    while (!nodes_[at].is_leaf()) {
      const auto& node = nodes_[at];
      at = x[node.feature] < node.threshold ? node.left : node.right;
    }
    return at;
  }

  int prescribe(std::span<const double> x) const { return nodes_[leaf_of(x)].treatment; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  int depth() const { return depth_from(0); }

 private:
  int depth_from(int at) const {
    const auto& node = nodes_[at];
    return node.is_leaf() ? 0 : 1 + std::max(depth_from(node.left), depth_from(node.right));
  }

  std::vector<PolicyNode> nodes_;
  std::size_t n_features_ = 0;
};

/// Total assigned reward: sum of r_{tau(x_i)}.
inline double policy_objective(const PolicyTree& tree, const Matrix& x, std::span<const Reward> rewards) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) total += tree.prescribe(x.row(i)) == 1 ? rewards[i].r1 : rewards[i].r0;
  return total;
}

namespace detail {

constexpr double kImprovement = 1e-12;

struct SplitChoice {
  double cost = std::numeric_limits<double>::infinity();
  int feature = -1;
  double threshold = 0.0;
};

class PolicyGrower {
 public:
  PolicyGrower(const Matrix& x, std::span<const Reward> rewards, const TreeConfig& config)
      : x_(x), rewards_(rewards), config_(config), member_(x.rows(), 0) {}

  PolicyTree grow() {
    std::vector<std::size_t> all(x_.rows());
    std::iota(all.begin(), all.end(), 0);
    build(all, config_.max_depth);
    return PolicyTree(std::move(nodes_), x_.cols());
  }

 private:
  double leaf_cost(const std::vector<std::size_t>& idx) const {
    double s0 = 0.0;
    double s1 = 0.0;
    for (auto i : idx) {
      s0 += rewards_[i].r0;
      s1 += rewards_[i].r1;
    }
    return std::min(s0, s1);
  }

  // Members of the node sorted by covariate f (ties by index).
  std::vector<std::size_t> sorted_by(const std::vector<std::size_t>& idx, int f) const {
    auto order = idx;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x_(a, f) < x_(b, f) || (x_(a, f) == x_(b, f) && a < b);
    });
    return order;
  }

  // Positions p (split between order[p] and order[p+1]) allowed as thresholds.
  std::vector<std::size_t> candidate_gaps(const std::vector<std::size_t>& order, int f) const {
    std::vector<std::size_t> gaps;
    for (std::size_t p = 0; p + 1 < order.size(); ++p) {
      if (x_(order[p], f) < x_(order[p + 1], f)) gaps.push_back(p);
    }
    const auto limit = static_cast<std::size_t>(config_.max_thresholds);
    if (limit > 0 && gaps.size() > limit) {
      std::vector<std::size_t> kept;
      const double step = static_cast<double>(gaps.size()) / static_cast<double>(limit);
      for (std::size_t k = 0; k < limit; ++k) {
        const auto pick = gaps[static_cast<std::size_t>(std::floor((k + 0.5) * step))];
        if (kept.empty() || kept.back() != pick) kept.push_back(pick);
      }
      gaps = std::move(kept);
    }
    return gaps;
  }

  double midpoint(double lo, double hi) const {
    const double mid = lo + (hi - lo) / 2.0;
    return mid > lo ? mid : hi;
  }

  // Best single split over all covariates for the members of `order_by` that
  // are flagged in member_. order_by[f] is the node order on covariate f.
  SplitChoice best_split(const std::vector<std::vector<std::size_t>>& order_by, std::size_t subset_size) const {
    SplitChoice best;
    const auto minbucket = static_cast<std::size_t>(config_.minbucket);
    if (subset_size < 2 * minbucket) return best;
    double t0 = 0.0;
    double t1 = 0.0;
    for (auto i : order_by[0]) {
      if (!member_[i]) continue;
      t0 += rewards_[i].r0;
      t1 += rewards_[i].r1;
    }
    std::vector<std::size_t> order;
    order.reserve(subset_size);
    for (std::size_t f = 0; f < order_by.size(); ++f) {
      order.clear();
      for (auto i : order_by[f]) {
        if (member_[i]) order.push_back(i);
      }
      const int fi = static_cast<int>(f);
      const auto gaps = candidate_gaps(order, fi);
      double l0 = 0.0;
      double l1 = 0.0;
      std::size_t p = 0;
      for (auto gap : gaps) {
        for (; p <= gap; ++p) {
          l0 += rewards_[order[p]].r0;
          l1 += rewards_[order[p]].r1;
        }
        const std::size_t left = gap + 1;
        if (left < minbucket || order.size() - left < minbucket) continue;
        const double cost = std::min(l0, l1) + std::min(t0 - l0, t1 - l1);
        if (cost < best.cost - kImprovement) {
          best = {cost, fi, midpoint(x_(order[gap], fi), x_(order[gap + 1], fi))};
        }
      }
    }
    return best;
  }

  double best_depth_one(const std::vector<std::vector<std::size_t>>& order_by, const std::vector<std::size_t>& subset) {
    for (auto i : subset) member_[i] = 1;
    const auto split = best_split(order_by, subset.size());
    for (auto i : subset) member_[i] = 0;
    return std::min(leaf_cost(subset), split.cost);
  }

  int make_leaf(const std::vector<std::size_t>& idx) {
    PolicyNode leaf;
    double s0 = 0.0;
    double s1 = 0.0;
    for (auto i : idx) {
      s0 += rewards_[i].r0;
      s1 += rewards_[i].r1;
    }
    leaf.count = idx.size();
    leaf.mean_r0 = idx.empty() ? 0.0 : s0 / static_cast<double>(idx.size());
    leaf.mean_r1 = idx.empty() ? 0.0 : s1 / static_cast<double>(idx.size());
    leaf.treatment = s1 < s0 ? 1 : 0;  // tie -> no treatment
    nodes_.push_back(leaf);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int build(const std::vector<std::size_t>& idx, int depth_left) {
    const int id = make_leaf(idx);
    const auto minbucket = static_cast<std::size_t>(config_.minbucket);
    if (depth_left <= 0 || idx.size() < 2 * minbucket) return id;
    const double current = leaf_cost(idx);

    std::vector<std::vector<std::size_t>> order_by(x_.cols());
    for (std::size_t f = 0; f < x_.cols(); ++f) order_by[f] = sorted_by(idx, static_cast<int>(f));

    SplitChoice chosen;
    if (depth_left == 1) {
      for (auto i : idx) member_[i] = 1;
      chosen = best_split(order_by, idx.size());
      for (auto i : idx) member_[i] = 0;
    } else {
      // Two-level lookahead: score each split by the best depth-1 subtrees below it.
      std::vector<std::size_t> left;
      std::vector<std::size_t> right;
      for (std::size_t f = 0; f < x_.cols(); ++f) {
        const int fi = static_cast<int>(f);
        const auto& order = order_by[f];
        for (auto gap : candidate_gaps(order, fi)) {
          const std::size_t n_left = gap + 1;
          if (n_left < minbucket || order.size() - n_left < minbucket) continue;
          left.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_left));
          right.assign(order.begin() + static_cast<std::ptrdiff_t>(n_left), order.end());
          const double cost = best_depth_one(order_by, left) + best_depth_one(order_by, right);
          if (cost < chosen.cost - kImprovement) {
            chosen = {cost, fi, midpoint(x_(order[gap], fi), x_(order[gap + 1], fi))};
          }
        }
      }
    }
    if (chosen.feature < 0 || !(chosen.cost < current - kImprovement)) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto i : idx) (x_(i, chosen.feature) < chosen.threshold ? left : right).push_back(i);
    const int l = build(left, depth_left - 1);
    const int r = build(right, depth_left - 1);
    nodes_[id].feature = chosen.feature;
    nodes_[id].threshold = chosen.threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  const Matrix& x_;
  std::span<const Reward> rewards_;
  const TreeConfig& config_;
  std::vector<char> member_;
  std::vector<PolicyNode> nodes_;
};

}  // namespace detail

/// Top-down induction minimizing sum over leaves of min(sum r0, sum r1).
/// Nodes with two or more levels of depth left choose their split by the best
/// pair of depth-1 subtrees beneath it, which makes depth <= 2 trees optimal
/// over the candidate thresholds. Ties go to the lowest covariate, then the
/// lowest threshold.
inline PolicyTree train_policy(const Matrix& x, std::span<const Reward> rewards, const TreeConfig& config) {
  require(config.max_depth >= 0, ErrorCode::InvalidConfig, "max_depth must be >= 0");
  require(config.minbucket >= 1, ErrorCode::InvalidConfig, "minbucket must be >= 1");
  require(rewards.size() == x.rows(), ErrorCode::DimensionMismatch, "reward count differs from row count");
  require(x.rows() >= static_cast<std::size_t>(config.minbucket), ErrorCode::TooSmall,
          "need at least minbucket = " + std::to_string(config.minbucket) + " records");
  for (const auto& r : rewards) {
    require(r.r0 >= 0.0 && r.r0 <= 1.0 && r.r1 >= 0.0 && r.r1 <= 1.0, ErrorCode::RewardOutOfRange,
            "rewards must lie in [0,1]");
  }
  detail::PolicyGrower grower(x, rewards, config);
  return grower.grow();
}

struct LeafEffect {
  int leaf = 0;
  int treatment = 0;
  std::size_t count = 0;
  double baseline_risk = 0.0;  // mean r0
  double treated_risk = 0.0;   // mean r1
  double arr = 0.0;
  std::optional<double> rrr;  // undefined when baseline risk is 0
};

inline LeafEffect make_leaf_effect(int leaf, int treatment, std::size_t count, double r0, double r1) {
  LeafEffect e{leaf, treatment, count, r0, r1, r0 - r1, std::nullopt};
  if (r0 > 0.0) e.rrr = (r0 - r1) / r0;
  return e;
}

/// Per-leaf mean rewards of the given records and the derived ARR / RRR.
inline std::vector<LeafEffect> leaf_effects(const PolicyTree& tree, const Matrix& x, std::span<const Reward> rewards) {
  require(rewards.size() == x.rows(), ErrorCode::DimensionMismatch, "reward count differs from row count");
  const auto& nodes = tree.nodes();
  std::vector<double> s0(nodes.size(), 0.0);
  std::vector<double> s1(nodes.size(), 0.0);
  std::vector<std::size_t> n(nodes.size(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int leaf = tree.leaf_of(x.row(i));
    s0[leaf] += rewards[i].r0;
    s1[leaf] += rewards[i].r1;
    n[leaf] += 1;
  }
  std::vector<LeafEffect> out;
  for (int leaf : tree.leaves()) {
    const double denom = n[leaf] > 0 ? static_cast<double>(n[leaf]) : 1.0;
    out.push_back(make_leaf_effect(leaf, nodes[leaf].treatment, n[leaf], s0[leaf] / denom, s1[leaf] / denom));
  }
  return out;
}

namespace detail {

inline std::string dot_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline std::string percent(double value) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << value * 100.0 << '%';
  return out.str();
}

inline std::string short_number(double value) {
  std::ostringstream out;
  out.precision(4);
  out << value;
  return out.str();
}

}  // namespace detail

/// Threshold shown for a covariate: mapped back to the raw scale when
/// normalization statistics are supplied.
inline double display_threshold(const PolicyNode& node, const std::vector<ColumnStats>* stats) {
  if (!stats) return node.threshold;
  const auto& s = (*stats)[node.feature];
  return node.threshold * s.stddev + s.mean;
}

/// Graphviz digraph: internal nodes read "name < threshold" (yes branch left),
/// leaves list the prescription, training count, ARR and RRR.
inline std::string export_dot(const PolicyTree& tree, const std::vector<std::string>& names,
                              const std::vector<ColumnStats>* stats = nullptr) {
  std::ostringstream out;
  out << "digraph PolicyTree {\n";
  out << "  node [shape=box, fontname=\"Helvetica\"];\n";
  const auto& nodes = tree.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    out << "  n" << i << " [label=\"";
    if (node.is_leaf()) {
      const auto effect = make_leaf_effect(static_cast<int>(i), node.treatment, node.count, node.mean_r0, node.mean_r1);
      out << (node.treatment == 1 ? "treat" : "no treatment") << "\\nn = " << node.count
          << "\\nARR = " << detail::percent(effect.arr)
          << "\\nRRR = " << (effect.rrr ? detail::percent(*effect.rrr) : std::string("n/a"));
      out << "\", style=rounded";
    } else {
      const std::string name =
          node.feature < static_cast<int>(names.size()) ? names[node.feature] : "x" + std::to_string(node.feature);
      out << detail::dot_escape(name) << " < " << detail::short_number(display_threshold(node, stats)) << '"';
    }
    out << "];\n";
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    out << "  n" << i << " -> n" << nodes[i].left << " [label=\"yes\"];\n";
    out << "  n" << i << " -> n" << nodes[i].right << " [label=\"no\"];\n";
  }
  out << "}\n";
  return out.str();
}

namespace detail {

inline nlohmann::json policy_node_to_json(const PolicyTree& tree, int at, const std::vector<std::string>& names,
                                          const std::vector<ColumnStats>* stats) {
  const auto& node = tree.nodes()[at];
  nlohmann::json doc = {{"count", node.count}, {"mean_r0", node.mean_r0}, {"mean_r1", node.mean_r1}};
  if (node.is_leaf()) {
    doc["treatment"] = node.treatment;
    return doc;
  }
  doc["feature"] = node.feature;
  if (node.feature < static_cast<int>(names.size())) doc["name"] = names[node.feature];
  doc["threshold"] = node.threshold;
  if (stats) doc["raw_threshold"] = display_threshold(node, stats);
  doc["left"] = policy_node_to_json(tree, node.left, names, stats);
  doc["right"] = policy_node_to_json(tree, node.right, names, stats);
  return doc;
}

inline int policy_node_from_json(const nlohmann::json& doc, std::vector<PolicyNode>& nodes, std::size_t n_features) {
  const int id = static_cast<int>(nodes.size());
  nodes.push_back({});
  nodes[id].count = doc.value("count", std::size_t{0});
  nodes[id].mean_r0 = doc.value("mean_r0", 0.0);
  nodes[id].mean_r1 = doc.value("mean_r1", 0.0);
  if (doc.contains("treatment")) {
    const int t = doc.at("treatment").get<int>();
    require(t == 0 || t == 1, ErrorCode::BadValue, "leaf treatment must be 0 or 1");
    nodes[id].treatment = t;
    return id;
  }
  const int feature = doc.at("feature").get<int>();
  require(feature >= 0 && static_cast<std::size_t>(feature) < n_features, ErrorCode::BadValue,
          "policy node feature out of range");
  const int l = policy_node_from_json(doc.at("left"), nodes, n_features);
  const int r = policy_node_from_json(doc.at("right"), nodes, n_features);
  nodes[id].feature = feature;
  nodes[id].threshold = doc.at("threshold").get<double>();
  nodes[id].left = l;
  nodes[id].right = r;
  return id;
}

}  // namespace detail

inline nlohmann::json policy_to_json(const PolicyTree& tree, const std::vector<std::string>& names,
                                     const std::vector<ColumnStats>* stats = nullptr) {
  return {{"n_features", tree.n_features()},
          {"feature_names", names},
          {"root", detail::policy_node_to_json(tree, 0, names, stats)}};
}

inline PolicyTree policy_from_json(const nlohmann::json& doc) {
  const auto n_features = doc.at("n_features").get<std::size_t>();
  std::vector<PolicyNode> nodes;
  detail::policy_node_from_json(doc.at("root"), nodes, n_features);
  return PolicyTree(std::move(nodes), n_features);
}

inline nlohmann::json leaf_effects_to_json(const std::vector<LeafEffect>& effects) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : effects) {
    nlohmann::json row = {{"leaf", e.leaf},          {"treatment", e.treatment},       {"count", e.count},
                          {"baseline_risk", e.baseline_risk}, {"treated_risk", e.treated_risk}, {"arr", e.arr}};
    row["rrr"] = e.rrr ? nlohmann::json(*e.rrr) : nlohmann::json(nullptr);
    out.push_back(row);
  }
  return out;
}

}  // namespace road
