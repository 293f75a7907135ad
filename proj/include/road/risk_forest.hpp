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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "road/error.hpp"
#include "road/matrix.hpp"
#include "road/random.hpp"

namespace road {

struct ForestConfig {
  int n_trees = 200;
  int max_depth = 8;
  int min_leaf = 5;
  // Unset means ceil(sqrt(d)).
  std::optional<int> features_per_split;
  std::uint64_t seed = 0;
  // 0 uses the hardware thread count. Results do not depend on it.
  int threads = 0;
};

enum class TrainingArm { Baseline, Untreated, Treated };

inline std::string to_string(TrainingArm arm) {
  switch (arm) {
    case TrainingArm::Untreated: return "untreated";
    case TrainingArm::Treated: return "treated";
    default: return "baseline";
  }
}

inline TrainingArm parse_training_arm(const std::string& text) {
  if (text == "untreated") return TrainingArm::Untreated;
  if (text == "treated") return TrainingArm::Treated;
  if (text == "baseline") return TrainingArm::Baseline;
  throw Error(ErrorCode::BadValue, "unknown training arm '" + text + "'");
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf event probability

  bool is_leaf() const { return feature < 0; }
};

/// Binary CART tree in a flat node array; node 0 is the root.
struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int at = 0;
    while (!nodes[at].is_leaf()) {
      const auto& node = nodes[at];
      at = x[node.feature] < node.threshold ? node.left : node.right;
    }
    return nodes[at].value;
  }
};

class Forest {
 public:
  Forest() = default;
  Forest(ForestConfig config, TrainingArm arm, std::size_t n_features, std::vector<DecisionTree> trees,
         std::vector<std::vector<std::uint32_t>> in_bag = {})
      : config_(config), arm_(arm), n_features_(n_features), trees_(std::move(trees)), in_bag_(std::move(in_bag)) {}

  const ForestConfig& config() const { return config_; }
  TrainingArm training_arm() const { return arm_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  /// Mean of the per-tree leaf probabilities.
  double predict_proba(std::span<const double> x) const {
    require(x.size() == n_features_, ErrorCode::DimensionMismatch,
            "forest expects " + std::to_string(n_features_) + " covariates, got " + std::to_string(x.size()));
    double sum = 0.0;
    for (const auto& tree : trees_) sum += tree.predict(x);
    return sum / static_cast<double>(trees_.size());
  }

  std::vector<double> predict_proba(const Matrix& x) const {
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_proba(x.row(i));
    return out;
  }

  bool has_bootstrap() const { return !in_bag_.empty(); }

  /// Out-of-bag prediction for the training rows: each row is scored only by
  /// trees whose bootstrap left it out (all trees if none did). Needs the
  /// training matrix and a forest fresh from training.
  std::vector<double> predict_oob(const Matrix& training) const {
    require(has_bootstrap(), ErrorCode::InvalidArgument, "forest carries no bootstrap record");
    require(training.cols() == n_features_, ErrorCode::DimensionMismatch, "training matrix dimension differs");
    std::vector<double> sum(training.rows(), 0.0);
    std::vector<std::size_t> votes(training.rows(), 0);
    std::vector<char> in_bag(training.rows());
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      std::fill(in_bag.begin(), in_bag.end(), 0);
      for (auto i : in_bag_[t]) {
        require(i < training.rows(), ErrorCode::DimensionMismatch, "training matrix smaller than bootstrap");
        in_bag[i] = 1;
      }
      for (std::size_t i = 0; i < training.rows(); ++i) {
        if (in_bag[i]) continue;
        sum[i] += trees_[t].predict(training.row(i));
        votes[i] += 1;
      }
    }
    std::vector<double> out(training.rows());
    for (std::size_t i = 0; i < training.rows(); ++i) {
      out[i] = votes[i] > 0 ? sum[i] / static_cast<double>(votes[i]) : predict_proba(training.row(i));
    }
    return out;
  }

 private:
  ForestConfig config_;
  TrainingArm arm_ = TrainingArm::Baseline;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
  std::vector<std::vector<std::uint32_t>> in_bag_;  // per tree, rows drawn at least once
};

namespace detail {

struct SampleEntry {
  std::uint32_t index;
  std::uint32_t count;  // bootstrap multiplicity
  double weight;        // count * record weight
  double positive;      // weight if label 1 else 0
};

// Sum over children of W * gini, written as 2 P (W - P) / W.
inline double weighted_gini(double positive, double total) {
  return total > 0.0 ? 2.0 * positive * (total - positive) / total : 0.0;
}

class TreeGrower {
 public:
  TreeGrower(const Matrix& x, const ForestConfig& config, int features_per_split, Rng& rng)
      : x_(x), config_(config), features_per_split_(features_per_split), rng_(rng) {}

  DecisionTree grow(std::vector<SampleEntry> entries) {
    tree_.nodes.clear();
    build(std::move(entries), 0);
    return std::move(tree_);
  }

 private:
  int build(std::vector<SampleEntry> entries, int depth) {
    std::uint64_t count = 0;
    double total = 0.0;
    double positive = 0.0;
    for (const auto& e : entries) {
      count += e.count;
      total += e.weight;
      positive += e.positive;
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    // Laplace-smoothed weighted event fraction.
    tree_.nodes[id].value = (positive + 1.0) / (total + 2.0);

    const bool pure = positive <= 0.0 || positive >= total;
    if (depth >= config_.max_depth || pure || count < 2 * static_cast<std::uint64_t>(config_.min_leaf)) return id;

    // Feature subset without replacement, scanned in ascending index order.
    const std::size_t d = x_.cols();
    std::vector<int> features(d);
    std::iota(features.begin(), features.end(), 0);
    for (int k = 0; k < features_per_split_; ++k) {
      const auto pick = k + static_cast<int>(uniform_index(rng_, d - k));
      std::swap(features[k], features[pick]);
    }
    features.resize(features_per_split_);
    std::sort(features.begin(), features.end());

    const double parent = weighted_gini(positive, total);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<SampleEntry> sorted;
    for (int f : features) {
      sorted = entries;
      std::sort(sorted.begin(), sorted.end(), [&](const SampleEntry& a, const SampleEntry& b) {
        const double va = x_(a.index, f);
        const double vb = x_(b.index, f);
        return va < vb || (va == vb && a.index < b.index);
      });
      std::uint64_t left_count = 0;
      double left_total = 0.0;
      double left_positive = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left_count += sorted[i].count;
        left_total += sorted[i].weight;
        left_positive += sorted[i].positive;
        const double lo = x_(sorted[i].index, f);
        const double hi = x_(sorted[i + 1].index, f);
        if (!(lo < hi)) continue;
        const std::uint64_t right_count = count - left_count;
        if (left_count < static_cast<std::uint64_t>(config_.min_leaf) ||
            right_count < static_cast<std::uint64_t>(config_.min_leaf)) {
          continue;
        }
        const double children = weighted_gini(left_positive, left_total) +
                                weighted_gini(positive - left_positive, total - left_total);
        const double gain = parent - children;
        if (gain > best_gain) {
          double threshold = lo + (hi - lo) / 2.0;
          if (!(threshold > lo)) threshold = hi;
          best_gain = gain;
          best_feature = f;
          best_threshold = threshold;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<SampleEntry> left;
    std::vector<SampleEntry> right;
    for (const auto& e : entries) {
      (x_(e.index, best_feature) < best_threshold ? left : right).push_back(e);
    }
    entries.clear();
    entries.shrink_to_fit();
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    tree_.nodes[id].feature = best_feature;
    tree_.nodes[id].threshold = best_threshold;
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const Matrix& x_;
  const ForestConfig& config_;
  int features_per_split_;
  Rng& rng_;
  DecisionTree tree_;
};

inline void check_labels(std::span<const int> labels) {
  bool has0 = false;
  bool has1 = false;
  for (int y : labels) {
    require(y == 0 || y == 1, ErrorCode::BadValue, "labels must be 0 or 1");
    has0 = has0 || y == 0;
    has1 = has1 || y == 1;
  }
  require(has0 && has1, ErrorCode::SingleClass, "labels contain a single class");
}

}  // namespace detail

/// Bagged CART forest. Each tree sees a weighted bootstrap of size n
/// (draw probability proportional to weight) and splits on weighted Gini.
/// Tree t is seeded with config.seed + t, so the result is independent of
/// the thread count.
inline Forest train_forest(const Matrix& x, std::span<const int> labels, std::span<const double> weights,
                           const ForestConfig& config, TrainingArm arm = TrainingArm::Baseline) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  require(labels.size() == n, ErrorCode::DimensionMismatch, "label count differs from row count");
  require(weights.empty() || weights.size() == n, ErrorCode::DimensionMismatch, "weight count differs from row count");
  require(config.n_trees >= 1, ErrorCode::InvalidConfig, "n_trees must be >= 1");
  require(config.max_depth >= 1, ErrorCode::InvalidConfig, "max_depth must be >= 1");
  require(config.min_leaf >= 1, ErrorCode::InvalidConfig, "min_leaf must be >= 1");
  require(d >= 1, ErrorCode::DimensionMismatch, "no covariates");
  detail::check_labels(labels);
  require(n >= 2 * static_cast<std::size_t>(config.min_leaf), ErrorCode::TooSmall,
          "need at least 2*min_leaf = " + std::to_string(2 * config.min_leaf) + " records, got " + std::to_string(n));
  const int mtry = config.features_per_split.value_or(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d)))));
  require(mtry >= 1 && static_cast<std::size_t>(mtry) <= d, ErrorCode::InvalidConfig,
          "features_per_split must lie in [1, d]");

  std::vector<double> w(n, 1.0);
  if (!weights.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      require(weights[i] > 0.0 && std::isfinite(weights[i]), ErrorCode::BadValue, "weights must be positive");
      w[i] = weights[i];
    }
  }
  std::vector<double> cumulative(n);
  std::partial_sum(w.begin(), w.end(), cumulative.begin());
  const double total_weight = cumulative.back();

  std::vector<std::vector<std::uint32_t>> in_bag(static_cast<std::size_t>(config.n_trees));
  auto grow_tree = [&](int t) {
    Rng rng(config.seed + static_cast<std::uint64_t>(t));
    // Inverse-CDF draws over the cumulative weights, in record order. The same
    // uniforms are reused when only the weights change.
    std::vector<std::uint32_t> multiplicity(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
      const double u = uniform01(rng) * total_weight;
      auto pos = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      multiplicity[std::min(pos, n - 1)] += 1;
    }
    std::vector<detail::SampleEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
      if (multiplicity[i] == 0) continue;
      const double weight = multiplicity[i] * w[i];
      entries.push_back({static_cast<std::uint32_t>(i), multiplicity[i], weight, labels[i] == 1 ? weight : 0.0});
    }
    for (const auto& e : entries) in_bag[t].push_back(e.index);
    detail::TreeGrower grower(x, config, mtry, rng);
    return grower.grow(std::move(entries));
  };

  std::vector<DecisionTree> trees(static_cast<std::size_t>(config.n_trees));
  int workers = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, config.n_trees);
  if (workers == 1) {
    for (int t = 0; t < config.n_trees; ++t) trees[t] = grow_tree(t);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (int k = 0; k < workers; ++k) {
      pool.emplace_back([&] {
        for (int t = next.fetch_add(1); t < config.n_trees; t = next.fetch_add(1)) trees[t] = grow_tree(t);
      });
    }
  }
  return Forest(config, arm, d, std::move(trees), std::move(in_bag));
}

inline Forest train_forest(const Matrix& x, std::span<const int> labels, const ForestConfig& config,
                           TrainingArm arm = TrainingArm::Baseline) {
  return train_forest(x, labels, std::span<const double>{}, config, arm);
}

/// Mann-Whitney AUC; tied scores count one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorCode::DimensionMismatch, "score/label length mismatch");
  detail::check_labels(labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  return (positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline double auc(const Forest& forest, const Matrix& x, std::span<const int> labels) {
  const auto scores = forest.predict_proba(x);
  return auc(std::span<const double>(scores), labels);
}

// JSON: nested node objects, {"feature", "threshold", "left", "right"} or {"leaf"}.

namespace detail {

inline nlohmann::json node_to_json(const DecisionTree& tree, int at) {
  const auto& node = tree.nodes[at];
  if (node.is_leaf()) return {{"leaf", node.value}};
  return {{"feature", node.feature},
          {"threshold", node.threshold},
          {"left", node_to_json(tree, node.left)},
          {"right", node_to_json(tree, node.right)}};
}

inline int node_from_json(const nlohmann::json& doc, DecisionTree& tree, std::size_t n_features) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  if (doc.contains("leaf")) {
    const double p = doc.at("leaf").get<double>();
    require(p >= 0.0 && p <= 1.0, ErrorCode::BadValue, "leaf probability outside [0,1]");
    tree.nodes[id].value = p;
    return id;
  }
  const int feature = doc.at("feature").get<int>();
  require(feature >= 0 && static_cast<std::size_t>(feature) < n_features, ErrorCode::BadValue,
          "node feature index out of range");
  const int l = node_from_json(doc.at("left"), tree, n_features);
  const int r = node_from_json(doc.at("right"), tree, n_features);
  tree.nodes[id].feature = feature;
  tree.nodes[id].threshold = doc.at("threshold").get<double>();
  tree.nodes[id].left = l;
  tree.nodes[id].right = r;
  return id;
}

}  // namespace detail

inline nlohmann::json forest_to_json(const Forest& forest) {
  const auto& c = forest.config();
  nlohmann::json config = {{"n_trees", c.n_trees}, {"max_depth", c.max_depth}, {"min_leaf", c.min_leaf},
                           {"seed", c.seed}};
  if (c.features_per_split) config["features_per_split"] = *c.features_per_split;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : forest.trees()) trees.push_back(detail::node_to_json(tree, 0));
  return {{"config", config},
          {"training_arm", to_string(forest.training_arm())},
          {"n_features", forest.n_features()},
          {"trees", trees}};
}

inline Forest forest_from_json(const nlohmann::json& doc) {
  ForestConfig config;
  const auto& c = doc.at("config");
  config.n_trees = c.at("n_trees").get<int>();
  config.max_depth = c.at("max_depth").get<int>();
  config.min_leaf = c.at("min_leaf").get<int>();
  config.seed = c.at("seed").get<std::uint64_t>();
  if (c.contains("features_per_split")) config.features_per_split = c.at("features_per_split").get<int>();
  const auto n_features = doc.at("n_features").get<std::size_t>();
  std::vector<DecisionTree> trees;
  for (const auto& t : doc.at("trees")) {
    DecisionTree tree;
    detail::node_from_json(t, tree, n_features);
    trees.push_back(std::move(tree));
  }
  require(!trees.empty(), ErrorCode::BadValue, "forest has no trees");
  return Forest(config, parse_training_arm(doc.at("training_arm").get<std::string>()), n_features, std::move(trees));
}

}  // namespace road
