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
#include "road/policy_tree.hpp"
#include "road/risk_forest.hpp"

namespace road {

struct Interval {
  double lower = 0.0;
  double upper = 1.0;
};

/// 95% Wilson score interval for k successes out of n (n > 0).
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054) {
  require(trials > 0, ErrorCode::InvalidArgument, "Wilson interval needs at least one trial");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct Metric {
  double value = 0.0;
  Interval ci;
};

/// Confusion counts on an untreated cohort: an event is a positive, a
/// prescription of treatment is a positive call.
struct ValidationResult {
  std::size_t tp = 0;  // event, treatment prescribed
  std::size_t fn = 0;  // event, no treatment prescribed
  std::size_t tn = 0;  // no event, no treatment prescribed
  std::size_t fp = 0;  // no event, treatment prescribed
  std::optional<Metric> sensitivity;
  std::optional<Metric> specificity;
  std::optional<Metric> npv;

  std::size_t total() const { return tp + fn + tn + fp; }
};

inline std::optional<Metric> proportion(std::size_t hits, std::size_t trials) {
  if (trials == 0) return std::nullopt;
  return Metric{static_cast<double>(hits) / static_cast<double>(trials), wilson_interval(hits, trials)};
}

inline ValidationResult confusion(std::span<const int> prescriptions, std::span<const int> outcomes) {
  require(prescriptions.size() == outcomes.size(), ErrorCode::DimensionMismatch, "prescription/outcome length mismatch");
  ValidationResult r;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i] == 1) (prescriptions[i] == 1 ? r.tp : r.fn) += 1;
    else (prescriptions[i] == 1 ? r.fp : r.tn) += 1;
  }
  r.sensitivity = proportion(r.tp, r.tp + r.fn);
  r.specificity = proportion(r.tn, r.tn + r.fp);
  r.npv = proportion(r.tn, r.tn + r.fn);
  return r;
}

/// Scores a policy on an external cohort that did not receive the treatment.
inline ValidationResult validate(const PolicyTree& tree, const std::vector<PatientRecord>& external) {
  std::vector<int> prescribed;
  std::vector<int> observed;
  prescribed.reserve(external.size());
  observed.reserve(external.size());
  for (const auto& rec : external) {
    require(rec.treatment == 0, ErrorCode::TreatedRecordPresent,
            "validation record '" + rec.id + "' received the treatment");
    prescribed.push_back(tree.prescribe(rec.covariates));
    observed.push_back(rec.outcome);
  }
  return confusion(prescribed, observed);
}

enum class SelectionKind { MaxSensitivityWithSpecificityFloor, MaxSum };

struct SelectionRule {
  SelectionKind kind = SelectionKind::MaxSensitivityWithSpecificityFloor;
  double floor = 0.5;

  std::string tag() const {
    if (kind == SelectionKind::MaxSum) return "max-sum";
    return "max-sens-with-spec-floor(" + io::format_double(floor) + ")";
  }
};

struct TuningRow {
  double rho = 1.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

struct Selection {
  double rho = 1.0;
  std::string rule;  // rule tag, suffixed with ":fallback" when no row qualified
};

/// Picks a weight from a trade-off table. The floor rule keeps rows whose
/// specificity reaches the floor and takes the highest sensitivity (then higher
/// specificity, then smaller weight). With no qualifying row it falls back to
/// the highest specificity.
inline Selection select_weight(std::span<const TuningRow> rows, const SelectionRule& rule) {
  require(!rows.empty(), ErrorCode::EmptyGrid, "tuning table is empty");
  const TuningRow* best = nullptr;
  auto complete = [](const TuningRow& r) { return r.sensitivity && r.specificity; };
  if (rule.kind == SelectionKind::MaxSum) {
    for (const auto& r : rows) {
      if (!complete(r)) continue;
      if (!best || *r.sensitivity + *r.specificity > *best->sensitivity + *best->specificity ||
          (*r.sensitivity + *r.specificity == *best->sensitivity + *best->specificity && r.rho < best->rho)) {
        best = &r;
      }
    }
  } else {
    for (const auto& r : rows) {
      if (!complete(r) || *r.specificity < rule.floor) continue;
      if (!best || *r.sensitivity > *best->sensitivity ||
          (*r.sensitivity == *best->sensitivity &&
           (*r.specificity > *best->specificity || (*r.specificity == *best->specificity && r.rho < best->rho)))) {
        best = &r;
      }
    }
  }
  if (best) return {best->rho, rule.tag()};
  for (const auto& r : rows) {
    if (!r.specificity) continue;
    if (!best || *r.specificity > *best->specificity || (*r.specificity == *best->specificity && r.rho < best->rho)) {
      best = &r;
    }
  }
  return {best ? best->rho : rows.front().rho, rule.tag() + ":fallback"};
}

/// One weight of the tuning protocol with everything it produced.
struct TuningPoint {
  double rho = 1.0;
  double w_hat_0 = 0.0;
  double w_hat_1 = 0.0;
  PolicyTree tree;
  ValidationResult validation;
};

struct TuningTable {
  std::vector<TuningPoint> points;  // ascending rho
  Selection selection;

  std::vector<TuningRow> rows() const {
    std::vector<TuningRow> out;
    for (const auto& p : points) {
      out.push_back({p.rho, p.validation.sensitivity ? std::optional<double>(p.validation.sensitivity->value) : std::nullopt,
                     p.validation.specificity ? std::optional<double>(p.validation.specificity->value) : std::nullopt});
    }
    return out;
  }

  const TuningPoint& selected() const {
    for (const auto& p : points) {
      if (p.rho == selection.rho) return p;
    }
    throw Error(ErrorCode::InvalidArgument, "selected weight missing from table");
  }
};

/// For each weight: fit the counterfactual pair on the training records, train a
/// policy on their rewards and score it on the untreated validation records.
inline TuningTable tune_weight(const std::vector<PatientRecord>& training, const std::vector<PatientRecord>& validation,
                               std::vector<double> rho_grid, const TreeConfig& tree_config,
                               const ForestConfig& forest_config, const SelectionRule& rule) {
  require(!rho_grid.empty(), ErrorCode::EmptyGrid, "weight grid is empty");
  for (double rho : rho_grid) require(rho >= 1.0, ErrorCode::InvalidArgument, "grid weights must be >= 1");
  for (const auto& rec : validation) {
    require(rec.treatment == 0, ErrorCode::TreatedRecordPresent, "validation record '" + rec.id + "' received the treatment");
  }
  std::sort(rho_grid.begin(), rho_grid.end());
  rho_grid.erase(std::unique(rho_grid.begin(), rho_grid.end()), rho_grid.end());
  const auto x = feature_matrix(training);
  TuningTable table;
  for (double rho : rho_grid) {
    const auto pair = train_pair(training, rho, forest_config);
    const auto r = rewards(pair, training);
    TuningPoint point;
    point.rho = rho;
    point.w_hat_0 = pair.w_hat_0;
    point.w_hat_1 = pair.w_hat_1;
    point.tree = train_policy(x, r, tree_config);
    point.validation = validate(point.tree, validation);
    table.points.push_back(std::move(point));
  }
  const auto rows = table.rows();
  table.selection = select_weight(rows, rule);
  return table;
}

inline TuningTable tune_weight(const MatchedCohort& matched, const std::vector<PatientRecord>& validation,
                               std::vector<double> rho_grid, const TreeConfig& tree_config,
                               const ForestConfig& forest_config, const SelectionRule& rule) {
  return tune_weight(matched.records, validation, std::move(rho_grid), tree_config, forest_config, rule);
}

/// Spread of sensitivity/specificity across policies trained with different
/// tree hyperparameters on the same rewards; narrow ranges indicate robust
/// recommendations.
struct Spread {
  std::optional<Interval> sensitivity;
  std::optional<Interval> specificity;
  std::size_t trees = 0;
};

inline Spread hyperparameter_spread(const Matrix& x, std::span<const Reward> r, const std::vector<TreeConfig>& grid,
                                    const std::vector<PatientRecord>& validation) {
  Spread out;
  auto widen = [](std::optional<Interval>& range, double v) {
    if (!range) range = Interval{v, v};
    else range = Interval{std::min(range->lower, v), std::max(range->upper, v)};
  };
  for (const auto& config : grid) {
    const auto tree = train_policy(x, r, config);
    const auto result = validate(tree, validation);
    if (result.sensitivity) widen(out.sensitivity, result.sensitivity->value);
    if (result.specificity) widen(out.specificity, result.specificity->value);
    ++out.trees;
  }
  return out;
}

inline nlohmann::json metric_to_json(const std::optional<Metric>& m) {
  if (!m) return nullptr;
  return {{"value", m->value}, {"ci95", {m->ci.lower, m->ci.upper}}};
}

inline nlohmann::json validation_to_json(const ValidationResult& r) {
  return {{"tp", r.tp},
          {"fn", r.fn},
          {"tn", r.tn},
          {"fp", r.fp},
          {"sensitivity", metric_to_json(r.sensitivity)},
          {"specificity", metric_to_json(r.specificity)},
          {"npv", metric_to_json(r.npv)}};
}

inline std::string validation_to_csv(const ValidationResult& r) {
  std::ostringstream out;
  auto cell = [](const std::optional<Metric>& m, int which) {
    if (!m) return std::string();
    return io::format_double(which == 0 ? m->value : which == 1 ? m->ci.lower : m->ci.upper);
  };
  out << "tp,fn,tn,fp,sensitivity,sensitivity_lo,sensitivity_hi,specificity,specificity_lo,specificity_hi,npv,npv_lo,"
         "npv_hi\n";
  out << r.tp << ',' << r.fn << ',' << r.tn << ',' << r.fp;
  for (const auto* m : {&r.sensitivity, &r.specificity, &r.npv}) {
    out << ',' << cell(*m, 0) << ',' << cell(*m, 1) << ',' << cell(*m, 2);
  }
  out << '\n';
  return out.str();
}

/// weight,sensitivity,specificity; undefined metrics are left empty.
inline std::string tuning_to_csv(const TuningTable& table) {
  std::ostringstream out;
  out << "weight,sensitivity,specificity\n";
  for (const auto& row : table.rows()) {
    out << io::format_double(row.rho) << ',' << (row.sensitivity ? io::format_double(*row.sensitivity) : "") << ','
        << (row.specificity ? io::format_double(*row.specificity) : "") << '\n';
  }
  return out.str();
}

inline nlohmann::json tuning_to_json(const TuningTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : table.points) {
    rows.push_back({{"rho", p.rho},
                    {"w_hat_0", p.w_hat_0},
                    {"w_hat_1", p.w_hat_1},
                    {"validation", validation_to_json(p.validation)}});
  }
  return {{"rows", rows}, {"selected_rho", table.selection.rho}, {"rule", table.selection.rule}};
}

}  // namespace road
