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

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace road {
namespace {

using testing::make_record;

// Treats x < 0.5.
PolicyTree treat_low() {
  std::vector<PolicyNode> nodes(3);
  nodes[0].feature = 0;
  nodes[0].threshold = 0.5;
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1].treatment = 1;
  return PolicyTree(nodes, 1);
}

void add(std::vector<PatientRecord>& out, std::size_t count, double x, int y) {
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_record("r" + std::to_string(out.size()), {x}, 0, y));
}

std::vector<PatientRecord> worked_cohort() {
  std::vector<PatientRecord> recs;
  add(recs, 90, 0.0, 1);  // recurred, treated
  add(recs, 10, 1.0, 1);  // recurred, not treated
  add(recs, 80, 1.0, 0);  // spared
  add(recs, 20, 0.0, 0);  // treated unnecessarily
  return recs;
}

TEST(Validate, WorkedExamples) {
  const auto r = validate(treat_low(), worked_cohort());
  EXPECT_EQ(r.tp, 90u);
  EXPECT_EQ(r.fn, 10u);
  EXPECT_EQ(r.tn, 80u);
  EXPECT_EQ(r.fp, 20u);
  EXPECT_EQ(r.sensitivity->value, 0.90);
  EXPECT_EQ(r.specificity->value, 0.80);
  EXPECT_EQ(r.npv->value, 80.0 / 90.0);
}

TEST(Validate, PrevalenceIndependence) {
  const auto base = worked_cohort();
  const auto r = validate(treat_low(), base);
  auto more_non_events = base;
  auto more_events = base;
  for (const auto& rec : base) {
    auto copy = rec;
    copy.id += "-dup";
    (rec.outcome == 0 ? more_non_events : more_events).push_back(copy);
  }
  EXPECT_EQ(validate(treat_low(), more_non_events).sensitivity->value, r.sensitivity->value);
  EXPECT_EQ(validate(treat_low(), more_events).specificity->value, r.specificity->value);
}

TEST(Validate, TreatEveryone) {
  const auto r = validate(PolicyTree::constant(1, 1), worked_cohort());
  EXPECT_EQ(r.sensitivity->value, 1.0);
  EXPECT_EQ(r.specificity->value, 0.0);
  EXPECT_FALSE(r.npv.has_value());
  EXPECT_TRUE(validation_to_json(r)["npv"].is_null());
}

TEST(Validate, UndefinedMetricsAreAbsent) {
  std::vector<PatientRecord> recs;
  add(recs, 5, 0.0, 0);
  const auto r = validate(treat_low(), recs);
  EXPECT_FALSE(r.sensitivity.has_value());
  EXPECT_TRUE(r.specificity.has_value());
}

TEST(Validate, TreatedRecordRejected) {
  auto recs = worked_cohort();
  recs[3].treatment = 1;
  try {
    validate(treat_low(), recs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TreatedRecordPresent);
  }
}

TEST(Wilson, KnownInterval) {
  const auto ci = wilson_interval(90, 100);
  // Closed form worked by hand for p = 0.9, n = 100, z = 1.96.
  EXPECT_NEAR(ci.lower, 0.8257, 1e-4);
  EXPECT_NEAR(ci.upper, 0.9448, 1e-4);
}

TEST(Wilson, ContainsEstimateAndStaysInUnitInterval) {
  for (std::size_t n : {1u, 2u, 7u, 50u}) {
    for (std::size_t k = 0; k <= n; ++k) {
      const auto ci = wilson_interval(k, n);
      const double p = static_cast<double>(k) / static_cast<double>(n);
      EXPECT_LE(ci.lower, p + 1e-12);
      EXPECT_GE(ci.upper, p - 1e-12);
      EXPECT_GE(ci.lower, 0.0);
      EXPECT_LE(ci.upper, 1.0);
    }
  }
}

std::vector<TuningRow> table2() {
  return {{1.50, .85, .76}, {2.00, .84, .77}, {2.25, .89, .70}, {2.85, .93, .55}, {3.05, .93, .53}, {3.25, .94, .52}};
}

TEST(SelectWeight, PublishedTradeOffRows) {
  const auto rows = table2();
  const auto s = select_weight(rows, SelectionRule{SelectionKind::MaxSensitivityWithSpecificityFloor, 0.6});
  EXPECT_EQ(s.rho, 2.25);
  EXPECT_EQ(s.rule, "max-sens-with-spec-floor(0.6)");
}

TEST(SelectWeight, FloorOfHalfTakesLargestWeight) {
  const auto rows = table2();
  EXPECT_EQ(select_weight(rows, SelectionRule{}).rho, 3.25);
}

TEST(SelectWeight, FallbackWhenNothingQualifies) {
  const auto rows = table2();
  const auto s = select_weight(rows, SelectionRule{SelectionKind::MaxSensitivityWithSpecificityFloor, 0.9});
  EXPECT_EQ(s.rho, 2.00);
  EXPECT_NE(s.rule.find(":fallback"), std::string::npos);
}

TEST(SelectWeight, MaxSum) {
  const std::vector<TuningRow> rows = {{1.0, .5, .9}, {2.0, .8, .7}, {3.0, .9, .5}};
  EXPECT_EQ(select_weight(rows, SelectionRule{SelectionKind::MaxSum, 0.0}).rho, 2.0);
}

TEST(SelectWeight, EmptyTable) {
  EXPECT_THROW(select_weight(std::vector<TuningRow>{}, SelectionRule{}), Error);
}

struct TuneFixture {
  std::vector<PatientRecord> training;
  std::vector<PatientRecord> validation;
  ForestConfig forest;
  TreeConfig tree;
};

TuneFixture tune_fixture() {
  SynthConfig s;
  s.n = 600;
  s.seed = 8;
  TuneFixture f;
  f.training = generate(s).first.records;
  f.validation = generate_untreated(s, 300, 9).first.records;
  f.forest.n_trees = 30;
  f.forest.seed = 2;
  f.forest.threads = 1;
  f.tree.max_depth = 2;
  return f;
}

TEST(TuneWeight, SingleValueGrid) {
  const auto f = tune_fixture();
  const auto t = tune_weight(f.training, f.validation, {2.0}, f.tree, f.forest, SelectionRule{});
  ASSERT_EQ(t.points.size(), 1u);
  EXPECT_EQ(t.selection.rho, 2.0);
  EXPECT_EQ(&t.selected(), &t.points[0]);
}

TEST(TuneWeight, SortedDeterministicTable) {
  const auto f = tune_fixture();
  const auto a = tune_weight(f.training, f.validation, {2.0, 1.0, 1.5}, f.tree, f.forest, SelectionRule{});
  const auto b = tune_weight(f.training, f.validation, {2.0, 1.0, 1.5}, f.tree, f.forest, SelectionRule{});
  ASSERT_EQ(a.points.size(), 3u);
  EXPECT_EQ(a.points[0].rho, 1.0);
  EXPECT_EQ(a.points[2].rho, 2.0);
  EXPECT_EQ(tuning_to_csv(a), tuning_to_csv(b));
  EXPECT_EQ(tuning_to_json(a).dump(), tuning_to_json(b).dump());
}

TEST(TuneWeight, BadGrids) {
  const auto f = tune_fixture();
  try {
    tune_weight(f.training, f.validation, {}, f.tree, f.forest, SelectionRule{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGrid);
  }
  EXPECT_THROW(tune_weight(f.training, f.validation, {0.5}, f.tree, f.forest, SelectionRule{}), Error);
}

TEST(Spread, CoversEveryTree) {
  const auto f = tune_fixture();
  const auto pair = train_pair(f.training, 1.5, f.forest);
  const auto r = rewards(pair, f.training);
  const auto x = feature_matrix(f.training);
  std::vector<TreeConfig> grid;
  for (int depth : {1, 2, 3}) {
    TreeConfig t;
    t.max_depth = depth;
    grid.push_back(t);
  }
  const auto s = hyperparameter_spread(x, r, grid, f.validation);
  EXPECT_EQ(s.trees, 3u);
  for (const auto& t : grid) {
    const auto v = validate(train_policy(x, r, t), f.validation);
    if (v.sensitivity) {
      EXPECT_GE(v.sensitivity->value, s.sensitivity->lower);
      EXPECT_LE(v.sensitivity->value, s.sensitivity->upper);
    }
  }
}

}  // namespace
}  // namespace road
