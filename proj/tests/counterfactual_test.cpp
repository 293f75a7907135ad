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

// Outcomes independent of covariates with fixed event rates per arm.
std::vector<PatientRecord> two_arms(double untreated_rate, double treated_rate, std::size_t per_arm, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<PatientRecord> out;
  for (int t = 0; t < 2; ++t) {
    const double rate = t == 1 ? treated_rate : untreated_rate;
    const auto events = static_cast<std::size_t>(rate * static_cast<double>(per_arm));
    for (std::size_t i = 0; i < per_arm; ++i) {
      out.push_back(make_record((t ? "t" : "u") + std::to_string(i), {g(gen), g(gen)}, t, i < events ? 1 : 0));
    }
  }
  return out;
}

ForestConfig config() {
  ForestConfig c;
  c.n_trees = 40;
  c.seed = 5;
  c.threads = 1;
  return c;
}

double mean_over(const Forest& f, const std::vector<PatientRecord>& records) {
  double s = 0.0;
  for (const auto& r : records) s += f.predict_proba(r.covariates);
  return s / static_cast<double>(records.size());
}

TEST(TrainPair, MeansAreAveragePredictionsOverAllRecords) {
  const auto recs = two_arms(0.3, 0.5, 100, 1);
  const auto pair = train_pair(recs, 1.7, config());
  EXPECT_NEAR(pair.w_hat_0, mean_over(pair.h0, recs), 1e-9);
  EXPECT_NEAR(pair.w_hat_1, mean_over(pair.h1, recs), 1e-9);
  EXPECT_EQ(pair.rho, 1.7);
  EXPECT_EQ(pair.h1.training_arm(), TrainingArm::Treated);
}

TEST(TrainPair, UnitWeightIsPlainForest) {
  const auto recs = two_arms(0.3, 0.5, 80, 2);
  const auto pair = train_pair(recs, 1.0, config());
  std::vector<PatientRecord> treated;
  for (const auto& r : recs) {
    if (r.treatment == 1) treated.push_back(r);
  }
  auto c = config();
  c.seed = derive_seed(c.seed, "h1");
  const auto plain = train_forest(feature_matrix(treated), outcomes(treated), c, TrainingArm::Treated);
  const auto x = feature_matrix(recs);
  EXPECT_EQ(pair.h1.predict_proba(x), plain.predict_proba(x));
}

TEST(TrainPair, RejectsRhoBelowOne) {
  EXPECT_THROW(train_pair(two_arms(0.3, 0.5, 40, 3), 0.9, config()), Error);
}

TEST(TrainPair, SingleClassArm) {
  try {
    train_pair(two_arms(0.3, 0.0, 40, 3), 1.0, config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingleClass);
  }
}

TEST(Escalate, AlreadyBalanced) {
  const auto [pair, trace] = escalate(two_arms(0.6, 0.2, 100, 4), 0.1, 4.0, config());
  EXPECT_EQ(trace.reason, Termination::AlreadyBalanced);
  EXPECT_EQ(trace.terminal_rho, 1.0);
  EXPECT_EQ(trace.steps.size(), 1u);
}

TEST(Escalate, StopsAtCapWithExactGrid) {
  // Treated events dominate; weights up to 1.2 cannot close the gap.
  const auto [pair, trace] = escalate(two_arms(0.1, 0.9, 100, 5), 0.1, 1.2, config());
  EXPECT_EQ(trace.reason, Termination::RhoCap);
  ASSERT_EQ(trace.steps.size(), 3u);
  EXPECT_EQ(trace.steps[0].rho, 1.0);
  EXPECT_EQ(trace.steps[1].rho, 1.0 + 1 * 0.1);
  EXPECT_EQ(trace.steps[2].rho, 1.0 + 2 * 0.1);
  EXPECT_EQ(trace.terminal_rho, trace.steps.back().rho);
  EXPECT_LE(trace.terminal_rho, 1.2 + 1e-12);
}

TEST(Escalate, ConvergesBelowUntreatedMean) {
  const auto recs = two_arms(0.4, 0.5, 150, 6);
  const auto [pair, trace] = escalate(recs, 0.1, 4.0, config());
  ASSERT_EQ(trace.reason, Termination::Converged);
  EXPECT_GT(trace.terminal_rho, 1.0);
  const auto& first = trace.steps.front();
  const auto& last = trace.steps.back();
  EXPECT_LE(last.w_hat_1, last.w_hat_0);
  EXPECT_LT(last.w_hat_0, first.w_hat_1);
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    EXPECT_EQ(trace.steps[k].rho, 1.0 + static_cast<double>(k) * 0.1);
    // h0 is fit once.
    EXPECT_EQ(trace.steps[k].w_hat_0, first.w_hat_0);
  }
  // The returned pair is the terminal one.
  EXPECT_EQ(pair.rho, trace.terminal_rho);
  EXPECT_EQ(pair.w_hat_1, last.w_hat_1);
}

TEST(Escalate, InvalidArguments) {
  const auto recs = two_arms(0.4, 0.5, 40, 7);
  EXPECT_THROW(escalate(recs, 0.0, 4.0, config()), Error);
  EXPECT_THROW(escalate(recs, 0.1, 1.0, config()), Error);
}

TEST(Rewards, ConstantForests) {
  CounterfactualPair pair;
  DecisionTree a;
  a.nodes.push_back(TreeNode{-1, 0.0, -1, -1, 0.3});
  DecisionTree b;
  b.nodes.push_back(TreeNode{-1, 0.0, -1, -1, 0.7});
  pair.h0 = Forest(ForestConfig{}, TrainingArm::Untreated, 2, {a});
  pair.h1 = Forest(ForestConfig{}, TrainingArm::Treated, 2, {b});
  const auto r = rewards(pair, two_arms(0.5, 0.5, 3, 8));
  ASSERT_EQ(r.size(), 6u);
  for (const auto& x : r) {
    EXPECT_DOUBLE_EQ(x.r0, 0.3);
    EXPECT_DOUBLE_EQ(x.r1, 0.7);
  }
}

TEST(Escalate, ConfoundedSyntheticCohort) {
  SynthConfig s;
  s.seed = 21;
  s.benefit_size = 0.0;
  const auto [cohort, truth] = generate(s);
  const auto [pair, trace] = escalate(cohort.records, 0.1, 4.0, config());
  EXPECT_GT(trace.steps.front().w_hat_1, trace.steps.front().w_hat_0);
  EXPECT_EQ(trace.reason, Termination::Converged);
  EXPECT_GT(trace.terminal_rho, 1.0);
}

}  // namespace
}  // namespace road
