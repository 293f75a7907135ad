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
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "road/cohort.hpp"
#include "road/error.hpp"
#include "road/matrix.hpp"

namespace road {

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Shortest augmenting paths with dual potentials; rows are inserted in index
/// order and ties pick the lowest column, so the result is deterministic.
/// Returns the column assigned to each row.
inline std::vector<int> min_cost_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  require(n <= m, ErrorCode::InvalidArgument, "assignment needs rows <= cols");
  if (n == 0) return {};
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based with a virtual column 0 holding the row being inserted.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> min_slack(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (reduced < min_slack[j]) {
          min_slack[j] = reduced;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) assignment[owner[j] - 1] = static_cast<int>(j - 1);
  }
  return assignment;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimensionMismatch, "covariate length mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += (a[k] - b[k]) * (a[k] - b[k]);
  return sum;
}

struct MatchPlan {
  int bucket = 0;
  int minority_arm = 1;  // treatment value of the fully matched arm
  std::vector<std::pair<std::string, std::string>> pairs;  // (minority id, majority id)
  double objective = 0.0;  // total squared distance
};

/// Pairs every minority record with a distinct majority record so that the
/// total squared covariate distance is minimal. Records are ordered by id first.
inline MatchPlan match_bucket(std::vector<PatientRecord> minority, std::vector<PatientRecord> majority) {
  require(!minority.empty() && !majority.empty(), ErrorCode::EmptyArm, "both arms must be nonempty");
  require(minority.size() <= majority.size(), ErrorCode::InvalidArgument, "minority arm larger than majority arm");
  auto by_id = [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; };
  std::sort(minority.begin(), minority.end(), by_id);
  std::sort(majority.begin(), majority.end(), by_id);
  Matrix cost(minority.size(), majority.size());
  for (std::size_t i = 0; i < minority.size(); ++i) {
    for (std::size_t j = 0; j < majority.size(); ++j) {
      cost(i, j) = squared_distance(minority[i].covariates, majority[j].covariates);
    }
  }
  const auto assignment = min_cost_assignment(cost);
  MatchPlan plan;
  plan.minority_arm = minority.front().treatment;
  for (std::size_t i = 0; i < minority.size(); ++i) {
    plan.pairs.emplace_back(minority[i].id, majority[assignment[i]].id);
    plan.objective += cost(i, assignment[i]);
  }
  return plan;
}

struct MatchedCohort {
  std::vector<PatientRecord> records;  // retained, in input order
  std::vector<int> buckets;            // aligned with records
  std::vector<MatchPlan> plans;
  std::vector<std::string> warnings;

  std::size_t size() const { return records.size(); }
  std::size_t arm_count(int arm) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const PatientRecord& r) { return r.treatment == arm; }));
  }
};

/// Matches within each bucket; the smaller arm (treated on a tie) is matched
/// in full and only matched patients are retained. Buckets missing an arm are
/// dropped with a warning.
inline MatchedCohort match_cohort(const std::vector<PatientRecord>& records, std::span<const int> buckets) {
  require(records.size() == buckets.size(), ErrorCode::DimensionMismatch, "record/bucket length mismatch");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) members[buckets[i]].push_back(i);

  MatchedCohort out;
  std::set<std::string> keep;
  for (const auto& [bucket, idx] : members) {
    std::vector<PatientRecord> arm[2];
    for (auto i : idx) arm[records[i].treatment].push_back(records[i]);
    if (arm[0].empty() || arm[1].empty()) {
      out.warnings.push_back("bucket " + std::to_string(bucket) + " dropped: no " +
                             (arm[0].empty() ? "untreated" : "treated") + " patients");
      continue;
    }
    const int minority = arm[1].size() <= arm[0].size() ? 1 : 0;
    auto plan = match_bucket(arm[minority], arm[1 - minority]);
    plan.bucket = bucket;
    for (const auto& [a, b] : plan.pairs) {
      keep.insert(a);
      keep.insert(b);
    }
    out.plans.push_back(std::move(plan));
  }
  require(!out.plans.empty(), ErrorCode::NoMatchableBucket, "no bucket contains both arms");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep.count(records[i].id)) {
      out.records.push_back(records[i]);
      out.buckets.push_back(buckets[i]);
    }
  }
  return out;
}

inline nlohmann::json matches_to_json(const MatchedCohort& matched) {
  nlohmann::json plans = nlohmann::json::array();
  for (const auto& p : matched.plans) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [a, b] : p.pairs) pairs.push_back({a, b});
    plans.push_back({{"bucket", p.bucket},
                     {"minority_arm", p.minority_arm == 1 ? "treated" : "untreated"},
                     {"pairs", pairs},
                     {"objective", p.objective}});
  }
  return {{"plans", plans},
          {"warnings", matched.warnings},
          {"n_s", matched.size()},
          {"n_untreated", matched.arm_count(0)},
          {"n_treated", matched.arm_count(1)}};
}

}  // namespace road
