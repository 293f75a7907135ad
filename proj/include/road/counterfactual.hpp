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

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "road/cohort.hpp"
#include "road/error.hpp"
#include "road/io.hpp"
#include "road/matcher.hpp"
#include "road/risk_forest.hpp"

namespace road {

/// Outcome models under each action plus the treated-arm weight they were fit with.
struct CounterfactualPair {
  Forest h0;
  Forest h1;
  double rho = 1.0;
  double w_hat_0 = 0.0;  // mean h0 over the training patients
  double w_hat_1 = 0.0;  // mean h1 over the training patients

  /// Lower bound on the unobserved-confounding bias in the treated arm.
  double gap() const { return w_hat_1 - w_hat_0; }
};

struct Reward {
  double r0 = 0.0;  // event probability without treatment
  double r1 = 0.0;  // event probability with treatment
};

namespace detail {

struct ArmData {
  Matrix x;
  std::vector<int> y;
};

inline ArmData arm_data(const std::vector<PatientRecord>& records, int arm) {
  std::vector<PatientRecord> subset;
  for (const auto& r : records) {
    if (r.treatment == arm) subset.push_back(r);
  }
  return {feature_matrix(subset), outcomes(subset)};
}

inline Forest fit_arm(const ArmData& data, int arm, double rho, const ForestConfig& config) {
  const char* name = arm == 1 ? "treated" : "untreated";
  bool has0 = false;
  bool has1 = false;
  for (int y : data.y) {
    has0 = has0 || y == 0;
    has1 = has1 || y == 1;
  }
  require(has0 && has1, ErrorCode::SingleClass, std::string("matched ") + name + " arm has a single outcome class");
  ForestConfig arm_config = config;
  arm_config.seed = derive_seed(config.seed, arm == 1 ? "h1" : "h0");
  // rho multiplies the treated patients without an event; everyone else weighs 1.
  std::vector<double> weights(data.y.size(), 1.0);
  if (arm == 1) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (data.y[i] == 0) weights[i] = rho;
    }
  }
  return train_forest(data.x, data.y, weights, arm_config, arm == 1 ? TrainingArm::Treated : TrainingArm::Untreated);
}

inline double mean_prediction(const Forest& forest, const Matrix& x) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) sum += forest.predict_proba(x.row(i));
  return sum / static_cast<double>(x.rows());
}

}  // namespace detail

/// h0 on the untreated arm with unit weights; h1 on the treated arm with weight
/// rho on treated patients without an event. Both means run over all records.
inline CounterfactualPair train_pair(const std::vector<PatientRecord>& records, double rho, const ForestConfig& config) {
  require(rho >= 1.0, ErrorCode::InvalidArgument, "rho must be >= 1");
  require(!records.empty(), ErrorCode::EmptyArm, "no training records");
  const auto all = feature_matrix(records);
  CounterfactualPair pair;
  pair.rho = rho;
  pair.h0 = detail::fit_arm(detail::arm_data(records, 0), 0, 1.0, config);
  pair.h1 = detail::fit_arm(detail::arm_data(records, 1), 1, rho, config);
  pair.w_hat_0 = detail::mean_prediction(pair.h0, all);
  pair.w_hat_1 = detail::mean_prediction(pair.h1, all);
  return pair;
}

inline CounterfactualPair train_pair(const MatchedCohort& matched, double rho, const ForestConfig& config) {
  return train_pair(matched.records, rho, config);
}

enum class Termination { Converged, RhoCap, AlreadyBalanced };

inline std::string to_string(Termination reason) {
  switch (reason) {
    case Termination::Converged: return "converged";
    case Termination::RhoCap: return "rho_cap";
    default: return "already_balanced";
  }
}

struct EscalationStep {
  double rho = 1.0;
  double w_hat_0 = 0.0;
  double w_hat_1 = 0.0;
};

struct EscalationTrace {
  std::vector<EscalationStep> steps;
  double terminal_rho = 1.0;
  Termination reason = Termination::AlreadyBalanced;
};

/// Raises rho from 1 in steps of epsilon, refitting h1 each time, until the
/// treated mean risk no longer exceeds the untreated one or rho would pass rho_cap.
inline std::pair<CounterfactualPair, EscalationTrace> escalate(const std::vector<PatientRecord>& records,
                                                               double epsilon, double rho_cap,
                                                               const ForestConfig& config) {
  require(epsilon > 0.0, ErrorCode::InvalidArgument, "epsilon must be > 0");
  require(rho_cap > 1.0, ErrorCode::InvalidArgument, "rho_cap must be > 1");
  const auto all = feature_matrix(records);
  const auto treated = detail::arm_data(records, 1);

  CounterfactualPair pair = train_pair(records, 1.0, config);
  EscalationTrace trace;
  trace.steps.push_back({1.0, pair.w_hat_0, pair.w_hat_1});
  if (pair.w_hat_1 <= pair.w_hat_0) {
    trace.reason = Termination::AlreadyBalanced;
    return {std::move(pair), std::move(trace)};
  }
  for (int k = 1;; ++k) {
    // 1 + k*eps rather than repeated addition keeps the grid exact.
    const double rho = 1.0 + k * epsilon;
    if (rho > rho_cap * (1.0 + 1e-12)) {
      trace.reason = Termination::RhoCap;
      break;
    }
    pair.h1 = detail::fit_arm(treated, 1, rho, config);
    pair.rho = rho;
    pair.w_hat_1 = detail::mean_prediction(pair.h1, all);
    trace.steps.push_back({rho, pair.w_hat_0, pair.w_hat_1});
    if (pair.w_hat_1 <= pair.w_hat_0) {
      trace.reason = Termination::Converged;
      break;
    }
  }
  trace.terminal_rho = pair.rho;
  return {std::move(pair), std::move(trace)};
}

inline std::pair<CounterfactualPair, EscalationTrace> escalate(const MatchedCohort& matched, double epsilon,
                                                               double rho_cap, const ForestConfig& config) {
  return escalate(matched.records, epsilon, rho_cap, config);
}

inline std::vector<Reward> rewards(const CounterfactualPair& pair, const std::vector<PatientRecord>& records) {
  std::vector<Reward> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({pair.h0.predict_proba(r.covariates), pair.h1.predict_proba(r.covariates)});
  return out;
}

inline std::string trace_to_csv(const EscalationTrace& trace) {
  std::ostringstream out;
  out << "rho,w_hat_0,w_hat_1\n";
  for (const auto& s : trace.steps) {
    out << io::format_double(s.rho) << ',' << io::format_double(s.w_hat_0) << ',' << io::format_double(s.w_hat_1)
        << '\n';
  }
  return out.str();
}

inline nlohmann::json trace_to_json(const EscalationTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) steps.push_back({{"rho", s.rho}, {"w_hat_0", s.w_hat_0}, {"w_hat_1", s.w_hat_1}});
  return {{"steps", steps}, {"terminal_rho", trace.terminal_rho}, {"reason", to_string(trace.reason)}};
}

}  // namespace road
