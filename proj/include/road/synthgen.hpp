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
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "road/cohort.hpp"
#include "road/error.hpp"
#include "road/io.hpp"
#include "road/policy_tree.hpp"
#include "road/random.hpp"

namespace road {

enum class Assignment { Observational, Rct, RctImbalanced };

inline std::string to_string(Assignment a) {
  switch (a) {
    case Assignment::Rct: return "rct";
    case Assignment::RctImbalanced: return "rct-imbalanced";
    default: return "observational";
  }
}

inline Assignment parse_assignment(const std::string& text) {
  if (text == "observational") return Assignment::Observational;
  if (text == "rct") return Assignment::Rct;
  if (text == "rct-imbalanced") return Assignment::RctImbalanced;
  throw Error(ErrorCode::InvalidConfig, "unknown assignment '" + text + "'");
}

/// Benefit region used when no policy is supplied: x1 >= 0 and x2 < 0.5.
inline PolicyTree default_planted_policy(std::size_t d) {
  require(d >= 2, ErrorCode::InvalidConfig, "the default planted policy needs d >= 2");
  std::vector<PolicyNode> nodes(5);
  nodes[0].feature = 0;
  nodes[0].threshold = 0.0;
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1].treatment = 0;
  nodes[2].feature = 1;
  nodes[2].threshold = 0.5;
  nodes[2].left = 3;
  nodes[2].right = 4;
  nodes[3].treatment = 1;
  nodes[4].treatment = 0;
  return PolicyTree(std::move(nodes), d);
}

struct SynthConfig {
  std::size_t n = 2000;
  std::size_t d = 4;
  double hidden_effect = 1.0;  // outcome log-odds per unit of the hidden confounder
  Assignment assignment = Assignment::Observational;
  std::optional<PolicyTree> true_policy;  // over raw covariates; default_planted_policy(d) when unset
  double benefit_size = 0.2;  // mean absolute risk reduction among benefiting patients
  std::uint64_t seed = 0;

  double baseline_intercept = -0.6;
  std::vector<double> coefficients;  // empty: 0.8, 0.6, 0.4, 0.2, 0, ...
  double assignment_intercept = -0.4;
  double assignment_strength = 1.0;  // weight of the observed prognostic score in treatment assignment
  double hidden_assignment = 1.0;    // weight of the hidden confounder in treatment assignment
  double band_lower = 0.5;       // rct-imbalanced: observable risk (covariates only) at which the bias starts
  double band_treat_prob = 0.2;  // rct-imbalanced: treatment probability inside the band
};

struct GroundTruth {
  std::vector<double> baseline_risk;
  std::vector<double> treated_risk;
  std::vector<double> hidden;
  std::vector<int> optimal_action;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline std::vector<double> synth_coefficients(const SynthConfig& config) {
  if (!config.coefficients.empty()) {
    require(config.coefficients.size() == config.d, ErrorCode::InvalidConfig, "need one coefficient per covariate");
    return config.coefficients;
  }
  std::vector<double> beta(config.d, 0.0);
  const double defaults[] = {0.8, 0.6, 0.4, 0.2};
  for (std::size_t j = 0; j < config.d && j < 4; ++j) beta[j] = defaults[j];
  return beta;
}

inline void check_config(const SynthConfig& config) {
  require(config.n >= 50, ErrorCode::InvalidConfig, "n must be >= 50");
  require(config.d >= 1, ErrorCode::InvalidConfig, "d must be >= 1");
  require(config.benefit_size >= 0.0 && config.benefit_size < 1.0, ErrorCode::InvalidConfig,
          "benefit_size must lie in [0, 1)");
  require(config.hidden_effect >= 0.0, ErrorCode::InvalidConfig, "hidden_effect must be >= 0");
  require(config.band_treat_prob > 0.0 && config.band_treat_prob < 1.0, ErrorCode::InvalidConfig,
          "band_treat_prob must lie in (0, 1)");
  if (config.true_policy) {
    require(config.true_policy->n_features() == config.d, ErrorCode::InvalidConfig, "planted policy dimension differs from d");
  }
}

inline std::string patient_id(std::size_t i, std::size_t n, const std::string& prefix) {
  const auto width = std::to_string(n).size();
  auto digits = std::to_string(i + 1);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

// Logit shift applied to benefiting patients, chosen so that their mean absolute
// risk reduction equals benefit_size. Calibrated on a fixed reference sample so
// every cohort drawn from one config shares the same outcome model.
inline double benefit_shift(const SynthConfig& config, const std::vector<double>& beta, const PolicyTree& policy) {
  if (config.benefit_size == 0.0) return 0.0;
  constexpr std::size_t kReference = 20000;
  Rng rng(derive_seed(0x524f4144ULL, "synth-calibration"));
  std::vector<double> logits;
  std::vector<double> x(config.d);
  for (std::size_t i = 0; i < kReference; ++i) {
    double z = config.baseline_intercept;
    for (std::size_t j = 0; j < config.d; ++j) {
      x[j] = standard_normal(rng);
      z += beta[j] * x[j];
    }
    z += config.hidden_effect * standard_normal(rng);
    if (policy.prescribe(x) == 1) logits.push_back(z);
  }
  require(!logits.empty(), ErrorCode::InvalidConfig, "planted policy treats nobody");
  const auto reduction = [&](double s) {
    double sum = 0.0;
    for (double z : logits) sum += sigmoid(z) - sigmoid(z - s);
    return sum / static_cast<double>(logits.size());
  };
  double lo = 0.0;
  double hi = 50.0;
  require(reduction(hi) > config.benefit_size, ErrorCode::InvalidConfig,
          "benefit_size exceeds the benefiting subgroup's mean baseline risk");
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (reduction(mid) < config.benefit_size ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Draws {
  Cohort cohort;
  GroundTruth truth;
};

// Covariates, hidden confounder and both potential risks, no treatment yet.
inline Draws draw_patients(const SynthConfig& config, std::size_t n, std::uint64_t seed, const std::string& prefix) {
  const auto beta = synth_coefficients(config);
  const auto policy = config.true_policy ? *config.true_policy : default_planted_policy(config.d);
  const double shift = benefit_shift(config, beta, policy);
  Rng rng(seed);
  Draws out;
  for (std::size_t j = 0; j < config.d; ++j) {
    out.cohort.schema.push_back({"x" + std::to_string(j + 1), CovariateKind::Continuous, "x" + std::to_string(j + 1), std::nullopt});
  }
  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord rec;
    rec.id = patient_id(i, n, prefix);
    rec.covariates.resize(config.d);
    double z = config.baseline_intercept;
    for (std::size_t j = 0; j < config.d; ++j) {
      rec.covariates[j] = standard_normal(rng);
      z += beta[j] * rec.covariates[j];
    }
    const double u = standard_normal(rng);
    z += config.hidden_effect * u;
    const double base = sigmoid(z);
    const bool benefits = policy.prescribe(rec.covariates) == 1;
    const double treated = benefits ? sigmoid(z - shift) : base;
    out.truth.baseline_risk.push_back(base);
    out.truth.treated_risk.push_back(treated);
    out.truth.hidden.push_back(u);
    out.truth.optimal_action.push_back(treated < base ? 1 : 0);
    out.cohort.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// Synthetic cohort with a logistic outcome model over the observed
/// covariates, a hidden confounder and a treatment effect confined to the
/// planted policy's treat-leaves. Under observational assignment the hidden
/// confounder pushes patients towards treatment, so treated patients carry a
/// worse unobserved prognosis.
inline std::pair<Cohort, GroundTruth> generate(const SynthConfig& config) {
  detail::check_config(config);
  auto draws = detail::draw_patients(config, config.n, derive_seed(config.seed, "synth-patients"), "p");
  const auto beta = detail::synth_coefficients(config);
  Rng assign_rng(derive_seed(config.seed, "synth-assignment"));
  Rng outcome_rng(derive_seed(config.seed, "synth-outcome"));
  for (std::size_t i = 0; i < config.n; ++i) {
    auto& rec = draws.cohort.records[i];
    double p_treat = 0.5;
    double z = 0.0;
    for (std::size_t j = 0; j < config.d; ++j) z += beta[j] * rec.covariates[j];
    if (config.assignment == Assignment::Observational) {
      p_treat = detail::sigmoid(config.assignment_intercept + config.assignment_strength * z +
                                config.hidden_assignment * draws.truth.hidden[i]);
    } else if (config.assignment == Assignment::RctImbalanced &&
               detail::sigmoid(config.baseline_intercept + z) >= config.band_lower) {
      p_treat = config.band_treat_prob;
    }
    rec.treatment = bernoulli(assign_rng, p_treat) ? 1 : 0;
    const double risk = rec.treatment == 1 ? draws.truth.treated_risk[i] : draws.truth.baseline_risk[i];
    rec.outcome = bernoulli(outcome_rng, risk) ? 1 : 0;
  }
  return {std::move(draws.cohort), std::move(draws.truth)};
}

/// External cohort from the same population in which nobody was treated.
inline std::pair<Cohort, GroundTruth> generate_untreated(const SynthConfig& config, std::size_t n, std::uint64_t seed) {
  detail::check_config(config);
  auto draws = detail::draw_patients(config, n, derive_seed(seed, "synth-external"), "e");
  Rng outcome_rng(derive_seed(seed, "synth-external-outcome"));
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = draws.cohort.records[i];
    rec.treatment = 0;
    rec.outcome = bernoulli(outcome_rng, draws.truth.baseline_risk[i]) ? 1 : 0;
  }
  return {std::move(draws.cohort), std::move(draws.truth)};
}

/// Fraction of patients whose prescription equals the true optimal action.
inline double policy_agreement(const PolicyTree& tree, const GroundTruth& truth, const Cohort& cohort) {
  require(truth.optimal_action.size() == cohort.size(), ErrorCode::DimensionMismatch, "truth/cohort size mismatch");
  if (cohort.size() == 0) return 0.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    agree += tree.prescribe(cohort.records[i].covariates) == truth.optimal_action[i] ? 1 : 0;
  }
  return static_cast<double>(agree) / static_cast<double>(cohort.size());
}

/// CSV in the layout load_cohort reads: id, covariates, treatment, outcome.
inline std::string cohort_to_csv(const Cohort& cohort) {
  std::ostringstream out;
  out << "id";
  for (const auto& f : cohort.schema) out << ',' << io::csv_escape(f.name);
  out << ",treatment,outcome\n";
  for (const auto& rec : cohort.records) {
    out << io::csv_escape(rec.id);
    for (double v : rec.covariates) out << ',' << io::format_double(v);
    out << ',' << rec.treatment << ',' << rec.outcome << '\n';
  }
  return out.str();
}

inline std::string truth_to_csv(const Cohort& cohort, const GroundTruth& truth) {
  std::ostringstream out;
  out << "id,baseline_risk,treated_risk,hidden,optimal_action\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    out << io::csv_escape(cohort.records[i].id) << ',' << io::format_double(truth.baseline_risk[i]) << ','
        << io::format_double(truth.treated_risk[i]) << ',' << io::format_double(truth.hidden[i]) << ','
        << truth.optimal_action[i] << '\n';
  }
  return out.str();
}

inline GroundTruth truth_from_csv(const io::CsvTable& table) {
  GroundTruth truth;
  const auto col = [&](const char* name) {
    auto c = table.column(name);
    if (!c) throw Error(ErrorCode::MissingColumn, std::string("truth file lacks column '") + name + "'");
    return *c;
  };
  const auto b = col("baseline_risk");
  const auto t = col("treated_risk");
  const auto h = col("hidden");
  const auto a = col("optimal_action");
  for (const auto& row : table.rows) {
    auto parse = [&](std::size_t c) {
      auto v = io::parse_double(row[c]);
      if (!v) throw Error(ErrorCode::BadValue, "bad number '" + row[c] + "' in truth file");
      return *v;
    };
    truth.baseline_risk.push_back(parse(b));
    truth.treated_risk.push_back(parse(t));
    truth.hidden.push_back(parse(h));
    truth.optimal_action.push_back(parse(a) == 1.0 ? 1 : 0);
  }
  return truth;
}

/// Column mapping matching cohort_to_csv output for d continuous covariates.
inline ColumnMapping synthetic_mapping(std::size_t d) {
  ColumnMapping mapping;
  mapping.id_column = "id";
  for (std::size_t j = 0; j < d; ++j) mapping.covariates.push_back({"x" + std::to_string(j + 1), SourceKind::Continuous});
  return mapping;
}

}  // namespace road
