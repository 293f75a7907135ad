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
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "road/error.hpp"
#include "road/io.hpp"
#include "road/matrix.hpp"
#include "road/random.hpp"

namespace road {

enum class CovariateKind { Continuous, Binary };

/// One encoded covariate column. Categorical source columns expand into one
/// Binary feature per category, named "column=category".
struct Feature {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  std::string source_column;
  std::optional<std::string> category;
};

struct PatientRecord {
  std::string id;
  std::vector<double> covariates;
  int treatment = 0;
  int outcome = 0;
};

struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct Cohort {
  std::vector<Feature> schema;
  std::vector<PatientRecord> records;
  // Aligned with schema when present; Binary columns carry (0, 1).
  std::optional<std::vector<ColumnStats>> normalization;

  std::size_t size() const { return records.size(); }
  std::size_t dimension() const { return schema.size(); }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names;
    names.reserve(schema.size());
    for (const auto& f : schema) names.push_back(f.name);
    return names;
  }
};

enum class SourceKind { Continuous, Binary, Categorical };

struct ColumnSpec {
  std::string name;
  SourceKind kind = SourceKind::Continuous;
};

/// Which CSV columns feed the cohort. An empty id_column numbers rows.
struct ColumnMapping {
  std::string id_column;
  std::string treatment_column = "treatment";
  std::string outcome_column = "outcome";
  std::vector<ColumnSpec> covariates;
};

inline SourceKind parse_source_kind(const std::string& text) {
  if (text == "continuous") return SourceKind::Continuous;
  if (text == "binary") return SourceKind::Binary;
  if (text == "categorical") return SourceKind::Categorical;
  throw Error(ErrorCode::InvalidConfig, "unknown covariate kind '" + text + "'");
}

namespace detail {

inline int parse_flag(const std::string& cell, const std::string& column, std::size_t row) {
  auto value = io::parse_double(cell);
  if (!value || (*value != 0.0 && *value != 1.0)) {
    throw Error(ErrorCode::BadValue, "column '" + column + "' row " + std::to_string(row + 1) +
                                         ": expected 0 or 1, got '" + cell + "'");
  }
  return *value == 1.0 ? 1 : 0;
}

inline double parse_covariate(const std::string& cell, const std::string& column, std::size_t row) {
  auto value = io::parse_double(cell);
  if (!value || !std::isfinite(*value)) {
    throw Error(ErrorCode::BadValue, "column '" + column + "' row " + std::to_string(row + 1) +
                                         ": not a finite number: '" + cell + "'");
  }
  return *value;
}

}  // namespace detail

/// Builds a cohort from a parsed table. When `reference` is given the encoded
/// schema (including category sets) is taken from it, so an external cohort
/// lines up column-for-column with the training cohort.
inline Cohort load_cohort(const io::CsvTable& table, const ColumnMapping& mapping,
                          const std::vector<Feature>* reference = nullptr) {
  require(!mapping.covariates.empty(), ErrorCode::InvalidConfig, "schema names no covariates");
  auto locate = [&](const std::string& name) {
    auto col = table.column(name);
    if (!col) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not in header");
    return *col;
  };
  const std::size_t t_col = locate(mapping.treatment_column);
  const std::size_t y_col = locate(mapping.outcome_column);
  std::optional<std::size_t> id_col;
  if (!mapping.id_column.empty()) id_col = locate(mapping.id_column);
  std::vector<std::size_t> cov_cols;
  for (const auto& spec : mapping.covariates) cov_cols.push_back(locate(spec.name));

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      const bool used = c == t_col || c == y_col || (id_col && c == *id_col) ||
                        std::find(cov_cols.begin(), cov_cols.end(), c) != cov_cols.end();
      if (used && table.rows[r][c].empty()) {
        throw Error(ErrorCode::BadValue, "empty cell in column '" + table.header[c] + "' row " +
                                             std::to_string(r + 1));
      }
    }
  }

  Cohort cohort;
  if (reference) {
    cohort.schema = *reference;
  } else {
    for (std::size_t k = 0; k < mapping.covariates.size(); ++k) {
      const auto& spec = mapping.covariates[k];
      if (spec.kind == SourceKind::Categorical) {
        std::set<std::string> categories;
        for (const auto& row : table.rows) categories.insert(row[cov_cols[k]]);
        for (const auto& cat : categories) {
          cohort.schema.push_back({spec.name + "=" + cat, CovariateKind::Binary, spec.name, cat});
        }
      } else {
        const auto kind = spec.kind == SourceKind::Binary ? CovariateKind::Binary : CovariateKind::Continuous;
        cohort.schema.push_back({spec.name, kind, spec.name, std::nullopt});
      }
    }
  }

  std::map<std::string, std::size_t> column_of_source;
  for (std::size_t k = 0; k < mapping.covariates.size(); ++k) column_of_source[mapping.covariates[k].name] = cov_cols[k];
  for (const auto& f : cohort.schema) {
    if (!column_of_source.count(f.source_column)) {
      throw Error(ErrorCode::MissingColumn, "reference schema column '" + f.source_column + "' not mapped");
    }
  }

  cohort.records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    PatientRecord rec;
    rec.id = id_col ? row[*id_col] : "row-" + std::to_string(r + 1);
    rec.treatment = detail::parse_flag(row[t_col], mapping.treatment_column, r);
    rec.outcome = detail::parse_flag(row[y_col], mapping.outcome_column, r);
    rec.covariates.reserve(cohort.schema.size());
    for (const auto& f : cohort.schema) {
      const auto& cell = row[column_of_source[f.source_column]];
      if (f.category) {
        rec.covariates.push_back(cell == *f.category ? 1.0 : 0.0);
      } else if (f.kind == CovariateKind::Binary) {
        rec.covariates.push_back(detail::parse_flag(cell, f.source_column, r));
      } else {
        rec.covariates.push_back(detail::parse_covariate(cell, f.source_column, r));
      }
    }
    if (reference) {
      // Every categorical value must be one of the reference categories.
      std::set<std::string> seen;
      for (const auto& f : cohort.schema) {
        if (!f.category || seen.count(f.source_column)) continue;
        seen.insert(f.source_column);
        const auto& cell = row[column_of_source[f.source_column]];
        bool known = false;
        for (const auto& g : cohort.schema) known = known || (g.source_column == f.source_column && g.category == cell);
        if (!known) {
          throw Error(ErrorCode::BadValue, "column '" + f.source_column + "' row " + std::to_string(r + 1) +
                                               ": unknown category '" + cell + "'");
        }
      }
    }
    cohort.records.push_back(std::move(rec));
  }
  return cohort;
}

inline Cohort load_cohort(std::istream& source, const ColumnMapping& mapping,
                          const std::vector<Feature>* reference = nullptr) {
  return load_cohort(io::read_csv(source), mapping, reference);
}

inline Cohort load_cohort_file(const std::string& path, const ColumnMapping& mapping,
                               const std::vector<Feature>* reference = nullptr) {
  return load_cohort(io::read_csv_file(path), mapping, reference);
}

/// Standardizes with stored statistics: (x - mean) / stddev on Continuous columns.
inline Cohort apply_normalization(const Cohort& cohort, const std::vector<ColumnStats>& stats) {
  require(stats.size() == cohort.dimension(), ErrorCode::DimensionMismatch,
          "normalization has " + std::to_string(stats.size()) + " columns, cohort has " +
              std::to_string(cohort.dimension()));
  Cohort out = cohort;
  for (auto& rec : out.records) {
    for (std::size_t j = 0; j < stats.size(); ++j) {
      if (cohort.schema[j].kind != CovariateKind::Continuous) continue;
      rec.covariates[j] = (rec.covariates[j] - stats[j].mean) / stats[j].stddev;
    }
  }
  out.normalization = stats;
  return out;
}

/// Population statistics per Continuous column; a constant column records stddev 1.
inline std::vector<ColumnStats> compute_normalization(const Cohort& cohort) {
  require(cohort.size() >= 2, ErrorCode::DegenerateCohort,
          "normalization needs at least 2 records, got " + std::to_string(cohort.size()));
  const auto n = static_cast<double>(cohort.size());
  std::vector<ColumnStats> stats(cohort.dimension());
  for (std::size_t j = 0; j < cohort.dimension(); ++j) {
    if (cohort.schema[j].kind != CovariateKind::Continuous) continue;
    double sum = 0.0;
    for (const auto& rec : cohort.records) sum += rec.covariates[j];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& rec : cohort.records) ss += (rec.covariates[j] - mean) * (rec.covariates[j] - mean);
    const double sd = std::sqrt(ss / n);
    stats[j] = {mean, sd > 0.0 ? sd : 1.0};
  }
  return stats;
}

inline Cohort normalize(const Cohort& cohort) {
  return apply_normalization(cohort, compute_normalization(cohort));
}

/// Stratified on (treatment, outcome). Returns (training, validation).
inline std::pair<Cohort, Cohort> split(const Cohort& cohort, double validation_fraction, std::uint64_t seed) {
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::InvalidArgument,
          "validation fraction must lie in (0, 1)");
  require(cohort.size() > 0, ErrorCode::EmptyStratum, "cannot split an empty cohort");
  std::vector<std::size_t> cells[4];
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& rec = cohort.records[i];
    cells[rec.treatment * 2 + rec.outcome].push_back(i);
  }
  std::vector<char> to_validation(cohort.size(), 0);
  for (int c = 0; c < 4; ++c) {
    auto& idx = cells[c];
    if (idx.empty()) continue;
    Rng rng(derive_seed(seed, "split-cell-" + std::to_string(c)));
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    }
    const auto take = static_cast<std::size_t>(std::floor(validation_fraction * idx.size() + 0.5));
    for (std::size_t k = 0; k < take; ++k) to_validation[idx[k]] = 1;
  }
  Cohort train{cohort.schema, {}, cohort.normalization};
  Cohort valid{cohort.schema, {}, cohort.normalization};
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    (to_validation[i] ? valid : train).records.push_back(cohort.records[i]);
  }
  return {std::move(train), std::move(valid)};
}

/// {covariate -> {mean, std}} for Continuous columns.
inline nlohmann::json normalization_to_json(const std::vector<Feature>& schema, const std::vector<ColumnStats>& stats) {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].kind != CovariateKind::Continuous) continue;
    doc[schema[j].name] = {{"mean", stats[j].mean}, {"std", stats[j].stddev}};
  }
  return doc;
}

inline std::vector<ColumnStats> normalization_from_json(const std::vector<Feature>& schema, const nlohmann::json& doc) {
  std::vector<ColumnStats> stats(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].kind != CovariateKind::Continuous) continue;
    if (!doc.contains(schema[j].name)) {
      throw Error(ErrorCode::MissingColumn, "normalization has no entry for '" + schema[j].name + "'");
    }
    const auto& entry = doc.at(schema[j].name);
    stats[j] = {entry.at("mean").get<double>(), entry.at("std").get<double>()};
  }
  return stats;
}

inline Matrix feature_matrix(const std::vector<PatientRecord>& records) {
  if (records.empty()) return {};
  Matrix x(records.size(), records.front().covariates.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(records[i].covariates.size() == x.cols(), ErrorCode::DimensionMismatch,
            "record '" + records[i].id + "' has the wrong covariate count");
    std::copy(records[i].covariates.begin(), records[i].covariates.end(), x.row(i).begin());
  }
  return x;
}

inline std::vector<int> outcomes(const std::vector<PatientRecord>& records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.outcome);
  return y;
}

}  // namespace road
