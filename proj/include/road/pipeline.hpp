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

// Staged orchestration. Every stage reads the interchange files written by
// the stages before it from the output directory and writes its own, so
// running the stages one by one is equivalent to a single run().

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "road/cohort.hpp"
#include "road/counterfactual.hpp"
#include "road/error.hpp"
#include "road/evaluate.hpp"
#include "road/io.hpp"
#include "road/matcher.hpp"
#include "road/policy_tree.hpp"
#include "road/random.hpp"
#include "road/risk_forest.hpp"
#include "road/strata.hpp"

namespace road {

enum class Mode { Observational, Rct };

inline std::string to_string(Mode mode) { return mode == Mode::Rct ? "rct" : "observational"; }

inline Mode parse_mode(const std::string& text) {
  if (text == "observational") return Mode::Observational;
  if (text == "rct") return Mode::Rct;
  throw Error(ErrorCode::InvalidConfig, "unknown mode '" + text + "'");
}

struct RunConfig {
  std::string cohort_path;
  std::string external_path;  // empty: hold out part of the cohort instead
  ColumnMapping mapping;      // no covariates listed: every other column, continuous
  Mode mode = Mode::Observational;
  std::string bucket_preset = "deciles";
  std::vector<double> bucket_edges;  // overrides the preset when non-empty
  double imbalance_threshold = 1.5;
  bool matching = true;
  double epsilon = 0.1;
  double rho_cap = 4.0;
  std::vector<double> rho_grid{1.0, 1.5, 2.0, 2.5, 3.0};
  ForestConfig risk_forest;
  ForestConfig counterfactual_forest;
  TreeConfig tree;
  std::vector<TreeConfig> tree_grid;
  SelectionRule selection;
  double validation_fraction = 0.3;
  bool normalize = true;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "road-out";

  BucketSpec buckets() const { return bucket_edges.empty() ? road::bucket_preset(bucket_preset) : BucketSpec(bucket_edges); }
};

/// Error raised inside a pipeline stage; stage() names it ("load" for input problems).
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), std::string(cause.what()).substr(to_string(cause.code()).size() + 2)),
        stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------- config

namespace detail {

using nlohmann::json;

inline void check_keys(const json& doc, const std::string& where, std::initializer_list<const char*> allowed) {
  require(doc.is_object(), ErrorCode::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const json& doc, const char* key, const std::string& where, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad value for '") + key + "' in " + where);
  }
}

inline ForestConfig forest_from_json(const json& doc, const std::string& where) {
  check_keys(doc, where, {"n_trees", "max_depth", "min_leaf", "features_per_split"});
  ForestConfig c;
  c.n_trees = get_as(doc, "n_trees", where, c.n_trees);
  c.max_depth = get_as(doc, "max_depth", where, c.max_depth);
  c.min_leaf = get_as(doc, "min_leaf", where, c.min_leaf);
  if (doc.contains("features_per_split") && !(doc["features_per_split"].is_string() && doc["features_per_split"] == "sqrt")) {
    c.features_per_split = get_as(doc, "features_per_split", where, 0);
  }
  require(c.n_trees >= 1 && c.max_depth >= 1 && c.min_leaf >= 1, ErrorCode::InvalidConfig,
          where + ": n_trees, max_depth and min_leaf must be >= 1");
  require(!c.features_per_split || *c.features_per_split >= 1, ErrorCode::InvalidConfig,
          where + ": features_per_split must be >= 1");
  return c;
}

inline json forest_to_json_config(const ForestConfig& c) {
  json doc = {{"n_trees", c.n_trees}, {"max_depth", c.max_depth}, {"min_leaf", c.min_leaf}};
  doc["features_per_split"] = c.features_per_split ? json(*c.features_per_split) : json("sqrt");
  return doc;
}

inline TreeConfig tree_from_json(const json& doc, const std::string& where) {
  check_keys(doc, where, {"max_depth", "minbucket", "max_thresholds"});
  TreeConfig c;
  c.max_depth = get_as(doc, "max_depth", where, c.max_depth);
  c.minbucket = get_as(doc, "minbucket", where, c.minbucket);
  c.max_thresholds = get_as(doc, "max_thresholds", where, c.max_thresholds);
  require(c.max_depth >= 1 && c.minbucket >= 1 && c.max_thresholds >= 0, ErrorCode::InvalidConfig,
          where + ": max_depth and minbucket must be >= 1");
  return c;
}

inline json tree_to_json_config(const TreeConfig& c) {
  return {{"max_depth", c.max_depth}, {"minbucket", c.minbucket}, {"max_thresholds", c.max_thresholds}};
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  return p.is_absolute() || base.empty() ? p.string() : (base / p).string();
}

}  // namespace detail

/// Parses a config document. Relative input paths resolve against base_dir.
inline RunConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  using detail::get_as;
  detail::check_keys(doc, "config",
                     {"input", "schema", "mode", "buckets", "imbalance_threshold", "matching", "epsilon", "rho_cap",
                      "rho_grid", "risk_forest", "counterfactual_forest", "policy_tree", "tree_grid", "selection",
                      "validation_fraction", "normalize", "seed", "threads", "output_dir"});
  RunConfig c;
  if (doc.contains("input")) {
    const auto& in = doc["input"];
    detail::check_keys(in, "input", {"cohort", "external"});
    c.cohort_path = detail::resolve(get_as<std::string>(in, "cohort", "input", ""), base_dir);
    c.external_path = detail::resolve(get_as<std::string>(in, "external", "input", ""), base_dir);
  }
  if (doc.contains("schema")) {
    const auto& s = doc["schema"];
    detail::check_keys(s, "schema", {"id", "treatment", "outcome", "covariates"});
    c.mapping.id_column = get_as<std::string>(s, "id", "schema", "");
    c.mapping.treatment_column = get_as<std::string>(s, "treatment", "schema", c.mapping.treatment_column);
    c.mapping.outcome_column = get_as<std::string>(s, "outcome", "schema", c.mapping.outcome_column);
    if (s.contains("covariates")) {
      require(s["covariates"].is_array(), ErrorCode::InvalidConfig, "schema.covariates must be an array");
      for (const auto& col : s["covariates"]) {
        if (col.is_string()) {
          c.mapping.covariates.push_back({col.get<std::string>(), SourceKind::Continuous});
          continue;
        }
        detail::check_keys(col, "schema.covariates[]", {"name", "kind"});
        c.mapping.covariates.push_back({get_as<std::string>(col, "name", "schema.covariates[]", ""),
                                        parse_source_kind(get_as<std::string>(col, "kind", "schema.covariates[]", "continuous"))});
      }
    }
  }
  c.mode = parse_mode(get_as<std::string>(doc, "mode", "config", "observational"));
  if (doc.contains("buckets")) {
    if (doc["buckets"].is_string()) {
      c.bucket_preset = doc["buckets"].get<std::string>();
    } else {
      c.bucket_edges = get_as<std::vector<double>>(doc, "buckets", "config", {});
    }
    (void)c.buckets();  // validates
  }
  c.imbalance_threshold = get_as(doc, "imbalance_threshold", "config", c.imbalance_threshold);
  c.matching = get_as(doc, "matching", "config", c.matching);
  c.epsilon = get_as(doc, "epsilon", "config", c.epsilon);
  c.rho_cap = get_as(doc, "rho_cap", "config", c.rho_cap);
  c.rho_grid = get_as(doc, "rho_grid", "config", c.rho_grid);
  if (doc.contains("risk_forest")) c.risk_forest = detail::forest_from_json(doc["risk_forest"], "risk_forest");
  if (doc.contains("counterfactual_forest")) {
    c.counterfactual_forest = detail::forest_from_json(doc["counterfactual_forest"], "counterfactual_forest");
  }
  if (doc.contains("policy_tree")) c.tree = detail::tree_from_json(doc["policy_tree"], "policy_tree");
  if (doc.contains("tree_grid")) {
    require(doc["tree_grid"].is_array(), ErrorCode::InvalidConfig, "tree_grid must be an array");
    for (const auto& t : doc["tree_grid"]) c.tree_grid.push_back(detail::tree_from_json(t, "tree_grid[]"));
  }
  if (doc.contains("selection")) {
    const auto& s = doc["selection"];
    detail::check_keys(s, "selection", {"rule", "floor"});
    const auto rule = get_as<std::string>(s, "rule", "selection", "max-sens-with-spec-floor");
    if (rule == "max-sum") c.selection.kind = SelectionKind::MaxSum;
    else if (rule == "max-sens-with-spec-floor") c.selection.kind = SelectionKind::MaxSensitivityWithSpecificityFloor;
    else throw Error(ErrorCode::InvalidConfig, "unknown selection rule '" + rule + "'");
    c.selection.floor = get_as(s, "floor", "selection", c.selection.floor);
  }
  c.validation_fraction = get_as(doc, "validation_fraction", "config", c.validation_fraction);
  c.normalize = get_as(doc, "normalize", "config", c.normalize);
  c.seed = get_as<std::uint64_t>(doc, "seed", "config", c.seed);
  c.threads = get_as(doc, "threads", "config", c.threads);
  c.output_dir = detail::resolve(get_as<std::string>(doc, "output_dir", "config", c.output_dir), base_dir);

  require(c.imbalance_threshold >= 1.0, ErrorCode::InvalidConfig, "imbalance_threshold must be >= 1");
  require(c.epsilon > 0.0, ErrorCode::InvalidConfig, "epsilon must be > 0");
  require(c.rho_cap > 1.0, ErrorCode::InvalidConfig, "rho_cap must be > 1");
  for (double rho : c.rho_grid) require(rho >= 1.0, ErrorCode::InvalidConfig, "rho_grid values must be >= 1");
  require(c.validation_fraction > 0.0 && c.validation_fraction < 1.0, ErrorCode::InvalidConfig,
          "validation_fraction must lie in (0, 1)");
  require(c.selection.floor >= 0.0 && c.selection.floor <= 1.0, ErrorCode::InvalidConfig,
          "selection floor must lie in [0, 1]");
  require(c.threads >= 0, ErrorCode::InvalidConfig, "threads must be >= 0");
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json covariates = nlohmann::json::array();
  for (const auto& col : c.mapping.covariates) {
    const char* kind = col.kind == SourceKind::Binary ? "binary" : col.kind == SourceKind::Categorical ? "categorical" : "continuous";
    covariates.push_back({{"name", col.name}, {"kind", kind}});
  }
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& t : c.tree_grid) grid.push_back(detail::tree_to_json_config(t));
  nlohmann::json doc;
  doc["input"] = {{"cohort", c.cohort_path}, {"external", c.external_path}};
  doc["schema"] = {{"id", c.mapping.id_column},
                   {"treatment", c.mapping.treatment_column},
                   {"outcome", c.mapping.outcome_column},
                   {"covariates", covariates}};
  doc["mode"] = to_string(c.mode);
  doc["buckets"] = c.bucket_edges.empty() ? nlohmann::json(c.bucket_preset) : nlohmann::json(c.bucket_edges);
  doc["imbalance_threshold"] = c.imbalance_threshold;
  doc["matching"] = c.matching;
  doc["epsilon"] = c.epsilon;
  doc["rho_cap"] = c.rho_cap;
  doc["rho_grid"] = c.rho_grid;
  doc["risk_forest"] = detail::forest_to_json_config(c.risk_forest);
  doc["counterfactual_forest"] = detail::forest_to_json_config(c.counterfactual_forest);
  doc["policy_tree"] = detail::tree_to_json_config(c.tree);
  doc["tree_grid"] = grid;
  doc["selection"] = {{"rule", c.selection.kind == SelectionKind::MaxSum ? "max-sum" : "max-sens-with-spec-floor"},
                      {"floor", c.selection.floor}};
  doc["validation_fraction"] = c.validation_fraction;
  doc["normalize"] = c.normalize;
  doc["seed"] = c.seed;
  doc["threads"] = c.threads;
  doc["output_dir"] = c.output_dir;
  return doc;
}

/// Applies "a.b.c=value" to a config document. The value is read as JSON when
/// it parses, otherwise as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* at = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), ErrorCode::InvalidConfig, "empty component in key '" + key + "'");
    if (!at->is_object()) *at = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*at)[part] = value;
      return;
    }
    at = &(*at)[part];
    start = dot + 1;
  }
}

inline nlohmann::json read_config_document(const std::string& path) {
  const auto text = io::read_text_file(path);
  auto doc = nlohmann::json::parse(text, nullptr, false);
  require(!doc.is_discarded(), ErrorCode::InvalidConfig, "config " + path + " is not valid JSON");
  return doc;
}

// ---------------------------------------------------------------- stages

enum class Stage { Risk, Stratify, Match, Counterfactual, Policy, Validate, Tune };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::Risk: return "risk";
    case Stage::Stratify: return "stratify";
    case Stage::Match: return "match";
    case Stage::Counterfactual: return "counterfactual";
    case Stage::Policy: return "policy";
    case Stage::Validate: return "validate";
    default: return "tune";
  }
}

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::Risk,   Stage::Stratify, Stage::Match, Stage::Counterfactual,
                                         Stage::Policy, Stage::Validate, Stage::Tune};
  return stages;
}

namespace detail {

using nlohmann::json;

template <typename F>
auto in_stage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const json::exception& e) {
    throw StageError(stage, Error(ErrorCode::BadValue, e.what()));
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(stage, Error(ErrorCode::Io, e.what()));
  }
}

inline std::string out_path(const RunConfig& c, const std::string& name) {
  return (std::filesystem::path(c.output_dir) / name).string();
}

inline json read_json_file(const std::string& path) {
  require(std::filesystem::exists(path), ErrorCode::Io, path + " not found; run the earlier stages first");
  auto doc = json::parse(io::read_text_file(path), nullptr, false);
  require(!doc.is_discarded(), ErrorCode::BadValue, path + " is not valid JSON");
  return doc;
}

inline void write_json_file(const std::string& path, const json& doc) { io::write_text_file(path, doc.dump(2) + "\n"); }

inline ColumnMapping effective_mapping(const RunConfig& c, const io::CsvTable& table) {
  ColumnMapping m = c.mapping;
  if (m.id_column.empty() && table.column("id")) m.id_column = "id";
  if (!m.covariates.empty()) return m;
  for (const auto& name : table.header) {
    if (name == m.id_column || name == m.treatment_column || name == m.outcome_column) continue;
    m.covariates.push_back({name, SourceKind::Continuous});
  }
  require(!m.covariates.empty(), ErrorCode::MissingColumn, "cohort has no covariate columns");
  return m;
}

inline io::CsvTable read_input(const std::string& path, const char* what) {
  require(!path.empty(), ErrorCode::InvalidConfig, std::string("no ") + what + " path configured");
  require(std::filesystem::exists(path), ErrorCode::InvalidConfig, std::string(what) + " file " + path + " does not exist");
  return io::read_csv_file(path);
}

struct Inputs {
  Cohort training;                         // normalized when configured
  std::vector<PatientRecord> validation;   // untreated only
  std::size_t validation_treated_dropped = 0;
  std::string validation_source;
  std::optional<std::vector<ColumnStats>> stats;
};

// Loads the cohort, splits off the validation part when there is no external
// cohort and normalizes with statistics from the training part. With
// stats_from_disk set, the statistics come from the risk stage output, and a
// missing file is reported against the calling stage rather than "load".
inline Inputs load_inputs(const RunConfig& c, bool stats_from_disk) {
  auto [train, valid, in] = in_stage("load", [&] {
    const auto table = read_input(c.cohort_path, "cohort");
    const auto mapping = effective_mapping(c, table);
    const Cohort full = load_cohort(table, mapping);
    Inputs in;
    Cohort train;
    Cohort valid;
    if (c.external_path.empty()) {
      std::tie(train, valid) = split(full, c.validation_fraction, derive_seed(c.seed, "split"));
      in.validation_source = "held-out";
    } else {
      const auto ext = read_input(c.external_path, "external cohort");
      train = full;
      valid = load_cohort(ext, mapping, &full.schema);
      in.validation_source = "external";
    }
    return std::tuple<Cohort, Cohort, Inputs>(std::move(train), std::move(valid), std::move(in));
  });
  if (c.normalize) {
    if (stats_from_disk) {
      in.stats = normalization_from_json(train.schema, read_json_file(out_path(c, "normalization.json")));
    } else {
      in.stats = compute_normalization(train);
    }
    train = apply_normalization(train, *in.stats);
    valid = apply_normalization(valid, *in.stats);
  }
  for (auto& rec : valid.records) {
    if (rec.treatment == 0) in.validation.push_back(std::move(rec));
    else ++in.validation_treated_dropped;
  }
  in.training = std::move(train);
  return in;
}

inline ForestConfig with_seed(ForestConfig f, std::uint64_t seed, int threads) {
  f.seed = seed;
  f.threads = threads;
  return f;
}

inline json load_report(const RunConfig& c) {
  const auto path = out_path(c, "report.json");
  if (!std::filesystem::exists(path)) return json::object();
  return read_json_file(path);
}

inline void save_report(const RunConfig& c, json report, Stage stage, json section) {
  report[to_string(stage)] = std::move(section);
  json done = json::array();
  for (auto s : all_stages()) {
    if (report.contains(to_string(s))) done.push_back(to_string(s));
  }
  report["stages_completed"] = done;
  write_json_file(out_path(c, "report.json"), report);
}

// Interchange table of records: id, bucket, treatment, outcome, covariates.
inline std::string records_to_csv(const std::vector<PatientRecord>& records, const std::vector<int>& buckets,
                                  const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "id,bucket,treatment,outcome";
  for (const auto& n : names) out << ',' << io::csv_escape(n);
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << io::csv_escape(r.id) << ',' << buckets[i] << ',' << r.treatment << ',' << r.outcome;
    for (double v : r.covariates) out << ',' << io::format_double(v);
    out << '\n';
  }
  return out.str();
}

inline std::pair<std::vector<PatientRecord>, std::vector<int>> records_from_csv(const std::string& path,
                                                                                std::size_t dimension) {
  const auto table = io::read_csv_file(path);
  require(table.header.size() == 4 + dimension, ErrorCode::DimensionMismatch, path + " has the wrong column count");
  std::vector<PatientRecord> records;
  std::vector<int> buckets;
  auto number = [&](const std::string& cell) {
    auto v = io::parse_double(cell);
    require(v.has_value(), ErrorCode::BadValue, "bad number '" + cell + "' in " + path);
    return *v;
  };
  for (const auto& row : table.rows) {
    PatientRecord r;
    r.id = row[0];
    buckets.push_back(static_cast<int>(number(row[1])));
    r.treatment = static_cast<int>(number(row[2]));
    r.outcome = static_cast<int>(number(row[3]));
    for (std::size_t j = 0; j < dimension; ++j) r.covariates.push_back(number(row[4 + j]));
    records.push_back(std::move(r));
  }
  return {std::move(records), std::move(buckets)};
}

inline std::map<std::string, double> read_risks(const RunConfig& c) {
  const auto table = io::read_csv_file(out_path(c, "risk.csv"));
  const auto id = table.column("id");
  const auto risk = table.column("risk");
  require(id && risk, ErrorCode::MissingColumn, "risk.csv needs id and risk columns");
  std::map<std::string, double> out;
  for (const auto& row : table.rows) {
    auto v = io::parse_double(row[*risk]);
    require(v.has_value(), ErrorCode::BadValue, "bad risk '" + row[*risk] + "'");
    out[row[*id]] = *v;
  }
  return out;
}

inline std::string rewards_to_csv(const std::vector<PatientRecord>& records, const std::vector<Reward>& r) {
  std::ostringstream out;
  out << "id,r0,r1\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << io::csv_escape(records[i].id) << ',' << io::format_double(r[i].r0) << ',' << io::format_double(r[i].r1) << '\n';
  }
  return out.str();
}

inline std::vector<Reward> rewards_from_csv(const std::string& path, const std::vector<PatientRecord>& records) {
  const auto table = io::read_csv_file(path);
  require(table.rows.size() == records.size(), ErrorCode::DimensionMismatch, "rewards.csv does not match matched.csv");
  std::vector<Reward> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& row = table.rows[i];
    require(row.size() == 3 && row[0] == records[i].id, ErrorCode::BadValue, "rewards.csv row " + std::to_string(i + 1) + " is out of order");
    auto r0 = io::parse_double(row[1]);
    auto r1 = io::parse_double(row[2]);
    require(r0 && r1, ErrorCode::BadValue, "bad reward in rewards.csv");
    out.push_back({*r0, *r1});
  }
  return out;
}

inline json counts_json(const std::vector<PatientRecord>& records) {
  std::size_t treated = 0;
  std::size_t events[2] = {0, 0};
  for (const auto& r : records) {
    treated += r.treatment;
    events[r.treatment] += r.outcome;
  }
  return {{"n", records.size()},
          {"n_treated", treated},
          {"n_untreated", records.size() - treated},
          {"events_treated", events[1]},
          {"events_untreated", events[0]}};
}

// ---- stage bodies

inline void stage_risk(const RunConfig& c) {
  auto in = load_inputs(c, false);
  std::filesystem::create_directories(c.output_dir);
  const auto& records = in.training.records;
  std::vector<PatientRecord> untreated;
  for (const auto& r : records) {
    if (r.treatment == 0) untreated.push_back(r);
  }
  require(!untreated.empty(), ErrorCode::EmptyArm, "no untreated patients to train the baseline risk model");
  const auto xu = feature_matrix(untreated);
  const auto yu = outcomes(untreated);
  const auto g = train_forest(xu, yu, with_seed(c.risk_forest, derive_seed(c.seed, "risk"), c.threads), TrainingArm::Untreated);
  // Untreated patients get out-of-bag predictions so their own outcome does
  // not leak into the risk used to match them.
  const auto oob = g.predict_oob(xu);
  std::vector<double> risk(records.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    risk[i] = records[i].treatment == 0 ? oob[k++] : g.predict_proba(records[i].covariates);
  }
  std::ostringstream csv;
  csv << "id,treatment,outcome,risk\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    csv << io::csv_escape(records[i].id) << ',' << records[i].treatment << ',' << records[i].outcome << ','
        << io::format_double(risk[i]) << '\n';
  }
  io::write_text_file(out_path(c, "risk.csv"), csv.str());
  if (in.stats) write_json_file(out_path(c, "normalization.json"), normalization_to_json(in.training.schema, *in.stats));

  json section = {{"training", counts_json(records)},
                  {"validation_source", in.validation_source},
                  {"validation_untreated", in.validation.size()},
                  {"validation_treated_excluded", in.validation_treated_dropped},
                  {"features", in.training.feature_names()},
                  {"oob_auc_untreated", auc(oob, yu)}};
  json report = {{"config", config_to_json(c)}};
  save_report(c, std::move(report), Stage::Risk, std::move(section));
}

inline void stage_stratify(const RunConfig& c) {
  auto in = load_inputs(c, true);
  const auto risk_of = in_stage("stratify", [&] { return read_risks(c); });
  auto& records = in.training.records;
  std::vector<double> risks;
  for (const auto& r : records) {
    auto it = risk_of.find(r.id);
    require(it != risk_of.end(), ErrorCode::BadValue, "risk.csv has no row for '" + r.id + "'");
    risks.push_back(it->second);
  }
  const auto spec = c.buckets();
  json section;
  std::vector<PatientRecord> out_records;
  std::vector<int> out_buckets;
  if (c.mode == Mode::Rct) {
    const auto rb = rebalance_rct(records, risks, spec, c.imbalance_threshold, derive_seed(c.seed, "oversample"));
    io::write_text_file(out_path(c, "buckets.csv"), balance_to_csv(rb.before));
    io::write_text_file(out_path(c, "buckets_rebalanced.csv"), balance_to_csv(rb.after));
    json merged = json::array();
    for (const auto& [lo, hi] : rb.merged) merged.push_back({lo, hi});
    json balance = {{"before", balance_to_json(rb.before)}, {"after", balance_to_json(rb.after)}, {"merged", merged},
                    {"edges", rb.spec.edges()}};
    write_json_file(out_path(c, "balance.json"), balance);
    section = {{"edges", rb.spec.edges()},
               {"flagged_before", rb.before.flagged()},
               {"flagged_after", rb.after.flagged()},
               {"merged", merged},
               {"n_after_oversampling", rb.records.size()}};
    out_records = rb.records;
    out_buckets = rb.buckets;
  } else {
    const auto buckets = assign_buckets(risks, spec);
    const auto report = diagnose(records, buckets, spec, c.imbalance_threshold);
    io::write_text_file(out_path(c, "buckets.csv"), balance_to_csv(report));
    write_json_file(out_path(c, "balance.json"), {{"before", balance_to_json(report)}, {"edges", spec.edges()}});
    section = {{"edges", spec.edges()}, {"flagged", report.flagged()}};
    out_records = records;
    out_buckets = buckets;
  }
  io::write_text_file(out_path(c, "strata.csv"), records_to_csv(out_records, out_buckets, in.training.feature_names()));
  save_report(c, load_report(c), Stage::Stratify, std::move(section));
}

inline void stage_match(const RunConfig& c) {
  auto in = load_inputs(c, true);
  auto [records, buckets] = in_stage("match", [&] { return records_from_csv(out_path(c, "strata.csv"), in.training.dimension()); });
  json section;
  if (c.mode == Mode::Observational && c.matching) {
    const auto matched = match_cohort(records, buckets);
    write_json_file(out_path(c, "matches.json"), matches_to_json(matched));
    section = {{"matching", true}, {"warnings", matched.warnings}, {"matched", counts_json(matched.records)},
               {"discarded", records.size() - matched.size()}};
    records = matched.records;
    buckets = matched.buckets;
  } else {
    write_json_file(out_path(c, "matches.json"), {{"plans", json::array()}, {"warnings", json::array()}, {"n_s", records.size()}});
    section = {{"matching", false}, {"matched", counts_json(records)}, {"discarded", 0}};
  }
  io::write_text_file(out_path(c, "matched.csv"), records_to_csv(records, buckets, in.training.feature_names()));
  save_report(c, load_report(c), Stage::Match, std::move(section));
}

inline std::vector<PatientRecord> read_matched(const RunConfig& c, std::size_t dimension, const char* stage) {
  return in_stage(stage, [&] { return records_from_csv(out_path(c, "matched.csv"), dimension).first; });
}

inline void stage_counterfactual(const RunConfig& c) {
  auto in = load_inputs(c, true);
  const auto records = read_matched(c, in.training.dimension(), "counterfactual");
  const auto forest = with_seed(c.counterfactual_forest, derive_seed(c.seed, "counterfactual"), c.threads);
  CounterfactualPair pair;
  EscalationTrace trace;
  std::string reason;
  if (c.mode == Mode::Rct) {
    // Randomized assignment: no hidden confounding to offset, rho stays 1.
    pair = train_pair(records, 1.0, forest);
    trace.steps.push_back({1.0, pair.w_hat_0, pair.w_hat_1});
    reason = pair.w_hat_1 <= pair.w_hat_0 ? to_string(Termination::AlreadyBalanced) : "rct_fixed_rho";
  } else {
    std::tie(pair, trace) = escalate(records, c.epsilon, c.rho_cap, forest);
    reason = to_string(trace.reason);
  }
  io::write_text_file(out_path(c, "trace.csv"), trace_to_csv(trace));
  io::write_text_file(out_path(c, "rewards.csv"), rewards_to_csv(records, rewards(pair, records)));
  json section = {{"terminal_rho", pair.rho},
                  {"reason", reason},
                  {"w_hat_0", pair.w_hat_0},
                  {"w_hat_1", pair.w_hat_1},
                  {"initial_gap", trace.steps.front().w_hat_1 - trace.steps.front().w_hat_0},
                  {"steps", trace.steps.size()}};
  save_report(c, load_report(c), Stage::Counterfactual, std::move(section));
}

inline TreeConfig tree_with_seed(TreeConfig t, const RunConfig& c) {
  t.seed = derive_seed(c.seed, "policy");
  return t;
}

inline void stage_policy(const RunConfig& c) {
  auto in = load_inputs(c, true);
  const auto records = read_matched(c, in.training.dimension(), "policy");
  const auto r = in_stage("policy", [&] { return rewards_from_csv(out_path(c, "rewards.csv"), records); });
  const auto x = feature_matrix(records);
  const auto tree = train_policy(x, r, tree_with_seed(c.tree, c));
  const auto names = in.training.feature_names();
  const auto* stats = in.stats ? &*in.stats : nullptr;
  auto doc = policy_to_json(tree, names, stats);
  const auto effects = leaf_effects(tree, x, r);
  doc["leaves"] = leaf_effects_to_json(effects);
  write_json_file(out_path(c, "tree.json"), doc);
  io::write_text_file(out_path(c, "tree.dot"), export_dot(tree, names, stats));
  std::size_t treated = 0;
  for (const auto& rec : records) treated += tree.prescribe(rec.covariates);
  json section = {{"depth", tree.depth()},
                  {"leaves", tree.leaves().size()},
                  {"objective", policy_objective(tree, x, r)},
                  {"prescribed_treatment", treated},
                  {"n", records.size()}};
  if (!c.tree_grid.empty()) {
    std::vector<TreeConfig> grid;
    for (const auto& t : c.tree_grid) grid.push_back(tree_with_seed(t, c));
    const auto spread = hyperparameter_spread(x, r, grid, in.validation);
    auto range = [](const std::optional<Interval>& i) { return i ? json({i->lower, i->upper}) : json(nullptr); };
    section["spread"] = {{"trees", spread.trees}, {"sensitivity", range(spread.sensitivity)}, {"specificity", range(spread.specificity)}};
  }
  save_report(c, load_report(c), Stage::Policy, std::move(section));
}

inline void stage_validate(const RunConfig& c) {
  auto in = load_inputs(c, true);
  const auto tree = in_stage("validate", [&] { return policy_from_json(read_json_file(out_path(c, "tree.json"))); });
  const auto result = validate(tree, in.validation);
  write_json_file(out_path(c, "validation.json"), validation_to_json(result));
  io::write_text_file(out_path(c, "validation.csv"), validation_to_csv(result));
  save_report(c, load_report(c), Stage::Validate, validation_to_json(result));
}

inline void stage_tune(const RunConfig& c) {
  auto in = load_inputs(c, true);
  json section;
  if (c.mode == Mode::Rct) {
    section = {{"skipped", "rho is fixed at 1 in rct mode"}};
  } else if (c.rho_grid.empty()) {
    section = {{"skipped", "empty rho_grid"}};
  } else {
    const auto records = read_matched(c, in.training.dimension(), "tune");
    const auto table = tune_weight(records, in.validation, c.rho_grid, tree_with_seed(c.tree, c),
                                   with_seed(c.counterfactual_forest, derive_seed(c.seed, "counterfactual"), c.threads),
                                   c.selection);
    io::write_text_file(out_path(c, "tuning.csv"), tuning_to_csv(table));
    section = tuning_to_json(table);
  }
  save_report(c, load_report(c), Stage::Tune, std::move(section));
}

}  // namespace detail

/// Runs one stage; its inputs must already be in the output directory.
inline void run_stage(Stage stage, const RunConfig& config) {
  const auto name = to_string(stage);
  detail::in_stage(name, [&] {
    switch (stage) {
      case Stage::Risk: detail::stage_risk(config); break;
      case Stage::Stratify: detail::stage_stratify(config); break;
      case Stage::Match: detail::stage_match(config); break;
      case Stage::Counterfactual: detail::stage_counterfactual(config); break;
      case Stage::Policy: detail::stage_policy(config); break;
      case Stage::Validate: detail::stage_validate(config); break;
      case Stage::Tune: detail::stage_tune(config); break;
    }
  });
}

/// Every stage in order; returns the final report.
inline nlohmann::json run_pipeline(const RunConfig& config) {
  for (auto stage : all_stages()) run_stage(stage, config);
  return detail::read_json_file(detail::out_path(config, "report.json"));
}

}  // namespace road
