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

// road: command-line front end. Exit codes: 0 ok, 2 config, 3 data, 4 numeric.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "road/road.hpp"

namespace {

struct PipelineOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string cohort;
  std::string external;
  std::string out;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_pipeline_options(CLI::App* cmd, PipelineOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config");
  cmd->add_option("--set", o.overrides, "override a config key, e.g. --set policy_tree.max_depth=3");
  cmd->add_option("--cohort", o.cohort, "training cohort CSV");
  cmd->add_option("--external", o.external, "untreated external validation CSV");
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--mode", o.mode, "observational or rct");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "forest threads (0 = all cores)");
}

// Config file < ROAD_OUTPUT_DIR < command-line flags.
road::RunConfig resolve_config(const PipelineOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base;
  if (!o.config_path.empty()) {
    doc = road::read_config_document(o.config_path);
    base = std::filesystem::path(o.config_path).parent_path();
  }
  if (const char* env = std::getenv("ROAD_OUTPUT_DIR"); env && *env) doc["output_dir"] = std::filesystem::absolute(env).string();
  for (const auto& s : o.overrides) road::apply_override(doc, s);
  auto cwd = [](const std::string& p) { return std::filesystem::absolute(p).string(); };
  if (!o.cohort.empty()) doc["input"]["cohort"] = cwd(o.cohort);
  if (!o.external.empty()) doc["input"]["external"] = cwd(o.external);
  if (!o.out.empty()) doc["output_dir"] = cwd(o.out);
  if (!o.mode.empty()) doc["mode"] = o.mode;
  if (o.seed) doc["seed"] = *o.seed;
  if (o.threads) doc["threads"] = *o.threads;
  return road::config_from_json(doc, base);
}

int exit_code(road::ErrorCode code) {
  switch (road::classify(code)) {
    case road::ErrorClass::Config: return 2;
    case road::ErrorClass::Data: return 3;
    default: return 4;
  }
}

int report_error(const std::string& stage, road::ErrorCode code, const std::string& message) {
  nlohmann::json err = {{"error", {{"stage", stage}, {"code", road::to_string(code)}, {"message", message}}}};
  std::cerr << err.dump() << std::endl;
  return exit_code(code);
}

struct SimOptions {
  road::SynthConfig synth;
  std::string assignment = "observational";
  std::size_t external_n = 1000;
  std::string out = ".";
};

int simulate(SimOptions& o) {
  o.synth.assignment = road::parse_assignment(o.assignment);
  const auto [cohort, truth] = road::generate(o.synth);
  const auto [external, external_truth] =
      road::generate_untreated(o.synth, o.external_n, road::derive_seed(o.synth.seed, "external"));
  std::filesystem::create_directories(o.out);
  const auto at = [&](const char* name) { return (std::filesystem::path(o.out) / name).string(); };
  road::io::write_text_file(at("cohort.csv"), road::cohort_to_csv(cohort));
  road::io::write_text_file(at("truth.csv"), road::truth_to_csv(cohort, truth));
  road::io::write_text_file(at("external.csv"), road::cohort_to_csv(external));
  road::io::write_text_file(at("external_truth.csv"), road::truth_to_csv(external, external_truth));
  std::size_t treated = 0;
  for (const auto& r : cohort.records) treated += r.treatment;
  std::cout << "wrote " << cohort.size() << " patients (" << treated << " treated) and " << external.size()
            << " external patients to " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road: risk-stratified matching, cost-sensitive counterfactuals and policy trees"};
  app.require_subcommand(1);

  SimOptions sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "write a synthetic cohort, its ground truth and an external cohort");
  simulate_cmd->add_option("-n,--n", sim.synth.n, "cohort size");
  simulate_cmd->add_option("-d,--d", sim.synth.d, "observed covariates");
  simulate_cmd->add_option("--hidden-effect", sim.synth.hidden_effect, "log-odds per unit of the hidden confounder");
  simulate_cmd->add_option("--benefit", sim.synth.benefit_size, "mean risk reduction among benefiting patients");
  simulate_cmd->add_option("--assignment", sim.assignment, "observational, rct or rct-imbalanced");
  simulate_cmd->add_option("--seed", sim.synth.seed, "seed");
  simulate_cmd->add_option("--external-n", sim.external_n, "external cohort size");
  simulate_cmd->add_option("-o,--out", sim.out, "output directory");

  PipelineOptions opts;
  std::vector<std::pair<CLI::App*, std::optional<road::Stage>>> commands;
  auto* run_cmd = app.add_subcommand("run", "run every stage");
  add_pipeline_options(run_cmd, opts);
  commands.emplace_back(run_cmd, std::nullopt);
  const std::pair<road::Stage, const char*> stage_help[] = {
      {road::Stage::Risk, "fit the baseline risk model on untreated patients and score everyone"},
      {road::Stage::Stratify, "bucket risks and diagnose arm balance (rct: merge and oversample)"},
      {road::Stage::Match, "exact per-bucket matching of the smaller arm"},
      {road::Stage::Counterfactual, "fit outcome models and escalate the treated weight"},
      {road::Stage::Policy, "train the policy tree on counterfactual rewards"},
      {road::Stage::Validate, "sensitivity and specificity on untreated validation patients"},
      {road::Stage::Tune, "refit over the weight grid and select a weight"},
  };
  for (const auto& [stage, help] : stage_help) {
    auto* cmd = app.add_subcommand(road::to_string(stage), help);
    add_pipeline_options(cmd, opts);
    commands.emplace_back(cmd, stage);
  }

  CLI11_PARSE(app, argc, argv);

  std::string stage_name = "load";
  try {
    if (simulate_cmd->parsed()) {
      stage_name = "simulate";
      return simulate(sim);
    }
    const auto config = resolve_config(opts);
    for (const auto& [cmd, stage] : commands) {
      if (!cmd->parsed()) continue;
      if (stage) {
        stage_name = road::to_string(*stage);
        road::run_stage(*stage, config);
        std::cout << stage_name << ": done (" << config.output_dir << ")\n";
      } else {
        const auto report = road::run_pipeline(config);
        const auto& cf = report.at("counterfactual");
        std::cout << "run: done (" << config.output_dir << ") rho=" << cf.at("terminal_rho").dump()
                  << " reason=" << cf.at("reason").get<std::string>() << "\n";
      }
    }
    return 0;
  } catch (const road::StageError& e) {
    const std::string what = e.what();
    return report_error(e.stage(), e.code(), what.substr(what.find(": ") + 2));
  } catch (const road::Error& e) {
    const std::string what = e.what();
    return report_error(stage_name, e.code(), what.substr(what.find(": ") + 2));
  } catch (const std::exception& e) {
    return report_error(stage_name, road::ErrorCode::Io, e.what());
  }
}
