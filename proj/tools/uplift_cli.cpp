// uplift: command-line front end for the uplift-modeling toolkit.
//
// Subcommands: simulate | select | train | evaluate | score | run-cadence |
// registry ls | registry show. Exit codes: 0 success, 1 validation error,
// 2 data error, 3 training divergence.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uplift/pipeline.hpp"

namespace {

using namespace uplift;

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Heterogeneous-treatment-effect (uplift) modeling toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides ov;
  std::uint64_t seed_flag = 0;
  std::string out_flag;
  int workers_flag = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file")->required();
    cmd->add_option("--seed", seed_flag, "override the run seed")
        ->each([&](const std::string&) { ov.seed = seed_flag; });
    cmd->add_option("--out", out_flag, "override the output directory")
        ->each([&](const std::string&) { ov.out = out_flag; });
    cmd->add_option("--workers", workers_flag, "worker threads")
        ->each([&](const std::string&) { ov.workers = workers_flag; });
  };

  auto* sim = app.add_subcommand("simulate", "generate a synthetic experiment pool");
  add_common(sim);

  auto* sel = app.add_subcommand("select", "filter the pool and write the audit");
  add_common(sel);

  auto* train = app.add_subcommand("train", "select, fit and register models");
  add_common(train);

  auto* eval = app.add_subcommand(
      "evaluate", "evaluate registered models on held-out experiments");
  add_common(eval);
  std::vector<std::string> model_ids;
  eval->add_option("--models", model_ids, "model ids (default: whole registry)")
      ->delimiter(',');

  auto* score = app.add_subcommand("score", "batch-score observations");
  add_common(score);
  std::string score_model, score_input, score_output;
  bool sensitivity = false;
  score->add_option("--model", score_model, "model id")->required();
  score->add_option("--input", score_input, "observation file (jsonl)")->required();
  score->add_option("--output", score_output, "score file (csv)")->required();
  score->add_flag("--sensitivity", sensitivity,
                  "emit the sensitivity column (negated ITE)");

  auto* cadence =
      app.add_subcommand("run-cadence", "weekly incremental vs from-scratch run");
  add_common(cadence);
  int weeks = 0;
  cadence->add_option("--weeks", weeks, "number of weeks (default: pool manifest)");

  auto* registry = app.add_subcommand("registry", "inspect the model registry");
  auto* reg_ls = registry->add_subcommand("ls", "list model ids");
  add_common(reg_ls);
  auto* reg_show = registry->add_subcommand("show", "print one entry");
  add_common(reg_show);
  std::string show_id;
  reg_show->add_option("id", show_id, "model id")->required();
  registry->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // validation error
  }

  const RunConfig run = load_run_config(config_path, ov);
  if (sim->parsed()) {
    cmd_simulate(run);
  } else if (sel->parsed()) {
    cmd_select(run);
  } else if (train->parsed()) {
    cmd_train(run);
  } else if (eval->parsed()) {
    std::vector<std::string> ids = model_ids;
    if (ids.empty()) ids = ModelRegistry(run.registry).list();
    cmd_evaluate(run, ids);
  } else if (score->parsed()) {
    cmd_score(run, score_model, score_input, score_output, sensitivity);
  } else if (cadence->parsed()) {
    cmd_run_cadence(run, weeks);
  } else if (registry->parsed()) {
    ModelRegistry reg(run.registry);
    if (reg_ls->parsed()) {
      for (const auto& id : reg.list()) std::cout << id << "\n";
    } else {
      std::cout << reg.read_entry(show_id).to_json().dump(2) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const uplift::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const uplift::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const uplift::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
