// pairadjust command-line driver. Everything goes through the C API in
// pairadjust.h; this binary holds no estimation logic of its own.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pairadjust.h"

namespace {

struct CommonArgs {
  std::string config;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string provider;
  bool live = false;
  std::string model;
  int max_in_flight = 0;
  double rpm = 0.0;
  std::string cache_path;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* config = cmd->add_option("--config", args.config, "run configuration (JSON)");
  if (config_required) config->required();
  cmd->add_option("--out-dir", args.out_dir, "artifact directory")
      ->capture_default_str();
  cmd->add_option("--seed", args.seed, "master seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--provider", args.provider, "provider kind: mock or http");
  cmd->add_flag("--live", args.live,
                "confirm live (paid) HTTP calls; required for --provider http");
  cmd->add_option("--model", args.model, "chat model name for the http provider");
  cmd->add_option("--max-in-flight", args.max_in_flight,
                  "maximum concurrent provider requests");
  cmd->add_option("--rpm", args.rpm, "requests-per-minute cap (0 = unlimited)");
  cmd->add_option("--cache-path", args.cache_path, "response cache file (JSONL)");
}

std::string overrides_json(const CommonArgs& args) {
  nlohmann::json overrides = nlohmann::json::object();
  if (args.seed_set) overrides["seed"] = args.seed;
  nlohmann::json provider = nlohmann::json::object();
  if (!args.provider.empty()) provider["kind"] = args.provider;
  if (args.live) provider["live"] = true;
  if (args.max_in_flight > 0) provider["max_in_flight"] = args.max_in_flight;
  if (args.rpm > 0) provider["requests_per_minute"] = args.rpm;
  if (!args.cache_path.empty()) provider["cache_path"] = args.cache_path;
  if (!args.model.empty()) provider["http"] = {{"model", args.model}};
  if (!provider.empty()) overrides["provider"] = provider;
  return overrides.dump();
}

int exit_code_for(int status) {
  switch (status) {
    case PA_OK: return 0;
    case PA_ERR_VALIDATION: return 2;
    case PA_ERR_PROVIDER: return 3;
    default: return 1;
  }
}

int fail(int status) {
  std::fprintf(stderr, "error: %s\n", pa_last_error());
  return exit_code_for(status);
}

int run_stages(const CommonArgs& args, const std::vector<std::string>& stages,
               bool run_all) {
  pa_pipeline* pipeline = nullptr;
  const std::string overrides = overrides_json(args);
  int status = pa_pipeline_open(args.config.empty() ? nullptr : args.config.c_str(),
                                args.out_dir.c_str(), overrides.c_str(), &pipeline);
  if (status != PA_OK) return fail(status);

  if (run_all) {
    status = pa_pipeline_run_all(pipeline);
    if (status == PA_OK) std::printf("%s\n", pa_pipeline_last_message(pipeline));
  } else {
    for (const auto& stage : stages) {
      int ran = 0;
      status = pa_pipeline_run_stage(pipeline, stage.c_str(), &ran);
      if (status != PA_OK) break;
      std::printf("stage '%s': %s\n", stage.c_str(),
                  pa_pipeline_last_message(pipeline));
    }
  }
  const int code = status == PA_OK ? 0 : fail(status);
  pa_pipeline_free(pipeline);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairadjust: precision gains for randomized experiments from "
               "pairwise LLM comparisons"};
  app.require_subcommand(1);

  const std::vector<std::string> stage_names = {
      "ingest", "impute", "stratify", "pair", "query", "score", "estimate",
      "evaluate"};
  const std::vector<std::string> stage_help = {
      "validate the input data and copy it into the artifact directory",
      "fit the initial stratification model (OOB predictions)",
      "assign units to comparison strata",
      "enumerate within-stratum pairs with randomized presentation",
      "obtain pairwise verdicts from the provider (cached)",
      "aggregate verdicts into adjusted pair scores",
      "run the Horvitz-Thompson and adjusted estimators",
      "significance screen, model comparison, and ESS tables"};

  std::vector<CommonArgs> args(stage_names.size());
  for (std::size_t i = 0; i < stage_names.size(); ++i) {
    auto* cmd = app.add_subcommand(stage_names[i], stage_help[i]);
    add_common(cmd, args[i], /*config_required=*/true);
  }

  CommonArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "run every stage through evaluate");
  add_common(run_cmd, run_args, /*config_required=*/true);

  CommonArgs sim_args;
  std::string suite = "default";
  int replications = 0, ess_replications = 0, threads = 0;
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Monte-Carlo suite: estimator bias, variance validity, coverage");
  add_common(sim_cmd, sim_args, /*config_required=*/false);
  sim_cmd->add_option("--suite", suite, "suite name (only: default)")
      ->capture_default_str();
  sim_cmd->add_option("--replications", replications, "estimator replications");
  sim_cmd->add_option("--ess-replications", ess_replications,
                      "pipeline ESS replications");
  sim_cmd->add_option("--threads", threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < stage_names.size(); ++i)
    if (app.get_subcommand(stage_names[i])->parsed())
      return run_stages(args[i], {stage_names[i]}, false);
  if (run_cmd->parsed()) return run_stages(run_args, {}, true);

  if (sim_cmd->parsed()) {
    if (suite != "default") {
      std::fprintf(stderr, "error: unknown suite '%s' (only: default)\n",
                   suite.c_str());
      return 2;
    }
    nlohmann::json overrides = nlohmann::json::parse(overrides_json(sim_args));
    nlohmann::json sim = nlohmann::json::object();
    if (replications > 0) sim["replications"] = replications;
    if (ess_replications > 0) sim["ess_replications"] = ess_replications;
    if (threads > 0) sim["threads"] = threads;
    if (!sim.empty()) overrides["simulate"] = sim;
    CommonArgs effective = sim_args;
    pa_pipeline* pipeline = nullptr;
    int status = pa_pipeline_open(
        effective.config.empty() ? nullptr : effective.config.c_str(),
        effective.out_dir.c_str(), overrides.dump().c_str(), &pipeline);
    if (status != PA_OK) return fail(status);
    int ran = 0;
    status = pa_pipeline_run_stage(pipeline, "simulate", &ran);
    if (status == PA_OK)
      std::printf("stage 'simulate': %s\n", pa_pipeline_last_message(pipeline));
    const int code = status == PA_OK ? 0 : fail(status);
    pa_pipeline_free(pipeline);
    return code;
  }
  return 0;
}
