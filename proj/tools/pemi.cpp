// pemi: train, evaluate and inspect prompt-tuned hierarchical classifiers.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pemi/commands.hpp"

namespace {

struct Flags {
  std::string config, checkpoint, data, out, level, arg1, arg2;
  std::optional<std::uint64_t> seed;
};

pemi::RunConfig load_config(const Flags& f) {
  if (f.config.empty()) throw pemi::ConfigError("--config is required");
  pemi::RunConfig cfg = pemi::load_run_config(f.config);
  if (f.seed) cfg.train.seed = *f.seed;
  if (!f.out.empty()) cfg.paths.out = f.out;
  return cfg;
}

const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw pemi::ConfigError(std::string(flag) + " is required");
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("pemi");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"Prompt tuning with hierarchical label refinement"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "fit prompts and verbalizer, write checkpoint and log");
  train->add_option("--config", f.config, "run config")->required();
  train->add_option("--seed", f.seed, "overrides train.seed");
  train->add_option("--out", f.out, "overrides paths.out");

  auto* eval = app.add_subcommand("eval", "per-level metrics on a labelled JSONL file");
  eval->add_option("--checkpoint", f.checkpoint)->required();
  eval->add_option("--data", f.data)->required();
  eval->add_option("--out", f.out, "JSON report path (default <checkpoint>/eval_metrics.json)");

  auto* predict = app.add_subcommand("predict", "label one argument pair");
  predict->add_option("--checkpoint", f.checkpoint)->required();
  predict->add_option("--arg1", f.arg1)->required();
  predict->add_option("--arg2", f.arg2)->required();

  auto* gen = app.add_subcommand("gen-synth", "write a planted synthetic dataset");
  gen->add_option("--config", f.config)->required();
  gen->add_option("--seed", f.seed, "overrides synth.seed");
  gen->add_option("--out", f.out, "directory for train/dev/test.jsonl (default paths.*)");

  auto* stats = app.add_subcommand("stats", "class counts per split and level");
  stats->add_option("--config", f.config)->required();

  auto* inspect = app.add_subcommand("inspect-weights", "normalised child weights per parent");
  inspect->add_option("--checkpoint", f.checkpoint)->required();
  inspect->add_option("--level", f.level, "A..B, default all levels");

  auto* exp = app.add_subcommand("export-embeddings", "label embeddings as CSV and a PCA scatter SVG");
  exp->add_option("--checkpoint", f.checkpoint)->required();
  exp->add_option("--level", f.level, "A..B, default all levels");
  exp->add_option("--out", f.out, "output prefix (default <checkpoint>/embeddings)");

  auto* count = app.add_subcommand("count-params", "trainable parameter breakdown");
  count->add_option("--config", f.config);
  count->add_option("--checkpoint", f.checkpoint);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(pemi::ExitCode::kConfig);
  }

  try {
    spdlog::set_level(pemi::log_level_from_env(std::getenv("PEMI_LOG")));
    if (train->parsed()) {
      pemi::cmd_train(load_config(f), std::cout);
    } else if (eval->parsed()) {
      const std::string json = f.out.empty() ? (std::filesystem::path(f.checkpoint) / "eval_metrics.json").string() : f.out;
      pemi::cmd_eval(f.checkpoint, f.data, json, std::cout);
    } else if (predict->parsed()) {
      pemi::cmd_predict(f.checkpoint, f.arg1, f.arg2, std::cout);
    } else if (gen->parsed()) {
      pemi::RunConfig cfg = pemi::load_run_config(f.config);
      if (f.seed) cfg.synth_seed = *f.seed;
      pemi::cmd_gen_synth(cfg, f.out, std::cout);
    } else if (stats->parsed()) {
      pemi::cmd_stats(load_config(f), std::cout);
    } else if (inspect->parsed()) {
      pemi::cmd_inspect_weights(f.checkpoint, f.level, std::cout);
    } else if (exp->parsed()) {
      pemi::cmd_export_embeddings(f.checkpoint, f.level, f.out, std::cout);
    } else if (count->parsed()) {
      if (f.config.empty() == f.checkpoint.empty()) throw pemi::ConfigError("give exactly one of --config or --checkpoint");
      if (f.checkpoint.empty()) {
        pemi::cmd_count_params_config(load_config(f), std::cout);
      } else {
        pemi::cmd_count_params_checkpoint(f.checkpoint, std::cout);
      }
    }
  } catch (const pemi::Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return static_cast<int>(pemi::ExitCode::kInternal);
  }
  return 0;
}
