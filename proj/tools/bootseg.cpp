#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bseg/exp/pipeline.hpp"

namespace {

using nlohmann::json;

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bootseg: bootstrapped building segmentation experiments"};
  app.require_subcommand(1, 1);
  std::string config_path;
  bool force = false;
  int workers = 1;
  int round = 0;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (INI)")->required();
    sub->add_flag("--force", force, "recompute even if artifacts are up to date");
    sub->add_option("--workers", workers, "scoring/prediction threads (env BOOTSEG_WORKERS overrides)")
        ->check(CLI::PositiveNumber);
  };
  const std::pair<const char*, const char*> commands[] = {
      {"synth", "generate the synthetic corpus and its split manifest"},
      {"train", "train round 0 on the full training split"},
      {"bootstrap", "run bootstrap rounds 1..R"},
      {"eval", "evaluate a round's checkpoint on the test split"},
      {"report", "write break-even, PR-curve and cohort tables"},
      {"all", "synth, train, bootstrap and report in sequence"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (std::string(name) == "eval") sub->add_option("--round", round, "round to evaluate")->check(CLI::NonNegativeNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  if (const char* env = std::getenv("BOOTSEG_WORKERS")) {
    try {
      workers = std::stoi(env);
      if (workers < 1) throw std::invalid_argument("not positive");
    } catch (const std::exception&) {
      return fail("usage", std::string("BOOTSEG_WORKERS must be a positive integer, got '") + env + "'", 2);
    }
  }
  bseg::exp::ExperimentConfig config;
  try {
    config = bseg::exp::load_config(config_path);
  } catch (const std::exception& e) {
    return fail("config", e.what(), 2);
  }
  try {
    bseg::exp::CommandOptions options{force, workers, &std::cerr};
    const auto result = bseg::exp::run_command(bseg::exp::parse_command(command), config, options, round);
    json artifacts = json::array();
    for (const auto& a : result.artifacts) artifacts.push_back(a.string());
    std::cout << json{{"command", command},
                      {"status", result.status == bseg::exp::Status::kDone ? "done" : "skipped"},
                      {"config_hash", bseg::exp::config_hash(config)},
                      {"artifacts", artifacts}}
                     .dump()
              << std::endl;
    return 0;
  } catch (const bseg::exp::PipelineError& e) {
    return fail(e.kind(), e.what(), e.kind() == "config" ? 2 : 1);
  } catch (const bseg::ContractViolation& e) {
    return fail("config", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
}
