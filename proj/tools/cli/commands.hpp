#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "tseg/report.hpp"

namespace tseg::cli {

struct CommandEnv {
  // How the user names the config on the command line; used in hints.
  std::string config_arg = "<config.json>";
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

struct GenDataResult {
  std::filesystem::path train_path;
  std::filesystem::path eval_path;
};

struct AttackArtifacts {
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;
  AdvResult result;
};

struct EvaluateResult {
  TransferReport report;
  std::vector<std::filesystem::path> files;
};

// Every command throws tseg::Error on failure.
GenDataResult cmd_gen_data(const RunConfig& config, const CommandEnv& env);
Checkpoint cmd_train(const RunConfig& config, const std::string& model, const CommandEnv& env);
AttackArtifacts cmd_attack(const RunConfig& config, const std::string& attack, int index, const CommandEnv& env);
EvaluateResult cmd_evaluate(const RunConfig& config, const CommandEnv& env);
void cmd_report(const std::filesystem::path& report_path, bool markdown, const CommandEnv& env);

// One matrix per experiment: a clean row, then one row per attack, one
// column per evaluated model; cells are median mIoU over seeds in percent.
std::string format_report_table(const TransferReport& report, bool markdown);

// Identifier derived from the eval samples' content.
std::string dataset_id(const Dataset& eval);

}  // namespace tseg::cli
