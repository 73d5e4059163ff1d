#include <cstdint>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cli/commands.hpp"
#include "cli/run_config.hpp"
#include "tseg/error.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2 };

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep large im2col buffers on the heap instead of a fresh mmap per op.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  using namespace tseg::cli;

  CLI::App app{"Two-stage segmentation attack lab on synthetic data"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out_dir;
  bool dump_config = false;
  app.add_option("--config", config_path, "Run configuration (JSON); built-in defaults when omitted");
  app.add_option("--seed", seed, "Override dataset, training and experiment seeds");
  app.add_option("--workers", workers, "Parallel experiment workers")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Override experiment.output_dir");
  app.add_flag("--dump-config", dump_config, "Print the fully resolved config and exit");

  auto* gen = app.add_subcommand("gen-data", "Generate train/eval datasets");
  std::string model;
  auto* train = app.add_subcommand("train", "Train one model from the config");
  train->add_option("model,--model", model, "Model name")->required();
  std::string attack;
  int index = 0;
  auto* atk = app.add_subcommand("attack", "Attack one eval sample and write images and the iteration log");
  atk->add_option("--attack", attack, "Attack name from the config")->required();
  atk->add_option("--index", index, "Eval sample index")->required();
  auto* evaluate = app.add_subcommand("evaluate", "Run the transfer and ablation experiments");
  std::string report_path;
  bool markdown = false;
  auto* report = app.add_subcommand("report", "Print the mIoU matrix of a report");
  report->add_option("report", report_path, "Report file (default: <output_dir>/report/report.txt)");
  report->add_flag("--markdown", markdown, "Emit pipe tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    RunConfig config = config_path.empty() ? default_run_config() : load_run_config(config_path);
    if (seed) apply_seed_override(config, *seed);
    if (workers) config.experiment.workers = *workers;
    if (!out_dir.empty()) config.experiment.output_dir = out_dir;
    config.validate();

    if (dump_config) {
      std::cout << dump_run_config(config);
      return kOk;
    }
    CommandEnv env;
    if (!config_path.empty()) env.config_arg = config_path;

    if (gen->parsed()) {
      cmd_gen_data(config, env);
    } else if (train->parsed()) {
      cmd_train(config, model, env);
    } else if (atk->parsed()) {
      cmd_attack(config, attack, index, env);
    } else if (evaluate->parsed()) {
      cmd_evaluate(config, env);
    } else if (report->parsed()) {
      cmd_report(report_path.empty() ? OutputLayout{config.experiment.output_dir}.report_file() : std::filesystem::path(report_path),
                 markdown, env);
    } else {
      std::cerr << app.help();
      return kUsage;
    }
  } catch (const tseg::ConfigError& e) {
    std::cerr << "tseg: config error: " << e.what() << "\n";
    return kUsage;
  } catch (const tseg::Error& e) {
    std::cerr << "tseg: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "tseg: unexpected error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
