#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tseg/attacks.hpp"
#include "tseg/models.hpp"
#include "tseg/synthdata.hpp"

namespace tseg::cli {

struct DatasetSection {
  SceneSpec scene;
  std::uint64_t seed = 1;
  int train_count = 400;
  int eval_count = 100;
};

struct ModelEntry {
  ModelSpec spec;
  TrainConfig train;
};

struct ExperimentSection {
  std::string source = "A";
  std::vector<std::string> targets{"B", "C"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string output_dir = "runs/default";
  bool ablation = true;
  int workers = 1;
};

struct RunConfig {
  DatasetSection dataset;
  std::vector<ModelEntry> models;
  std::vector<AttackConfig> attacks;
  ExperimentSection experiment;

  const ModelEntry* find_model(const std::string& name) const;
  const AttackConfig* find_attack(const std::string& name) const;
  std::vector<std::string> model_names() const;
  std::vector<std::string> attack_names() const;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// The zoo, the baseline attacks, and their transform variants.
RunConfig default_run_config();

// Missing keys take defaults; unknown keys are rejected. A model entry whose
// name is a zoo architecture may omit "layers".
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved JSON that parses back to the same configuration.
std::string dump_run_config(const RunConfig& config);

// Replaces the dataset seed and training seeds with s and the experiment
// seeds with s, s+1, ... (same count).
void apply_seed_override(RunConfig& config, std::uint64_t s);

struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path train_data() const { return data_dir() / "train.tsegdata"; }
  std::filesystem::path eval_data() const { return data_dir() / "eval.tsegdata"; }
  std::filesystem::path models_dir() const { return root / "models"; }
  std::filesystem::path checkpoint(const std::string& model) const { return models_dir() / (model + ".tsegckpt"); }
  std::filesystem::path attacks_dir() const { return root / "attacks"; }
  std::filesystem::path report_dir() const { return root / "report"; }
  std::filesystem::path report_file() const { return report_dir() / "report.txt"; }
  std::filesystem::path csv_file() const { return report_dir() / "results.csv"; }
};

}  // namespace tseg::cli
