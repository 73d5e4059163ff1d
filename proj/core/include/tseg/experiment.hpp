#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tseg/attacks.hpp"
#include "tseg/models.hpp"
#include "tseg/report.hpp"
#include "tseg/synthdata.hpp"

namespace tseg {

struct ExperimentOptions {
  int workers = 1;
  std::string dataset_id;
  std::string created;
  // Called after each computed (attack, seed) cell; serialized by the runner.
  std::function<void(const std::string& attack, std::uint64_t seed, double seconds)> on_cell;
};

// Runs attacks on a source model and scores the adversarial images on the
// source and every target. Cells are cached by (config hash, seed), so
// experiments sharing a runner reuse identical attacks.
class ExperimentRunner {
 public:
  ExperimentRunner(Model source, std::vector<Model> targets, std::vector<Sample> eval_samples,
                   ExperimentOptions options = {});

  // One record per (attack, seed, evaluated model), in that nesting order.
  // Per-sample attack seeds are mix_seed(seed, sample_index).
  TransferReport run(const std::string& experiment, std::span<const AttackConfig> attacks,
                     std::span<const std::uint64_t> seeds);

  // Source first, then targets whose name differs from the source.
  const std::vector<Model>& evaluated_models() const noexcept { return models_; }
  const std::vector<double>& clean_miou() const noexcept { return clean_miou_; }

 private:
  struct Cell {
    std::vector<double> adv_miou;
    double max_linf = 0.0;
    bool in_range = true;
    std::vector<TraceRecord> traces;
    std::string error;
  };

  Cell compute_cell(const AttackConfig& cfg, std::uint64_t seed) const;
  TransferReport empty_report() const;

  std::vector<Model> models_;
  std::vector<Sample> samples_;
  ExperimentOptions options_;
  std::vector<double> clean_miou_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, Cell> cache_;
};

// Attack names used by the ablation grid, in row order.
inline constexpr const char* kAblationNames[4] = {"ablation_neither", "ablation_stage1", "ablation_stage2",
                                                  "ablation_both"};

// {pgd, stage1_only, stage2_only, two_stage} variants of base.
std::vector<AttackConfig> ablation_configs(const AttackConfig& base);

TransferReport run_transfer_experiment(const Model& source, const std::vector<Model>& targets,
                                       std::span<const AttackConfig> attacks, std::span<const Sample> eval_samples,
                                       std::span<const std::uint64_t> seeds, const ExperimentOptions& options = {});

TransferReport run_ablation(const Model& source, const std::vector<Model>& targets,
                            std::span<const Sample> eval_samples, std::span<const std::uint64_t> seeds,
                            const AttackConfig& base = {}, const ExperimentOptions& options = {});

}  // namespace tseg
