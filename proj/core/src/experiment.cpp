#include "tseg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "tseg/error.hpp"
#include "tseg/metrics.hpp"
#include "tseg/rng.hpp"

namespace tseg {

ExperimentRunner::ExperimentRunner(Model source, std::vector<Model> targets, std::vector<Sample> eval_samples,
                                   ExperimentOptions options)
    : samples_(std::move(eval_samples)), options_(std::move(options)) {
  if (samples_.empty()) throw ConfigError("experiment needs at least one eval sample");
  models_.push_back(std::move(source));
  for (auto& t : targets) {
    if (t.spec.name == models_.front().spec.name) continue;
    models_.push_back(std::move(t));
  }
  const auto& first = samples_.front().image;
  for (const auto& m : models_) {
    m.spec.validate();
    if (m.spec.in_channels != first.dim(0)) {
      throw ConfigError("model '" + m.spec.name + "' expects " + std::to_string(m.spec.in_channels) +
                        " channels but eval images have " + std::to_string(first.dim(0)));
    }
    if (m.spec.num_classes() != models_.front().spec.num_classes()) {
      throw ConfigError("model '" + m.spec.name + "' disagrees with the source on the class count");
    }
    clean_miou_.push_back(evaluate_model(m, samples_).miou);
  }
}

ExperimentRunner::Cell ExperimentRunner::compute_cell(const AttackConfig& base, std::uint64_t seed) const {
  Cell cell;
  const int classes = models_.front().spec.num_classes();
  std::vector<std::vector<LabelMap>> preds(models_.size());
  std::vector<LabelMap> truth;
  const int iterations = std::max(base.iterations, 0);
  std::vector<double> loss(iterations, 0.0), stage2(iterations, 0.0), mis(iterations, 0.0), kl(iterations, 0.0);
  try {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      AttackConfig cfg = base;
      cfg.seed = mix_seed(seed, i);
      const AdvResult adv = run_attack(models_.front(), samples_[i].image, samples_[i].labels, cfg);
      for (const auto& rec : adv.log) {
        cell.max_linf = std::max(cell.max_linf, rec.linf);
        cell.in_range = cell.in_range && rec.in_range;
        loss[rec.iteration] += rec.loss;
        stage2[rec.iteration] += rec.stage == 2 ? 1.0 : 0.0;
        mis[rec.iteration] += rec.misclassified_fraction;
        kl[rec.iteration] += rec.mean_kl;
      }
      preds[0].push_back(adv.prediction);
      for (std::size_t m = 1; m < models_.size(); ++m) preds[m].push_back(predict(models_[m], adv.x_adv));
      truth.push_back(samples_[i].labels);
    }
  } catch (const Error& e) {
    cell.error = std::string("error: ") + e.what();
    cell.adv_miou.assign(models_.size(), std::numeric_limits<double>::quiet_NaN());
    return cell;
  }
  for (std::size_t m = 0; m < models_.size(); ++m) cell.adv_miou.push_back(miou(preds[m], truth, classes));
  const double n = static_cast<double>(samples_.size());
  for (int t = 0; t < iterations; ++t) {
    cell.traces.push_back({base.name, seed, t, loss[t] / n, stage2[t] / n, mis[t] / n, kl[t] / n});
  }
  return cell;
}

TransferReport ExperimentRunner::empty_report() const {
  TransferReport report;
  report.dataset_id = options_.dataset_id;
  report.created = options_.created;
  report.eval_samples = static_cast<int>(samples_.size());
  return report;
}

TransferReport ExperimentRunner::run(const std::string& experiment, std::span<const AttackConfig> attacks,
                                     std::span<const std::uint64_t> seeds) {
  using Key = std::pair<std::uint64_t, std::uint64_t>;
  std::vector<std::pair<const AttackConfig*, std::uint64_t>> todo;
  std::vector<Key> todo_keys;
  for (const auto& cfg : attacks) {
    for (std::uint64_t seed : seeds) {
      const Key key{cfg.hash(), seed};
      if (cache_.count(key) || std::find(todo_keys.begin(), todo_keys.end(), key) != todo_keys.end()) continue;
      todo.emplace_back(&cfg, seed);
      todo_keys.push_back(key);
    }
  }

  std::vector<Cell> results(todo.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < todo.size(); j = next++) {
      const auto start = std::chrono::steady_clock::now();
      results[j] = compute_cell(*todo[j].first, todo[j].second);
      if (options_.on_cell) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::lock_guard lock(callback_mutex);
        options_.on_cell(todo[j].first->name, todo[j].second, secs);
      }
    }
  };
  const int workers = std::max(1, std::min<int>(options_.workers, static_cast<int>(todo.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (std::size_t j = 0; j < todo.size(); ++j) cache_[todo_keys[j]] = std::move(results[j]);

  TransferReport report = empty_report();
  for (const auto& cfg : attacks) {
    for (std::uint64_t seed : seeds) {
      const Cell& cell = cache_.at({cfg.hash(), seed});
      for (std::size_t m = 0; m < models_.size(); ++m) {
        TransferRecord r;
        r.experiment = experiment;
        r.source = models_.front().spec.name;
        r.attack = cfg.name;
        r.config_hash = cfg.hash();
        r.target = models_[m].spec.name;
        r.seed = seed;
        r.clean_miou = clean_miou_[m];
        r.adv_miou = cell.adv_miou[m];
        r.max_linf = cell.max_linf;
        r.in_range = cell.in_range;
        r.status = cell.error.empty() ? "ok" : cell.error;
        report.records.push_back(std::move(r));
      }
      for (auto t : cell.traces) {
        t.attack = cfg.name;
        report.traces.push_back(std::move(t));
      }
    }
  }
  return report;
}

std::vector<AttackConfig> ablation_configs(const AttackConfig& base) {
  const AttackMode modes[4] = {AttackMode::pgd, AttackMode::stage1_only, AttackMode::stage2_only,
                               AttackMode::two_stage};
  std::vector<AttackConfig> out;
  for (int i = 0; i < 4; ++i) {
    AttackConfig cfg = base;
    cfg.name = kAblationNames[i];
    cfg.mode = modes[i];
    out.push_back(cfg);
  }
  return out;
}

TransferReport run_transfer_experiment(const Model& source, const std::vector<Model>& targets,
                                       std::span<const AttackConfig> attacks, std::span<const Sample> eval_samples,
                                       std::span<const std::uint64_t> seeds, const ExperimentOptions& options) {
  if (targets.empty()) throw ConfigError("transfer experiment needs at least one target model");
  ExperimentRunner runner(source, targets, {eval_samples.begin(), eval_samples.end()}, options);
  return runner.run("transfer", attacks, seeds);
}

TransferReport run_ablation(const Model& source, const std::vector<Model>& targets,
                            std::span<const Sample> eval_samples, std::span<const std::uint64_t> seeds,
                            const AttackConfig& base, const ExperimentOptions& options) {
  ExperimentRunner runner(source, targets, {eval_samples.begin(), eval_samples.end()}, options);
  const auto configs = ablation_configs(base);
  return runner.run("ablation", configs, seeds);
}

}  // namespace tseg
