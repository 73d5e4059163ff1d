#include <span>

#include "doctest.h"
#include "tseg/attacks.hpp"
#include "tseg/experiment.hpp"
#include "tseg/metrics.hpp"
#include "tseg/models.hpp"
#include "tseg/rng.hpp"
#include "tseg/synthdata.hpp"

using namespace tseg;

namespace {

struct Desk {
  Dataset train_set = generate_dataset(mix_seed(1, 0), SceneSpec{}, 400);
  Dataset eval_set = generate_dataset(mix_seed(1, 1), SceneSpec{}, 100);
};

const Desk& desk() {
  static const Desk d;
  return d;
}

const Checkpoint& trained_a() {
  static const Checkpoint a = train(zoo_model("A", 4), desk().train_set, TrainConfig{}, &desk().eval_set);
  return a;
}

int decreasing_epochs(const std::vector<double>& losses) {
  int n = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) n += losses[i] < losses[i - 1] ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("default model A trains past the 0.85 gate with a steadily falling loss") {
  const Checkpoint& a = trained_a();
  MESSAGE("model A eval mIoU " << a.meta.eval_miou << ", decreasing epochs "
                               << decreasing_epochs(a.meta.epoch_losses) << "/29");
  REQUIRE(a.meta.epoch_losses.size() == 30);
  CHECK(a.meta.eval_miou >= 0.85);
  CHECK(decreasing_epochs(a.meta.epoch_losses) >= 25);
  CHECK(evaluate_model(a.model, desk().eval_set.samples).miou == a.meta.eval_miou);
}

TEST_CASE("a second architecture also reaches the gate") {
  const Checkpoint b = train(zoo_model("B", 4), desk().train_set, TrainConfig{}, &desk().eval_set);
  MESSAGE("model B eval mIoU " << b.meta.eval_miou);
  CHECK(b.meta.eval_miou >= 0.85);
}

TEST_CASE("default pgd drives the source model below 0.10 mIoU") {
  const Model& a = trained_a().model;
  AttackConfig pgd;
  const std::vector<std::uint64_t> seeds{0};
  ExperimentRunner runner(a, {}, desk().eval_set.samples);
  const auto rep = runner.run("transfer", std::span(&pgd, 1), seeds);
  MESSAGE("pgd source mIoU " << rep.records[0].adv_miou);
  CHECK(rep.records[0].adv_miou < 0.10);
  CHECK(rep.records[0].max_linf <= pgd.epsilon + 1e-6);
}

TEST_CASE("segpgd beats pgd on the source for most seeds") {
  const Model& a = trained_a().model;
  const std::vector<Sample> subset(desk().eval_set.samples.begin(), desk().eval_set.samples.begin() + 25);
  AttackConfig pgd;
  AttackConfig seg;
  seg.name = "segpgd";
  seg.mode = AttackMode::segpgd;
  const std::vector<AttackConfig> attacks{pgd, seg};
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  ExperimentRunner runner(a, {}, subset);
  const auto rep = runner.run("transfer", attacks, seeds);
  const auto p = rep.adv_values("pgd", "A");
  const auto s = rep.adv_values("segpgd", "A");
  REQUIRE(p.size() == 10);
  REQUIRE(s.size() == 10);
  int wins = 0;
  for (int i = 0; i < 10; ++i) wins += s[i] <= p[i] ? 1 : 0;
  MESSAGE("segpgd <= pgd on " << wins << "/10 seeds");
  CHECK(wins >= 8);
}

TEST_CASE("two_stage stage flag moves from 1 to 2") {
  const Model& a = trained_a().model;
  AttackConfig cfg;
  cfg.mode = AttackMode::two_stage;
  const int fallback_at = 15;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& s = desk().eval_set.samples[i];
    cfg.seed = mix_seed(0, i);
    const auto log = run_attack(a, s.image, s.labels, cfg).log;
    REQUIRE(log.front().stage == 1);
    REQUIRE(log.back().stage == 2);
    for (const auto& r : log) {
      if (r.iteration >= fallback_at) REQUIRE(r.stage == 2);
      if (r.stage == 2 && r.iteration < fallback_at) REQUIRE(r.misclassified_fraction == 1.0);
    }
  }

  // Small scenes from the same distribution are easy: every pixel is
  // fooled within budget, so stage 2 starts without the fallback.
  SceneSpec small;
  small.height = 8;
  small.width = 8;
  cfg.stage2_fallback.reset();
  int early = 0;
  for (std::uint64_t i = 0; i < 60; ++i) {
    const Sample s = generate_sample(mix_seed(99, i), small);
    cfg.seed = mix_seed(0, i);
    const auto log = run_attack(a, s.image, s.labels, cfg).log;
    for (std::size_t t = 1; t < log.size(); ++t) {
      if (log[t].stage == 2 && log[t - 1].stage == 1) {
        ++early;
        REQUIRE(log[t].misclassified_fraction == 1.0);
        REQUIRE(log[t - 1].misclassified_fraction < 1.0);
        break;
      }
    }
  }
  MESSAGE(early << " of 60 small scenes entered stage 2 without the fallback");
  CHECK(early >= 1);
}
