#include <cmath>

#include "doctest.h"
#include "temp_dir.hpp"
#include "tseg/autograd.hpp"
#include "tseg/error.hpp"
#include "tseg/models.hpp"
#include "tseg/synthdata.hpp"

using namespace tseg;
using tseg::testing::TempDir;

namespace {

SceneSpec tiny_scene() {
  SceneSpec s;
  s.height = 8;
  s.width = 8;
  return s;
}

ModelSpec tiny_model() {
  ModelSpec m;
  m.name = "tiny";
  m.layers = {{4, 3, Activation::relu}, {4, 1, Activation::none}};
  return m;
}

}  // namespace

TEST_CASE("init is deterministic per seed and bounded by the fan-in scale") {
  const ModelSpec spec = zoo_model("A", 4);
  const Parameters a = init_params(11, spec);
  const Parameters b = init_params(11, spec);
  REQUIRE(a.size() == spec.layers.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].kernel == b[i].kernel);
    CHECK(a[i].bias == b[i].bias);
    const double fan_in = static_cast<double>(a[i].kernel.dim(1)) * a[i].kernel.dim(2) * a[i].kernel.dim(3);
    const double bound = std::sqrt(6.0 / fan_in);
    for (float v : a[i].kernel.data()) REQUIRE(std::abs(v) <= bound * (1.0 + 1e-6));
    for (float v : a[i].bias.data()) REQUIRE(v == 0.0f);
  }
  CHECK(params_hash(a) == params_hash(b));
  CHECK(params_hash(a) != params_hash(init_params(12, spec)));
}

TEST_CASE("zoo architectures are distinct and valid") {
  const auto zoo = default_zoo(4);
  REQUIRE(zoo.size() >= 3);
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    CHECK_NOTHROW(zoo[i].validate());
    CHECK(zoo[i].num_classes() == 4);
    CHECK(zoo[i].layers.back().activation == Activation::none);
    for (std::size_t j = i + 1; j < zoo.size(); ++j) CHECK_FALSE(zoo[i].layers == zoo[j].layers);
  }
  CHECK(zoo_model("A", 4).layers.size() == 3);
  CHECK(zoo_model("B", 4).layers.size() == 5);
  CHECK(zoo_model("C", 4).layers.size() == 4);
  CHECK_THROWS_AS(zoo_model("Z", 4), ConfigError);
}

TEST_CASE("model spec validation") {
  ModelSpec m = tiny_model();
  CHECK_NOTHROW(m.validate());
  m.layers[0].kernel = 4;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = tiny_model();
  m.layers.back().activation = Activation::relu;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = tiny_model();
  m.layers.clear();
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = tiny_model();
  m.input_std = 0.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  CHECK(parse_activation(to_string(Activation::relu)) == Activation::relu);
  CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
}

TEST_CASE("all-zero parameters give zero logits and a uniform softmax") {
  const ModelSpec spec = zoo_model("B", 4);
  Parameters p = init_params(1, spec);
  for (auto& l : p) {
    l.kernel.fill(0.0f);
    l.bias.fill(0.0f);
  }
  const Model m{spec, p};
  const Sample s = generate_sample(3, SceneSpec{});
  const Tensor logits = forward(m, s.image);
  CHECK(logits.shape() == Shape{4, 32, 32});
  for (float v : logits.data()) REQUIRE(v == 0.0f);
  const Tensor probs = softmax_channels(logits);
  for (float v : probs.data()) REQUIRE(v == doctest::Approx(0.25));
}

TEST_CASE("forward is deterministic and keeps the input resolution") {
  for (const auto& spec : default_zoo(4)) {
    const Model m{spec, init_params(5, spec)};
    const Sample s = generate_sample(8, SceneSpec{});
    const Tensor a = forward(m, s.image);
    const Tensor b = forward(m, s.image);
    CHECK(a == b);
    CHECK(a.shape() == Shape{4, 32, 32});
    CHECK(predict(m, s.image) == argmax_channels(a));
  }
}

TEST_CASE("forward rejects a mismatched input") {
  const ModelSpec spec = zoo_model("A", 4);
  const Model m{spec, init_params(5, spec)};
  CHECK_THROWS_AS(forward(m, Tensor(Shape{2, 8, 8})), ShapeError);
  CHECK_THROWS_AS(check_parameters(zoo_model("B", 4), m.params), ShapeError);
}

TEST_CASE("lr = 0 leaves the parameters at their initial values") {
  const Dataset d = generate_dataset(1, tiny_scene(), 10);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  cfg.seed = 4;
  const Checkpoint c = train(tiny_model(), d, cfg);
  CHECK(params_hash(c.model.params) == params_hash(init_params(4, tiny_model())));
  CHECK(c.meta.epoch_losses.size() == 2);
  CHECK(c.meta.epoch_losses[0] == c.meta.epoch_losses[1]);
  CHECK(c.meta.eval_miou == -1.0);
}

TEST_CASE("training is reproducible and lowers the loss") {
  const Dataset d = generate_dataset(1, tiny_scene(), 24);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  const Checkpoint a = train(tiny_model(), d, cfg, &d);
  const Checkpoint b = train(tiny_model(), d, cfg, &d);
  CHECK(params_hash(a.model.params) == params_hash(b.model.params));
  CHECK(a.meta == b.meta);
  CHECK(a.meta.epoch_losses.back() < a.meta.epoch_losses.front());
  CHECK(a.meta.final_train_loss == a.meta.epoch_losses.back());
  CHECK(a.meta.eval_miou >= 0.0);
  CHECK(a.meta.eval_miou <= 1.0);
  cfg.lr_schedule = LrSchedule::constant;
  const Checkpoint c = train(tiny_model(), d, cfg);
  CHECK(params_hash(c.model.params) != params_hash(a.model.params));
}

TEST_CASE("divergence raises a training error with the epoch index") {
  const Dataset d = generate_dataset(1, tiny_scene(), 16);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e30;
  cfg.lr_schedule = LrSchedule::constant;
  try {
    train(tiny_model(), d, cfg);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 0);
    CHECK(e.epoch() < 5);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_lr_schedule("cosine") == LrSchedule::cosine);
  CHECK(parse_lr_schedule(to_string(LrSchedule::constant)) == LrSchedule::constant);
  CHECK_THROWS_AS(parse_lr_schedule("step"), ConfigError);
  CHECK_THROWS_AS(train(tiny_model(), Dataset{4, {}}, TrainConfig{}), Error);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit for bit") {
  TempDir dir;
  const Dataset d = generate_dataset(2, tiny_scene(), 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  const Checkpoint c = train(tiny_model(), d, cfg, &d);
  save_checkpoint(dir / "m.tsegckpt", c);
  const Checkpoint back = load_checkpoint(dir / "m.tsegckpt");
  CHECK(back.model.spec == c.model.spec);
  CHECK(back.meta == c.meta);
  CHECK(params_hash(back.model.params) == params_hash(c.model.params));
  const Sample probe = generate_sample(77, tiny_scene());
  CHECK(forward(back.model, probe.image) == forward(c.model, probe.image));
}

TEST_CASE("corrupt checkpoints give specific errors") {
  TempDir dir;
  ModelSpec spec = tiny_model();
  spec.name = "A";
  const Checkpoint c{Model{spec, init_params(1, spec)}, TrainMetadata{}};
  save_checkpoint(dir / "m", c);
  const std::string good = tseg::testing::read_bytes(dir / "m");

  tseg::testing::write_bytes(dir / "empty", "");
  CHECK_THROWS_AS(load_checkpoint(dir / "empty"), TruncationError);

  std::string bad = good;
  bad[0] = 'X';
  tseg::testing::write_bytes(dir / "magic", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic"), MagicError);

  bad = good;
  bad[8] = 9;
  tseg::testing::write_bytes(dir / "version", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "version"), VersionError);

  // First layer's out_channels: magic, version, name "A", in_channels, mean, std, L.
  const std::size_t offset = 8 + 4 + (4 + 1) + 4 + 8 + 8 + 4;
  REQUIRE(static_cast<unsigned char>(good[offset]) == 4);
  bad = good;
  bad[offset] = 5;
  tseg::testing::write_bytes(dir / "shape", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "shape"), ShapeError);

  tseg::testing::write_bytes(dir / "short", good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(dir / "short"), TruncationError);
}
