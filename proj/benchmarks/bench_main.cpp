#include <benchmark/benchmark.h>

#include <map>
#include <string>

#include "tseg/attacks.hpp"
#include "tseg/autograd.hpp"
#include "tseg/experiment.hpp"
#include "tseg/metrics.hpp"
#include "tseg/models.hpp"
#include "tseg/rng.hpp"
#include "tseg/synthdata.hpp"

using namespace tseg;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Args: input channels, output channels, kernel; 32x32 images.
void BM_Conv2dForward(benchmark::State& state) {
  const int cin = static_cast<int>(state.range(0)), cout = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  const auto x = make_leaf(random_tensor(Shape{cin, 32, 32}, 1));
  const auto w = make_leaf(random_tensor(Shape{cout, cin, k, k}, 2));
  const auto b = make_leaf(random_tensor(Shape{cout}, 3));
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, (k - 1) / 2)->value.data().data());
  state.SetItemsProcessed(state.iterations() * 32 * 32 * cout * cin * k * k);
}
BENCHMARK(BM_Conv2dForward)->Args({3, 16, 5})->Args({16, 32, 5})->Args({32, 32, 3});

void BM_Conv2dBackward(benchmark::State& state) {
  const int cin = static_cast<int>(state.range(0)), cout = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  const Tensor xv = random_tensor(Shape{cin, 32, 32}, 1);
  const Tensor wv = random_tensor(Shape{cout, cin, k, k}, 2);
  const Tensor bv = random_tensor(Shape{cout}, 3);
  for (auto _ : state) {
    const auto x = make_leaf(xv, true);
    const auto y = conv2d(x, make_leaf(wv, true), make_leaf(bv, true), (k - 1) / 2);
    backward(sum(y));
    benchmark::DoNotOptimize(x->grad.data().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({3, 16, 5})->Args({16, 32, 5})->Args({32, 32, 3});

const Model& bench_model(const std::string& name) {
  static std::map<std::string, Model> cache;
  auto it = cache.find(name);
  if (it == cache.end()) {
    const ModelSpec spec = zoo_model(name, 4);
    it = cache.emplace(name, Model{spec, init_params(7, spec)}).first;
  }
  return it->second;
}

const Sample& bench_sample() {
  static const Sample s = generate_sample(11, SceneSpec{});
  return s;
}

void BM_ModelForward(benchmark::State& state, const std::string& name) {
  const Model& m = bench_model(name);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, bench_sample().image).data().data());
}
BENCHMARK_CAPTURE(BM_ModelForward, A, std::string("A"));
BENCHMARK_CAPTURE(BM_ModelForward, B, std::string("B"));
BENCHMARK_CAPTURE(BM_ModelForward, C, std::string("C"));

// One attack iteration: forward, loss, backward and step on model A.
void BM_AttackIteration(benchmark::State& state) {
  AttackConfig cfg;
  cfg.mode = static_cast<AttackMode>(state.range(0));
  cfg.iterations = 1;
  const Model& m = bench_model("A");
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_attack(m, bench_sample().image, bench_sample().labels, cfg).x_adv.data().data());
  }
  state.SetLabel(to_string(cfg.mode));
}
BENCHMARK(BM_AttackIteration)
    ->Arg(static_cast<int>(AttackMode::pgd))
    ->Arg(static_cast<int>(AttackMode::segpgd))
    ->Arg(static_cast<int>(AttackMode::two_stage))
    ->Unit(benchmark::kMillisecond);

void BM_PixelKL(benchmark::State& state) {
  const Tensor a = random_tensor(Shape{4, 32, 32}, 1);
  const Tensor b = random_tensor(Shape{4, 32, 32}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(pixel_kl(a, b).mean);
}
BENCHMARK(BM_PixelKL);

void BM_GenerateSample(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_sample(seed++, SceneSpec{}).image.data().data());
}
BENCHMARK(BM_GenerateSample);

}  // namespace
BENCHMARK_MAIN();
