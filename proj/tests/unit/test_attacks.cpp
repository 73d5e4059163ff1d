#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "tseg/attacks.hpp"
#include "tseg/autograd.hpp"
#include "tseg/error.hpp"
#include "tseg/models.hpp"
#include "tseg/rng.hpp"
#include "tseg/synthdata.hpp"

using namespace tseg;

namespace {

Model random_model(std::uint64_t seed, int classes = 4) {
  ModelSpec spec;
  spec.name = "r";
  spec.layers = {{6, 3, Activation::relu}, {classes, 3, Activation::none}};
  return Model{spec, init_params(seed, spec)};
}

Sample small_sample(std::uint64_t seed) {
  SceneSpec s;
  s.height = 10;
  s.width = 10;
  return generate_sample(seed, s);
}

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<bool> mask_of(const std::vector<std::uint8_t>& m) { return {m.begin(), m.end()}; }

bool disjoint_and_total(const PixelPartition& p, std::size_t pixels) {
  if (p.mask_a.size() != pixels || p.mask_b.size() != pixels) return false;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (p.mask_a[i] + p.mask_b[i] != 1) return false;
  }
  return p.count_a() + p.count_b() == pixels;
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

const AttackMode kModes[] = {AttackMode::pgd, AttackMode::segpgd, AttackMode::stage1_only, AttackMode::stage2_only,
                             AttackMode::two_stage};
const GradientTransform kTransforms[] = {GradientTransform::none, GradientTransform::momentum,
                                         GradientTransform::translation, GradientTransform::nesterov};

}  // namespace

TEST_SUITE("partitions") {
  TEST_CASE("one-hot logits of the labels leave no misclassified pixel") {
    const LabelMap y = oracle::random_labels(5, 6, 4, 1);
    Tensor logits(Shape{4, 5, 6});
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) logits.at(y.at(r, c), r, c) = 1.0f;
    }
    const auto p = partition_by_correctness(logits, y);
    CHECK(p.count_b() == 0);
    CHECK(p.count_a() == 30);
  }

  TEST_CASE("shifted labels leave no correct pixel") {
    const LabelMap y = oracle::random_labels(5, 6, 4, 2);
    Tensor logits(Shape{4, 5, 6});
    LabelMap shifted = y;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) {
        logits.at(y.at(r, c), r, c) = 1.0f;
        shifted.at(r, c) = static_cast<std::uint16_t>((y.at(r, c) + 1) % 4);
      }
    }
    const auto p = partition_by_correctness(logits, shifted);
    CHECK(p.count_a() == 0);
    CHECK(p.count_b() == 30);
  }

  TEST_CASE("correctness partition matches the per-pixel argmax oracle") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Tensor logits = oracle::random_tensor<float>(Shape{3, 4, 4}, seed);
      const LabelMap y = oracle::random_labels(4, 4, 3, seed + 1000);
      const auto p = partition_by_correctness(logits, y);
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          const bool correct = oracle::argmax(oracle::pixel_logits(logits, r, c)) == y.at(r, c);
          REQUIRE(p.mask_a[static_cast<std::size_t>(r) * 4 + c] == (correct ? 1 : 0));
        }
      }
    }
  }

  TEST_CASE("argmax ties go to the lowest class") {
    Tensor logits(Shape{3, 1, 2}, 0.5f);
    LabelMap y(1, 2);
    y[0] = 0;
    y[1] = 2;
    const auto p = partition_by_correctness(logits, y);
    CHECK(p.mask_a[0] == 1);
    CHECK(p.mask_a[1] == 0);
  }

  TEST_CASE("both partitions are disjoint and total on 1000 random instances") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
      const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8), m = rng.uniform_int(2, 5);
      const Tensor a = oracle::random_tensor<float>(Shape{m, h, w}, rng.next_u64(), -4.0, 4.0);
      const Tensor b = oracle::random_tensor<float>(Shape{m, h, w}, rng.next_u64(), -4.0, 4.0);
      const LabelMap y = oracle::random_labels(h, w, m, rng.next_u64());
      const std::size_t pixels = static_cast<std::size_t>(h) * w;
      REQUIRE(disjoint_and_total(partition_by_correctness(a, y), pixels));
      REQUIRE(disjoint_and_total(partition_by_kl(pixel_kl(a, b)), pixels));
    }
  }

  TEST_CASE("partition input mismatch is rejected") {
    CHECK_THROWS_AS(partition_by_correctness(Tensor(Shape{3, 4, 4}), LabelMap(4, 5)), ConfigError);
  }
}

TEST_SUITE("kl") {
  TEST_CASE("identical logits give zero divergence everywhere") {
    const Tensor a = oracle::random_tensor<float>(Shape{4, 5, 5}, 3, -5.0, 5.0);
    const KLMap kl = pixel_kl(a, a);
    for (double v : kl.values) REQUIRE(v == 0.0);
    CHECK(kl.mean == 0.0);
  }

  TEST_CASE("two-class hand example") {
    Tensor adv(Shape{2, 1, 1});
    Tensor clean(Shape{2, 1, 1});
    adv[0] = static_cast<float>(std::log(0.9));
    adv[1] = static_cast<float>(std::log(0.1));
    const KLMap kl = pixel_kl(adv, clean);
    const double want = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(kl.values[0] == doctest::Approx(want).epsilon(1e-6));
    CHECK(kl.values[0] == doctest::Approx(0.3681).epsilon(1e-4));
  }

  TEST_CASE("divergence is nonnegative and matches the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const Tensor a = oracle::random_tensor<float>(Shape{4, 3, 3}, seed, -6.0, 6.0);
      const Tensor b = oracle::random_tensor<float>(Shape{4, 3, 3}, seed + 5000, -6.0, 6.0);
      const KLMap kl = pixel_kl(a, b);
      double sum = 0.0;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          const double v = kl.values[static_cast<std::size_t>(r) * 3 + c];
          REQUIRE(v >= -1e-7);
          REQUIRE(v == doctest::Approx(oracle::kl_pixel(oracle::pixel_logits(a, r, c), oracle::pixel_logits(b, r, c)))
                           .epsilon(1e-9)
                           .scale(1e-12));
          sum += v;
        }
      }
      REQUIRE(kl.mean == doctest::Approx(sum / 9.0).epsilon(1e-12));
    }
  }

  TEST_CASE("divergence is zero exactly when the pixel distributions agree") {
    Tensor a = oracle::random_tensor<float>(Shape{3, 2, 2}, 8);
    Tensor b = a;
    b.at(1, 0, 1) += 0.25f;
    const KLMap kl = pixel_kl(a, b);
    CHECK(kl.values[1] > 0.0);
    CHECK(kl.values[0] == 0.0);
    CHECK(kl.values[2] == 0.0);
    CHECK(kl.values[3] == 0.0);
    // A constant shift of one pixel's logits leaves its softmax unchanged.
    Tensor shifted = a;
    for (int c = 0; c < 3; ++c) shifted.at(c, 1, 1) += 2.0f;
    CHECK(std::abs(pixel_kl(shifted, a).values[3]) < 1e-9);
  }

  TEST_CASE("vanishing probabilities stay finite and use the floor") {
    Tensor adv(Shape{2, 1, 1});
    Tensor clean(Shape{2, 1, 1});
    adv[0] = 0.0f;
    adv[1] = -1e4f;
    clean[1] = 50.0f;
    const KLMap kl = pixel_kl(adv, clean);
    CHECK(std::isfinite(kl.values[0]));
    CHECK(kl.values[0] >= 0.0);
    CHECK(kl.values[0] == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
  }

  TEST_CASE("constant map has no high-divergence pixel") {
    Tensor same_every_pixel(Shape{3, 4, 4});
    Tensor ref(Shape{3, 4, 4});
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        same_every_pixel.at(0, r, c) = 1.3f;
        same_every_pixel.at(2, r, c) = -0.7f;
      }
    }
    CHECK(partition_by_kl(pixel_kl(same_every_pixel, ref)).count_a() == 0);
  }

  TEST_CASE("one hot pixel is the only high-divergence pixel") {
    for (int hw : {2, 3, 8}) {
      KLMap kl{hw, hw, std::vector<double>(static_cast<std::size_t>(hw) * hw, 0.0), 0.0};
      kl.values[1] = 2.5;
      kl.mean = 2.5 / (hw * hw);
      const auto p = partition_by_kl(kl);
      CHECK(p.count_a() == 1);
      CHECK(p.mask_a[1] == 1);
    }
  }

  TEST_CASE("kl partition matches the threshold oracle") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Tensor a = oracle::random_tensor<float>(Shape{3, 5, 4}, seed, -3.0, 3.0);
      const Tensor b = oracle::random_tensor<float>(Shape{3, 5, 4}, seed + 99, -3.0, 3.0);
      const KLMap kl = pixel_kl(a, b);
      long double total = 0.0L;
      for (double v : kl.values) total += v;
      const double mean = static_cast<double>(total / kl.values.size());
      const auto p = partition_by_kl(kl);
      for (std::size_t i = 0; i < kl.values.size(); ++i) REQUIRE(p.mask_a[i] == (kl.values[i] > mean ? 1 : 0));
    }
  }
}

TEST_SUITE("stage losses") {
  TEST_CASE("equal weights halve the mean pixel loss exactly") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Tensor ce = oracle::random_tensor<float>(Shape{6, 7}, seed, 0.0, 5.0);
      PixelPartition part{6, 7, {}, {}};
      Rng rng(seed);
      for (int i = 0; i < 42; ++i) {
        const bool a = rng.uniform() < 0.5;
        part.mask_a.push_back(a ? 1 : 0);
        part.mask_b.push_back(a ? 0 : 1);
      }
      const float mean = mean_pixel_loss(make_leaf(ce))->value.item();
      CHECK(stage1_loss(make_leaf(ce), part, 0.5)->value.item() == 0.5f * mean);
      CHECK(stage2_loss(make_leaf(ce), part, 0.5)->value.item() == 0.5f * mean);
    }
  }

  TEST_CASE("branch losses match the two-sum oracle") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const TensorD ce = oracle::random_tensor<double>(Shape{5, 5}, seed, 0.0, 4.0);
      const Tensor logits = oracle::random_tensor<float>(Shape{3, 5, 5}, seed + 1);
      const LabelMap y = oracle::random_labels(5, 5, 3, seed + 2);
      const auto p1 = partition_by_correctness(logits, y);
      const auto p2 = partition_by_kl(pixel_kl(logits, oracle::random_tensor<float>(Shape{3, 5, 5}, seed + 3)));
      const auto l = values_of(ce.cast<float>());
      CHECK(stage1_loss(make_leaf(ce), p1, 0.3)->value.item() ==
            doctest::Approx(oracle::two_sum(l, mask_of(p1.mask_a), 0.7, 0.3)).epsilon(1e-6));
      CHECK(stage2_loss(make_leaf(ce), p2, 0.25)->value.item() ==
            doctest::Approx(oracle::two_sum(l, mask_of(p2.mask_a), 0.75, 0.25)).epsilon(1e-6));
    }
  }

  TEST_CASE("degenerate branches use the population normalizer") {
    const TensorD ce = oracle::random_tensor<double>(Shape{4, 4}, 4, 0.0, 3.0);
    double total = 0.0;
    for (double v : ce.data()) total += v;
    PixelPartition all_a{4, 4, std::vector<std::uint8_t>(16, 1), std::vector<std::uint8_t>(16, 0)};
    PixelPartition all_b{4, 4, std::vector<std::uint8_t>(16, 0), std::vector<std::uint8_t>(16, 1)};
    CHECK(stage1_loss(make_leaf(ce), all_a, 0.0)->value.item() == doctest::Approx(total / 16.0));
    CHECK(stage2_loss(make_leaf(ce), all_b, 0.25)->value.item() == doctest::Approx(0.25 * total / 16.0));
  }

  TEST_CASE("raising a weight raises the loss when its branch dominates") {
    const TensorD ce = oracle::random_tensor<double>(Shape{4, 4}, 9, 0.0, 1.0);
    PixelPartition part{4, 4, {}, {}};
    TensorD boosted = ce;
    for (int i = 0; i < 16; ++i) {
      const bool a = i % 3 == 0;
      part.mask_a.push_back(a ? 1 : 0);
      part.mask_b.push_back(a ? 0 : 1);
      if (!a) boosted[i] += 2.0;
    }
    double prev = -1.0;
    for (double w : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      const double v1 = stage1_loss(make_leaf(boosted), part, w)->value.item();
      CHECK(v1 > prev);
      prev = v1;
    }
    prev = -1.0;
    for (double w : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      const double v2 = stage2_loss(make_leaf(boosted), part, w)->value.item();
      CHECK(v2 > prev);
      CHECK(v2 == doctest::Approx(oracle::two_sum(values_of(boosted.cast<float>()), mask_of(part.mask_a), 1.0 - w, w)));
      prev = v2;
    }
  }

  TEST_CASE("stage losses have correct input gradients through a conv model") {
    const TensorD kernel = oracle::random_tensor<double>(Shape{3, 3, 3, 3}, 21, -0.5, 0.5);
    const TensorD bias = oracle::random_tensor<double>(Shape{3}, 22, -0.1, 0.1);
    const TensorD x = oracle::random_tensor<double>(Shape{3, 5, 5}, 23, 0.0, 1.0);
    const LabelMap y = oracle::random_labels(5, 5, 3, 24);
    const TensorD clean = conv2d(make_leaf(x), make_leaf(kernel), make_leaf(bias), 1)->value;
    const auto p1 = partition_by_correctness(clean.cast<float>(), y);
    const auto p2 = partition_by_kl(pixel_kl(clean.cast<float>(), oracle::random_tensor<float>(Shape{3, 5, 5}, 25)));
    auto ce_of = [&](const VarD& in) {
      return pixel_cross_entropy(conv2d(in, make_leaf(kernel), make_leaf(bias), 1), y);
    };
    CHECK(grad_check([&](const VarD& in) { return stage1_loss(ce_of(in), p1, 0.3); }, x, 1e-3) < 1e-3);
    CHECK(grad_check([&](const VarD& in) { return stage2_loss(ce_of(in), p2, 0.25); }, x, 1e-3) < 1e-3);
    CHECK(grad_check([&](const VarD& in) { return mean_pixel_loss(ce_of(in)); }, x, 1e-3) < 1e-3);
  }
}

TEST_SUITE("steps and schedules") {
  TEST_CASE("zero gradient projects into the ball and is then a fixed point") {
    const Tensor x = oracle::random_tensor<float>(Shape{3, 4, 4}, 1, 0.2, 0.8);
    const Tensor far = oracle::random_tensor<float>(Shape{3, 4, 4}, 2, 0.0, 1.0);
    const Tensor zero(Shape{3, 4, 4});
    const double eps = 8.0 / 255.0;
    const Tensor once = pgd_step(far, zero, 2.0 / 255.0, eps, x);
    CHECK(linf(once, x) <= eps + 1e-6);
    CHECK(pgd_step(once, zero, 2.0 / 255.0, eps, x) == once);
    const Tensor inside = pgd_step(x, zero, 2.0 / 255.0, eps, x);
    CHECK(inside == x);
  }

  TEST_CASE("first step moves every pixel by min(alpha, epsilon)") {
    const Tensor x = oracle::random_tensor<float>(Shape{3, 6, 6}, 3, 0.2, 0.8);
    const Tensor g = oracle::random_tensor<float>(Shape{3, 6, 6}, 4);
    for (auto [alpha, eps] : {std::pair{2.0 / 255.0, 8.0 / 255.0}, std::pair{8.0 / 255.0, 3.0 / 255.0}}) {
      const Tensor s = pgd_step(x, g, alpha, eps, x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double moved = static_cast<double>(s[i]) - static_cast<double>(x[i]);
        REQUIRE(std::abs(std::abs(moved) - std::min(alpha, eps)) < 1e-6);
        REQUIRE((moved > 0) == (g[i] > 0));
      }
    }
  }

  TEST_CASE("sign of zero is zero") {
    const Tensor x(Shape{1, 1, 2}, 0.5f);
    Tensor g(Shape{1, 1, 2});
    g[1] = -3.0f;
    const Tensor s = pgd_step(x, g, 0.01, 0.1, x);
    CHECK(s[0] == 0.5f);
    CHECK(s[1] == doctest::Approx(0.49));
  }

  TEST_CASE("forty steps never leave the ball or the unit range") {
    const Tensor x = oracle::random_tensor<float>(Shape{3, 6, 6}, 5, 0.0, 1.0);
    Tensor adv = x;
    Rng rng(6);
    for (int t = 0; t < 40; ++t) {
      const Tensor g = oracle::random_tensor<float>(Shape{3, 6, 6}, rng.next_u64());
      adv = pgd_step(adv, g, 2.0 / 255.0, 8.0 / 255.0, x);
      REQUIRE(linf(adv, x) <= 8.0 / 255.0 + 1e-6);
      for (float v : adv.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
  }

  TEST_CASE("step size schedules") {
    AttackConfig cfg;
    const double a = 2.0 / 255.0;
    for (int t = 0; t < 20; ++t) CHECK(step_size_schedule(t, 20, cfg) == a);
    cfg.step_schedule = StepSchedule::linear_decay;
    CHECK(step_size_schedule(0, 20, cfg) == a);
    CHECK(step_size_schedule(10, 20, cfg) == doctest::Approx(a / 2));
    CHECK(step_size_schedule(19, 20, cfg) == doctest::Approx(a / 10));
    cfg.step_schedule = StepSchedule::cosine_decay;
    CHECK(step_size_schedule(0, 20, cfg) == doctest::Approx(a));
    CHECK(std::abs(step_size_schedule(10, 20, cfg) - a / 2) < 1e-9);
    CHECK(step_size_schedule(19, 20, cfg) >= a / 10);
  }

  TEST_CASE("stage-1 weight schedule and override") {
    AttackConfig cfg;
    CHECK(stage1_gamma(0, cfg) == 0.0);
    CHECK(stage1_gamma(cfg.iterations, cfg) == 0.5);
    CHECK(stage1_gamma(5, cfg) == doctest::Approx(5.0 / 40.0));
    cfg.gamma = 0.3;
    CHECK(stage1_gamma(7, cfg) == 0.3);
    cfg.mode = AttackMode::segpgd;
    CHECK(stage1_gamma(0, cfg) == 0.0);
  }
}

TEST_SUITE("transforms") {
  TEST_CASE("no transform returns the raw gradient") {
    const Tensor g = oracle::random_tensor<float>(Shape{3, 4, 4}, 1);
    TransformState st;
    CHECK(gradient_transform(g, st, AttackConfig{}) == g);
  }

  TEST_CASE("momentum with zero decay is the l1-normalized gradient") {
    const Tensor g = oracle::random_tensor<float>(Shape{3, 4, 4}, 2);
    AttackConfig cfg;
    cfg.transform = GradientTransform::momentum;
    cfg.momentum_decay = 0.0;
    TransformState st;
    gradient_transform(g, st, cfg);
    const Tensor out = gradient_transform(g, st, cfg);
    double l1 = 0.0;
    for (float v : g.data()) l1 += std::abs(v);
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(out[i] == doctest::Approx(g[i] / l1).epsilon(1e-6));
  }

  TEST_CASE("momentum accumulates with the decay factor") {
    const Tensor g1 = oracle::random_tensor<float>(Shape{2, 3, 3}, 3);
    const Tensor g2 = oracle::random_tensor<float>(Shape{2, 3, 3}, 4);
    AttackConfig cfg;
    cfg.transform = GradientTransform::momentum;
    cfg.momentum_decay = 0.7;
    TransformState st;
    gradient_transform(g1, st, cfg);
    const Tensor out = gradient_transform(g2, st, cfg);
    double n1 = 0.0, n2 = 0.0;
    for (float v : g1.data()) n1 += std::abs(v);
    for (float v : g2.data()) n2 += std::abs(v);
    for (std::size_t i = 0; i < g1.size(); ++i) {
      REQUIRE(out[i] == doctest::Approx(0.7 * g1[i] / n1 + g2[i] / n2).epsilon(1e-5));
    }
  }

  TEST_CASE("zero gradient with momentum stays finite") {
    AttackConfig cfg;
    cfg.transform = GradientTransform::momentum;
    TransformState st;
    const Tensor out = gradient_transform(Tensor(Shape{1, 2, 2}), st, cfg);
    for (float v : out.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("translation with a delta kernel is the identity") {
    const Tensor g = oracle::random_tensor<float>(Shape{3, 5, 5}, 5);
    AttackConfig cfg;
    cfg.transform = GradientTransform::translation;
    cfg.translation_kernel = 1;
    TransformState st;
    CHECK(gradient_transform(g, st, cfg) == g);
  }

  TEST_CASE("translation is a per-channel Gaussian smoothing") {
    const Tensor g = oracle::random_tensor<float>(Shape{2, 6, 6}, 6);
    AttackConfig cfg;
    cfg.transform = GradientTransform::translation;
    TransformState st;
    const Tensor out = gradient_transform(g, st, cfg);
    const TensorD k = gaussian_kernel(5, 1.5);
    TensorD kernel(Shape{2, 2, 5, 5});
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) kernel[((static_cast<std::size_t>(c) * 2 + c) * 5 + i) * 5 + j] = k[i * 5 + j];
      }
    }
    const TensorD want = oracle::conv2d(g.cast<double>(), kernel, TensorD(Shape{2}));
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(out[i] == doctest::Approx(want[i]).epsilon(1e-5).scale(1e-6));
  }

  TEST_CASE("gaussian kernel is normalized and symmetric") {
    const TensorD k = gaussian_kernel(5, 1.5);
    double s = 0.0;
    for (double v : k.data()) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        CHECK(k[(i) * 5 + (j)] == doctest::Approx(k[(j) * 5 + (i)]));
        CHECK(k[(i) * 5 + (j)] == doctest::Approx(k[(4 - i) * 5 + (4 - j)]));
      }
    }
    CHECK(k[(2) * 5 + (2)] > k[(2) * 5 + (3)]);
    CHECK_THROWS_AS(gaussian_kernel(4, 1.0), ConfigError);
  }
}

TEST_SUITE("run_attack") {
  TEST_CASE("two_stage with gamma = beta = 0.5 reproduces pgd bit for bit") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const Model m = random_model(seed);
      const Sample s = small_sample(seed + 100);
      AttackConfig pgd;
      pgd.seed = seed;
      AttackConfig two = pgd;
      two.mode = AttackMode::two_stage;
      two.gamma = 0.5;
      two.beta = 0.5;
      const AdvResult a = run_attack(m, s.image, s.labels, pgd);
      const AdvResult b = run_attack(m, s.image, s.labels, two);
      CHECK(a.x_adv == b.x_adv);
      CHECK(a.prediction == b.prediction);
      REQUIRE(a.log.size() == b.log.size());
      for (std::size_t t = 0; t < a.log.size(); ++t) CHECK(b.log[t].loss == 0.5f * static_cast<float>(a.log[t].loss));
    }
  }

  TEST_CASE("zero epsilon leaves the image unchanged") {
    const Model m = random_model(1);
    const Sample s = small_sample(2);
    for (auto mode : kModes) {
      AttackConfig cfg;
      cfg.mode = mode;
      cfg.epsilon = 0.0;
      const AdvResult r = run_attack(m, s.image, s.labels, cfg);
      CHECK(r.x_adv == s.image);
      CHECK(r.prediction == predict(m, s.image));
    }
  }

  TEST_CASE("one iteration with a tiny epsilon keeps the clean prediction") {
    const Model m = random_model(3);
    const Sample s = small_sample(4);
    AttackConfig cfg;
    cfg.iterations = 1;
    cfg.epsilon = 1e-7;
    cfg.step_size = 1e-7;
    const AdvResult r = run_attack(m, s.image, s.labels, cfg);
    CHECK(linf(r.x_adv, s.image) <= 1e-6);
    CHECK(r.prediction == predict(m, s.image));
    cfg.iterations = 0;
    CHECK_THROWS_AS(run_attack(m, s.image, s.labels, cfg), ConfigError);
  }

  TEST_CASE("every mode and transform respects the ball and range at every iteration") {
    const Model m = random_model(5);
    for (auto mode : kModes) {
      for (auto tr : kTransforms) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          const Sample s = small_sample(seed + 50);
          AttackConfig cfg;
          cfg.mode = mode;
          cfg.transform = tr;
          cfg.seed = seed;
          const AdvResult r = run_attack(m, s.image, s.labels, cfg);
          REQUIRE(r.log.size() == 20);
          for (const auto& rec : r.log) {
            REQUIRE(rec.linf <= 8.0 / 255.0 + 1e-6);
            REQUIRE(rec.in_range);
          }
          REQUIRE(linf(r.x_adv, s.image) <= 8.0 / 255.0 + 1e-6);
        }
      }
    }
  }

  TEST_CASE("log stage flags follow the mode") {
    const Model m = random_model(6);
    const Sample s = small_sample(7);
    auto stages = [&](AttackMode mode) {
      AttackConfig cfg;
      cfg.mode = mode;
      std::vector<int> out;
      for (const auto& r : run_attack(m, s.image, s.labels, cfg).log) out.push_back(r.stage);
      return out;
    };
    for (int st : stages(AttackMode::pgd)) CHECK(st == 0);
    for (int st : stages(AttackMode::stage1_only)) CHECK(st == 1);
    for (int st : stages(AttackMode::segpgd)) CHECK(st == 1);
    for (int st : stages(AttackMode::stage2_only)) CHECK(st == 2);
  }

  TEST_CASE("two_stage uses stage 2 only once every pixel is misclassified or at the fallback") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      const Model m = random_model(seed + 10);
      const Sample s = small_sample(seed + 20);
      AttackConfig cfg;
      cfg.mode = AttackMode::two_stage;
      cfg.seed = seed;
      cfg.epsilon = 32.0 / 255.0;
      cfg.step_size = 8.0 / 255.0;
      cfg.stage2_fallback.reset();
      for (const auto& r : run_attack(m, s.image, s.labels, cfg).log) {
        REQUIRE(r.stage != 0);
        if (r.stage == 2) REQUIRE(r.misclassified_fraction == 1.0);
        if (r.misclassified_fraction == 1.0) REQUIRE(r.stage == 2);
      }
      cfg.stage2_fallback = 0.75;
      for (const auto& r : run_attack(m, s.image, s.labels, cfg).log) {
        if (r.iteration >= 15) {
          REQUIRE(r.stage == 2);
        } else if (r.stage == 2) {
          REQUIRE(r.misclassified_fraction == 1.0);
        }
      }
      cfg.strict_stage_condition = true;
      cfg.stage2_fallback.reset();
      for (const auto& r : run_attack(m, s.image, s.labels, cfg).log) {
        REQUIRE(r.stage == (r.misclassified_fraction > 0.0 ? 1 : 2));
      }
    }
  }

  TEST_CASE("attacks are reproducible") {
    const Model m = random_model(8);
    const Sample s = small_sample(9);
    for (auto tr : kTransforms) {
      AttackConfig cfg;
      cfg.mode = AttackMode::two_stage;
      cfg.transform = tr;
      cfg.seed = 31;
      const AdvResult a = run_attack(m, s.image, s.labels, cfg);
      const AdvResult b = run_attack(m, s.image, s.labels, cfg);
      CHECK(a.x_adv == b.x_adv);
      CHECK(a.prediction == b.prediction);
      for (std::size_t t = 0; t < a.log.size(); ++t) {
        CHECK(a.log[t].loss == b.log[t].loss);
        CHECK(a.log[t].stage == b.log[t].stage);
        CHECK(a.log[t].mean_kl == b.log[t].mean_kl);
      }
      cfg.seed = 32;
      cfg.iterations = 2;
      const AdvResult c = run_attack(m, s.image, s.labels, cfg);
      cfg.seed = 31;
      CHECK_FALSE(run_attack(m, s.image, s.labels, cfg).x_adv == c.x_adv);
    }
  }

  TEST_CASE("random start is inside the ball") {
    const Model m = random_model(8);
    const Sample s = small_sample(9);
    AttackConfig cfg;
    cfg.iterations = 1;
    cfg.step_size = 1e-9;
    const AdvResult r = run_attack(m, s.image, s.labels, cfg);
    CHECK(linf(r.x_adv, s.image) <= cfg.epsilon + 1e-6);
    CHECK(linf(r.x_adv, s.image) > cfg.epsilon / 2);
  }

  TEST_CASE("segpgd baseline is stage1_only with the schedule") {
    const Model m = random_model(11);
    const Sample s = small_sample(12);
    AttackConfig cfg;
    cfg.gamma = 0.9;
    cfg.seed = 4;
    AttackConfig scheduled = cfg;
    scheduled.mode = AttackMode::stage1_only;
    scheduled.gamma.reset();
    CHECK(segpgd_baseline(m, s.image, s.labels, cfg).x_adv == run_attack(m, s.image, s.labels, scheduled).x_adv);
  }

  TEST_CASE("non-finite loss raises an attack error with the iteration") {
    Model m = random_model(13);
    m.params.back().bias[0] = std::numeric_limits<float>::quiet_NaN();
    const Sample s = small_sample(14);
    try {
      run_attack(m, s.image, s.labels, AttackConfig{});
      FAIL("expected an attack error");
    } catch (const AttackError& e) {
      CHECK(e.iteration() == 0);
    }
  }

  TEST_CASE("mismatched inputs are rejected") {
    const Model m = random_model(1);
    const Sample s = small_sample(2);
    CHECK_THROWS_AS(run_attack(m, Tensor(Shape{2, 10, 10}), s.labels, AttackConfig{}), ConfigError);
    CHECK_THROWS_AS(run_attack(m, s.image, LabelMap(9, 10), AttackConfig{}), ConfigError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("validation") {
    AttackConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = [](auto mutate) {
      AttackConfig x;
      mutate(x);
      return x;
    };
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.epsilon = -0.1; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.step_size = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.iterations = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.gamma = 1.5; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.beta = -0.5; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AttackConfig& x) { x.translation_kernel = 4; }).validate(), ConfigError);
    CHECK_NOTHROW(bad([](AttackConfig& x) { x.epsilon = 0.0; }).validate());
  }

  TEST_CASE("enum names round trip") {
    for (auto m : kModes) CHECK(parse_attack_mode(to_string(m)) == m);
    for (auto t : kTransforms) CHECK(parse_gradient_transform(to_string(t)) == t);
    for (auto s : {StepSchedule::constant, StepSchedule::linear_decay, StepSchedule::cosine_decay}) {
      CHECK(parse_step_schedule(to_string(s)) == s);
    }
    CHECK_THROWS_AS(parse_attack_mode("fgsm"), ConfigError);
    CHECK_THROWS_AS(parse_gradient_transform("di"), ConfigError);
    CHECK_THROWS_AS(parse_step_schedule("step"), ConfigError);
  }

  TEST_CASE("hash ignores name and seed only") {
    AttackConfig a;
    AttackConfig b = a;
    b.name = "other";
    b.seed = 99;
    CHECK(a.hash() == b.hash());
    b.beta = 0.3;
    CHECK(a.hash() != b.hash());
    b = a;
    b.gamma = 0.0;
    CHECK(a.hash() != b.hash());
    b = a;
    b.stage2_fallback.reset();
    CHECK(a.hash() != b.hash());
  }
}
