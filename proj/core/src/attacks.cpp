#include "tseg/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "tseg/error.hpp"
#include "tseg/rng.hpp"

namespace tseg {
namespace {

constexpr double kCleanProbFloor = 1e-12;

template <typename T>
BasicTensor<T> branch_weights(const PixelPartition& part, const Shape& shape, double weight_a, double weight_b) {
  if (shape.size() != 2 || shape[0] != part.height || shape[1] != part.width) {
    throw ConfigError("partition " + std::to_string(part.height) + "x" + std::to_string(part.width) +
                      " does not match per-pixel loss " + shape_string(shape));
  }
  const double pixels = static_cast<double>(part.height) * part.width;
  const T wa = static_cast<T>(weight_a / pixels);
  const T wb = static_cast<T>(weight_b / pixels);
  BasicTensor<T> w(shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = part.mask_a[i] ? wa : (part.mask_b[i] ? wb : T{0});
  return w;
}

PixelPartition make_partition(int height, int width) {
  PixelPartition p;
  p.height = height;
  p.width = width;
  p.mask_a.assign(static_cast<std::size_t>(height) * width, 0);
  p.mask_b.assign(static_cast<std::size_t>(height) * width, 0);
  return p;
}

std::vector<double> log_softmax_pixel(const Tensor& logits, std::size_t pixel, std::size_t plane, int m) {
  std::vector<double> out(m);
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < m; ++c) mx = std::max(mx, static_cast<double>(logits[c * plane + pixel]));
  double total = 0.0;
  for (int c = 0; c < m; ++c) total += std::exp(static_cast<double>(logits[c * plane + pixel]) - mx);
  const double lse = mx + std::log(total);
  for (int c = 0; c < m; ++c) out[c] = static_cast<double>(logits[c * plane + pixel]) - lse;
  return out;
}

Tensor convolve_channels(const Tensor& grad, const TensorD& kernel) {
  const int k = kernel.dim(0);
  const int pad = (k - 1) / 2;
  const int channels = grad.dim(0), height = grad.dim(1), width = grad.dim(2);
  Tensor out(grad.shape());
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= width) continue;
            acc += kernel[static_cast<std::size_t>(ky) * k + kx] * grad.at(c, sy, sx);
          }
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::pgd: return "pgd";
    case AttackMode::segpgd: return "segpgd";
    case AttackMode::stage1_only: return "stage1_only";
    case AttackMode::stage2_only: return "stage2_only";
    case AttackMode::two_stage: return "two_stage";
  }
  return "unknown";
}

std::string to_string(GradientTransform transform) {
  switch (transform) {
    case GradientTransform::none: return "none";
    case GradientTransform::momentum: return "momentum";
    case GradientTransform::translation: return "translation";
    case GradientTransform::nesterov: return "nesterov";
  }
  return "unknown";
}

std::string to_string(StepSchedule schedule) {
  switch (schedule) {
    case StepSchedule::constant: return "constant";
    case StepSchedule::linear_decay: return "linear_decay";
    case StepSchedule::cosine_decay: return "cosine_decay";
  }
  return "unknown";
}

AttackMode parse_attack_mode(const std::string& name) {
  for (auto m : {AttackMode::pgd, AttackMode::segpgd, AttackMode::stage1_only, AttackMode::stage2_only,
                 AttackMode::two_stage}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown attack mode '" + name + "'");
}

GradientTransform parse_gradient_transform(const std::string& name) {
  for (auto t : {GradientTransform::none, GradientTransform::momentum, GradientTransform::translation,
                 GradientTransform::nesterov}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown gradient transform '" + name + "'");
}

StepSchedule parse_step_schedule(const std::string& name) {
  for (auto s : {StepSchedule::constant, StepSchedule::linear_decay, StepSchedule::cosine_decay}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown step schedule '" + name + "'");
}

void AttackConfig::validate() const {
  const std::string who = "attack '" + name + "': ";
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError(who + "epsilon must be >= 0");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError(who + "step_size must be > 0");
  if (iterations < 1) throw ConfigError(who + "iterations must be >= 1");
  if (gamma && !(*gamma >= 0.0 && *gamma <= 1.0)) throw ConfigError(who + "gamma must be in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError(who + "beta must be in [0, 1]");
  if (!(momentum_decay >= 0.0)) throw ConfigError(who + "momentum_decay must be >= 0");
  if (translation_kernel < 1 || translation_kernel % 2 == 0) {
    throw ConfigError(who + "translation_kernel must be odd");
  }
  if (!(translation_sigma > 0.0)) throw ConfigError(who + "translation_sigma must be > 0");
  if (stage2_fallback && !(*stage2_fallback > 0.0 && *stage2_fallback <= 1.0)) {
    throw ConfigError(who + "stage2_fallback must be in (0, 1]");
  }
}

std::string AttackConfig::canonical() const {
  auto hex = [](double v) {
    char b[40];
    std::snprintf(b, sizeof(b), "%a", v);
    return std::string(b);
  };
  std::string out = "mode=" + to_string(mode);
  out += ";eps=" + hex(epsilon);
  out += ";alpha=" + hex(step_size);
  out += ";n=" + std::to_string(iterations);
  out += ";gamma=" + (gamma ? hex(*gamma) : std::string("schedule"));
  out += ";beta=" + hex(beta);
  out += ";transform=" + to_string(transform);
  out += ";mu=" + hex(momentum_decay);
  out += ";tik=" + std::to_string(translation_kernel);
  out += ";tis=" + hex(translation_sigma);
  out += ";schedule=" + to_string(step_schedule);
  out += ";strict=" + std::to_string(strict_stage_condition ? 1 : 0);
  out += ";fallback=" + (stage2_fallback ? hex(*stage2_fallback) : std::string("off"));
  return out;
}

std::uint64_t AttackConfig::hash() const { return fnv1a64(canonical()); }

std::size_t PixelPartition::count_a() const {
  return static_cast<std::size_t>(std::count(mask_a.begin(), mask_a.end(), std::uint8_t{1}));
}

std::size_t PixelPartition::count_b() const {
  return static_cast<std::size_t>(std::count(mask_b.begin(), mask_b.end(), std::uint8_t{1}));
}

PixelPartition partition_by_correctness(const Tensor& logits, const LabelMap& labels) {
  const LabelMap pred = argmax_channels(logits);
  if (pred.height() != labels.height() || pred.width() != labels.width()) {
    throw ConfigError("partition_by_correctness: logits " + shape_string(logits.shape()) +
                      " do not match label map");
  }
  auto part = make_partition(labels.height(), labels.width());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool correct = pred[i] == labels[i];
    part.mask_a[i] = correct ? 1 : 0;
    part.mask_b[i] = correct ? 0 : 1;
  }
  return part;
}

template <typename T>
VarT<T> stage1_loss(const VarT<T>& pixel_ce, const PixelPartition& part, double gamma) {
  return weighted_sum(pixel_ce, branch_weights<T>(part, pixel_ce->value.shape(), 1.0 - gamma, gamma));
}

template <typename T>
VarT<T> stage2_loss(const VarT<T>& pixel_ce, const PixelPartition& part, double beta) {
  return weighted_sum(pixel_ce, branch_weights<T>(part, pixel_ce->value.shape(), 1.0 - beta, beta));
}

template <typename T>
VarT<T> mean_pixel_loss(const VarT<T>& pixel_ce) {
  const double pixels = static_cast<double>(pixel_ce->value.size());
  return weighted_sum(pixel_ce, BasicTensor<T>(pixel_ce->value.shape(), static_cast<T>(1.0 / pixels)));
}

template VarT<float> stage1_loss(const VarT<float>&, const PixelPartition&, double);
template VarT<double> stage1_loss(const VarT<double>&, const PixelPartition&, double);
template VarT<float> stage2_loss(const VarT<float>&, const PixelPartition&, double);
template VarT<double> stage2_loss(const VarT<double>&, const PixelPartition&, double);
template VarT<float> mean_pixel_loss(const VarT<float>&);
template VarT<double> mean_pixel_loss(const VarT<double>&);

KLMap pixel_kl(const Tensor& logits_adv, const Tensor& logits_clean) {
  if (logits_adv.shape() != logits_clean.shape() || logits_adv.rank() != 3) {
    throw ConfigError("pixel_kl: shapes " + shape_string(logits_adv.shape()) + " and " +
                      shape_string(logits_clean.shape()) + " differ");
  }
  const int m = logits_adv.dim(0);
  KLMap kl;
  kl.height = logits_adv.dim(1);
  kl.width = logits_adv.dim(2);
  const std::size_t plane = static_cast<std::size_t>(kl.height) * kl.width;
  kl.values.resize(plane);
  const double log_floor = std::log(kCleanProbFloor);
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto lp = log_softmax_pixel(logits_adv, i, plane, m);
    const auto lq = log_softmax_pixel(logits_clean, i, plane, m);
    double acc = 0.0;
    for (int c = 0; c < m; ++c) {
      const double p = std::exp(lp[c]);
      if (p == 0.0 || lp[c] == lq[c]) continue;
      acc += p * (lp[c] - std::max(lq[c], log_floor));
    }
    kl.values[i] = acc;
    total += acc;
  }
  const auto [lo, hi] = std::minmax_element(kl.values.begin(), kl.values.end());
  // The true mean lies in [min, max]; clamping removes summation round-off,
  // so a constant map has a mean equal to its entries.
  kl.mean = std::clamp(total / static_cast<double>(plane), *lo, *hi);
  return kl;
}

PixelPartition partition_by_kl(const KLMap& kl) {
  auto part = make_partition(kl.height, kl.width);
  for (std::size_t i = 0; i < kl.values.size(); ++i) {
    const bool high = kl.values[i] > kl.mean;
    part.mask_a[i] = high ? 1 : 0;
    part.mask_b[i] = high ? 0 : 1;
  }
  return part;
}

Tensor pgd_step(const Tensor& x_adv, const Tensor& grad, double alpha, double epsilon, const Tensor& x_clean) {
  if (x_adv.shape() != grad.shape() || x_adv.shape() != x_clean.shape()) {
    throw ConfigError("pgd_step: shape mismatch");
  }
  Tensor out(x_adv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float g = grad[i];
    const double sign = g > 0.0f ? 1.0 : (g < 0.0f ? -1.0 : 0.0);
    const double moved = static_cast<double>(x_adv[i]) + alpha * sign;
    const double delta = std::clamp(moved - static_cast<double>(x_clean[i]), -epsilon, epsilon);
    out[i] = static_cast<float>(std::clamp(static_cast<double>(x_clean[i]) + delta, 0.0, 1.0));
  }
  return out;
}

double step_size_schedule(int t, int iterations, const AttackConfig& cfg) {
  const double alpha = cfg.step_size;
  const double frac = static_cast<double>(t) / static_cast<double>(iterations);
  switch (cfg.step_schedule) {
    case StepSchedule::constant: return alpha;
    case StepSchedule::linear_decay: return std::max(alpha * (1.0 - frac), alpha / 10.0);
    case StepSchedule::cosine_decay:
      return std::max(alpha * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0, alpha / 10.0);
  }
  return alpha;
}

double stage1_gamma(int t, const AttackConfig& cfg) {
  if (cfg.gamma && cfg.mode != AttackMode::segpgd) return *cfg.gamma;
  return static_cast<double>(t) / (2.0 * cfg.iterations);
}

TensorD gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("gaussian kernel size must be odd");
  TensorD k(Shape{size, size});
  const int c = size / 2;
  double total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>(y) * size + x] = v;
      total += v;
    }
  }
  for (auto& v : k.data()) v /= total;
  return k;
}

Tensor gradient_transform(const Tensor& raw_grad, TransformState& state, const AttackConfig& cfg) {
  switch (cfg.transform) {
    case GradientTransform::none: return raw_grad;
    case GradientTransform::translation:
      return convolve_channels(raw_grad, gaussian_kernel(cfg.translation_kernel, cfg.translation_sigma));
    case GradientTransform::momentum:
    case GradientTransform::nesterov: {
      if (state.momentum.shape() != raw_grad.shape()) state.momentum = Tensor::zeros_like(raw_grad);
      double l1 = 0.0;
      for (float v : raw_grad.data()) l1 += std::abs(static_cast<double>(v));
      l1 = std::max(l1, 1e-12);
      const double mu = cfg.momentum_decay;
      for (std::size_t i = 0; i < raw_grad.size(); ++i) {
        state.momentum[i] =
            static_cast<float>(mu * static_cast<double>(state.momentum[i]) + static_cast<double>(raw_grad[i]) / l1);
      }
      return state.momentum;
    }
  }
  return raw_grad;
}

AdvResult run_attack(const Model& model, const Tensor& x, const LabelMap& y, const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() != 3 || x.dim(0) != model.spec.in_channels) {
    throw ConfigError("attack input " + shape_string(x.shape()) + " does not fit model '" + model.spec.name + "'");
  }
  if (y.height() != x.dim(1) || y.width() != x.dim(2)) throw ConfigError("label map does not match the image");

  const auto vars = make_param_vars(model.params, false);
  const Tensor clean_logits = forward_graph(model.spec, vars, make_leaf(x, false))->value;
  const int n = cfg.iterations;
  const double pixels = static_cast<double>(y.size());

  Rng rng(cfg.seed);
  Tensor x_adv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double noise = rng.uniform(-cfg.epsilon, cfg.epsilon);
    x_adv[i] = static_cast<float>(std::clamp(static_cast<double>(x[i]) + noise, 0.0, 1.0));
  }

  const int fallback_at =
      cfg.stage2_fallback ? static_cast<int>(std::ceil(*cfg.stage2_fallback * n - 1e-9)) : n + 1;

  TransformState state;
  AdvResult result;
  result.log.reserve(n);
  for (int t = 0; t < n; ++t) {
    const double alpha_t = step_size_schedule(t, n, cfg);
    Tensor x_eval = x_adv;
    if (cfg.transform == GradientTransform::nesterov && !state.momentum.empty()) {
      const double ahead = alpha_t * cfg.momentum_decay;
      for (std::size_t i = 0; i < x_eval.size(); ++i) {
        x_eval[i] = static_cast<float>(static_cast<double>(x_eval[i]) + ahead * state.momentum[i]);
      }
    }

    auto input = make_leaf(std::move(x_eval), true);
    auto logits = forward_graph(model.spec, vars, input);
    auto ce = pixel_cross_entropy(logits, y);
    const PixelPartition correctness = partition_by_correctness(logits->value, y);
    const KLMap kl = pixel_kl(logits->value, clean_logits);

    int stage = 0;
    switch (cfg.mode) {
      case AttackMode::pgd: stage = 0; break;
      case AttackMode::segpgd:
      case AttackMode::stage1_only: stage = 1; break;
      case AttackMode::stage2_only: stage = 2; break;
      case AttackMode::two_stage: {
        const bool stage1 = cfg.strict_stage_condition ? correctness.count_b() > 0 : correctness.count_a() > 0;
        stage = (stage1 && t < fallback_at) ? 1 : 2;
        break;
      }
    }

    VarT<float> loss;
    if (stage == 0) {
      loss = mean_pixel_loss(ce);
    } else if (stage == 1) {
      loss = stage1_loss(ce, correctness, stage1_gamma(t, cfg));
    } else {
      loss = stage2_loss(ce, partition_by_kl(kl), cfg.beta);
    }
    const double loss_value = loss->value.item();
    if (!std::isfinite(loss_value)) {
      throw AttackError("attack '" + cfg.name + "': non-finite loss at iteration " + std::to_string(t), t);
    }

    backward(loss);
    const Tensor direction = gradient_transform(input->grad, state, cfg);
    x_adv = pgd_step(x_adv, direction, alpha_t, cfg.epsilon, x);

    IterationRecord rec;
    rec.iteration = t;
    rec.stage = stage;
    rec.loss = loss_value;
    rec.misclassified_fraction = static_cast<double>(correctness.count_b()) / pixels;
    rec.mean_kl = kl.mean;
    rec.step_size = alpha_t;
    for (std::size_t i = 0; i < x.size(); ++i) {
      rec.linf = std::max(rec.linf, std::abs(static_cast<double>(x_adv[i]) - static_cast<double>(x[i])));
      if (!(x_adv[i] >= 0.0f && x_adv[i] <= 1.0f)) rec.in_range = false;
    }
    result.log.push_back(rec);
  }

  result.prediction = argmax_channels(forward_graph(model.spec, vars, make_leaf(x_adv, false))->value);
  result.x_adv = std::move(x_adv);
  return result;
}

AdvResult segpgd_baseline(const Model& model, const Tensor& x, const LabelMap& y, const AttackConfig& cfg) {
  AttackConfig seg = cfg;
  seg.mode = AttackMode::segpgd;
  seg.gamma.reset();
  return run_attack(model, x, y, seg);
}

}  // namespace tseg
