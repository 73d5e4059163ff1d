#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tseg/autograd.hpp"
#include "tseg/models.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

// Which loss the controller ascends.
//   pgd          mean pixel cross-entropy every iteration
//   segpgd       correctness-weighted loss with gamma_t = t / (2N)
//   stage1_only  correctness-weighted loss every iteration
//   stage2_only  KL-weighted loss every iteration
//   two_stage    correctness-weighted while correctly classified pixels
//                remain, KL-weighted afterwards
enum class AttackMode { pgd, segpgd, stage1_only, stage2_only, two_stage };
enum class GradientTransform { none, momentum, translation, nesterov };
enum class StepSchedule { constant, linear_decay, cosine_decay };

std::string to_string(AttackMode mode);
std::string to_string(GradientTransform transform);
std::string to_string(StepSchedule schedule);
AttackMode parse_attack_mode(const std::string& name);
GradientTransform parse_gradient_transform(const std::string& name);
StepSchedule parse_step_schedule(const std::string& name);

struct AttackConfig {
  std::string name = "pgd";
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int iterations = 20;
  // Stage-1 weight on misclassified pixels. Unset means gamma_t = t / (2N).
  std::optional<double> gamma;
  // Stage-2 weight on low-KL pixels; high-KL pixels get 1 - beta.
  double beta = 0.25;
  AttackMode mode = AttackMode::pgd;
  GradientTransform transform = GradientTransform::none;
  double momentum_decay = 1.0;
  int translation_kernel = 5;
  double translation_sigma = 1.5;
  StepSchedule step_schedule = StepSchedule::constant;
  std::uint64_t seed = 0;
  // Enter stage 1 while misclassified pixels exist (the literal loop
  // condition) instead of while correctly classified pixels exist.
  bool strict_stage_condition = false;
  // two_stage switches to stage 2 for every t >= ceil(fraction * N).
  // Unset disables the fallback.
  std::optional<double> stage2_fallback = 0.75;

  // Throws ConfigError. epsilon = 0 is accepted (identity attack).
  void validate() const;
  // FNV-1a hash of every field except name and seed.
  std::uint64_t hash() const;
  std::string canonical() const;
};

// Two disjoint masks covering all H x W pixels.
struct PixelPartition {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask_a;
  std::vector<std::uint8_t> mask_b;

  std::size_t count_a() const;
  std::size_t count_b() const;
};

struct KLMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  double mean = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  int stage = 0;  // 0 plain CE, 1 correctness-weighted, 2 KL-weighted
  double loss = 0.0;
  double misclassified_fraction = 0.0;
  double mean_kl = 0.0;
  double step_size = 0.0;
  double linf = 0.0;       // ||x_adv - x||_inf after the step
  bool in_range = true;    // x_adv within [0, 1] after the step
};

struct AdvResult {
  Tensor x_adv;
  std::vector<IterationRecord> log;
  LabelMap prediction;
};

// mask_a = pixels whose argmax equals the label (ties to the lowest class),
// mask_b = the rest.
PixelPartition partition_by_correctness(const Tensor& logits, const LabelMap& labels);

// (1-gamma)/(HW) * sum_{mask_a} L + gamma/(HW) * sum_{mask_b} L.
template <typename T>
VarT<T> stage1_loss(const VarT<T>& pixel_ce, const PixelPartition& part, double gamma);

// Per-pixel KL(softmax(adv) || softmax(clean)). Clean probabilities are
// floored at 1e-12; terms with zero adversarial probability contribute 0.
KLMap pixel_kl(const Tensor& logits_adv, const Tensor& logits_clean);

// mask_a = pixels with KL strictly above the mean, mask_b = the rest.
PixelPartition partition_by_kl(const KLMap& kl);

// (1-beta)/(HW) * sum_{mask_a} L + beta/(HW) * sum_{mask_b} L.
template <typename T>
VarT<T> stage2_loss(const VarT<T>& pixel_ce, const PixelPartition& part, double beta);

// Mean pixel cross-entropy built with the same weighting path as the two
// stage losses, so equal branch weights reproduce it up to an exact factor.
template <typename T>
VarT<T> mean_pixel_loss(const VarT<T>& pixel_ce);

// x + alpha * sign(grad), projected onto the epsilon ball around x_clean and
// then onto [0, 1]. sign(0) = 0.
Tensor pgd_step(const Tensor& x_adv, const Tensor& grad, double alpha, double epsilon, const Tensor& x_clean);

// Step size for iteration t of N.
double step_size_schedule(int t, int iterations, const AttackConfig& cfg);

// Stage-1 weight for iteration t.
double stage1_gamma(int t, const AttackConfig& cfg);

struct TransformState {
  Tensor momentum;  // accumulated direction g, zero at t = 0
};

// Normalized 2-D Gaussian, size x size, summing to 1.
TensorD gaussian_kernel(int size, double sigma);

// none        raw gradient
// momentum    g' = mu * g + raw / ||raw||_1
// translation raw gradient convolved per channel with the Gaussian kernel
// nesterov    same update as momentum; the caller evaluated raw at the
//             look-ahead point x + alpha * mu * g
Tensor gradient_transform(const Tensor& raw_grad, TransformState& state, const AttackConfig& cfg);

// Runs the configured attack. Throws ConfigError on invalid configs or
// mismatched inputs, AttackError (with the iteration index) on a
// non-finite loss.
AdvResult run_attack(const Model& model, const Tensor& x, const LabelMap& y, const AttackConfig& cfg);

// stage1_only with the gamma_t = t / (2N) schedule regardless of cfg.gamma.
AdvResult segpgd_baseline(const Model& model, const Tensor& x, const LabelMap& y, const AttackConfig& cfg);

}  // namespace tseg
