#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

struct Model;
struct Sample;

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // Throws InputError on size mismatch or labels >= num_classes.
  void add(const LabelMap& prediction, const LabelMap& truth);

  int num_classes() const noexcept { return classes_; }
  std::uint64_t at(int truth, int prediction) const {
    return counts_[static_cast<std::size_t>(truth) * classes_ + prediction];
  }
  std::uint64_t total() const noexcept { return total_; }

  // IoU per class; nullopt where the class never occurs in truth or prediction.
  std::vector<std::optional<double>> class_iou() const;
  // Mean over classes with a nonzero union.
  double mean_iou() const;
  double pixel_accuracy() const;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// One confusion matrix accumulated over every pixel of every pair.
// Throws InputError on empty or misaligned input.
double miou(std::span<const LabelMap> predictions, std::span<const LabelMap> labels, int num_classes);

struct EvalResult {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
};

EvalResult evaluate_model(const Model& model, std::span<const Sample> samples);

}  // namespace tseg
