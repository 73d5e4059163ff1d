#include "tseg/metrics.hpp"

#include "tseg/error.hpp"
#include "tseg/models.hpp"

namespace tseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.height() != truth.height() || prediction.width() != truth.width()) {
    throw InputError("prediction and label maps differ in size");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = prediction[i];
    if (t >= classes_ || p >= classes_) {
      throw InputError("class index out of range in confusion matrix");
    }
    ++counts_[static_cast<std::size_t>(t) * classes_ + p];
  }
  total_ += truth.size();
}

std::vector<std::optional<double>> ConfusionMatrix::class_iou() const {
  std::vector<std::optional<double>> out(classes_);
  for (int c = 0; c < classes_; ++c) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (int k = 0; k < classes_; ++k) {
      row += at(c, k);
      col += at(k, c);
    }
    const std::uint64_t diag = at(c, c);
    const std::uint64_t uni = row + col - diag;
    if (uni > 0) out[c] = static_cast<double>(diag) / static_cast<double>(uni);
  }
  return out;
}

double ConfusionMatrix::mean_iou() const {
  double acc = 0.0;
  int n = 0;
  for (const auto& v : class_iou()) {
    if (v) {
      acc += *v;
      ++n;
    }
  }
  if (n == 0) throw InputError("mIoU of an empty confusion matrix");
  return acc / n;
}

double ConfusionMatrix::pixel_accuracy() const {
  if (total_ == 0) throw InputError("pixel accuracy of an empty confusion matrix");
  std::uint64_t correct = 0;
  for (int c = 0; c < classes_; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(total_);
}

double miou(std::span<const LabelMap> predictions, std::span<const LabelMap> labels, int num_classes) {
  if (predictions.empty()) throw InputError("miou of an empty sample list");
  if (predictions.size() != labels.size()) {
    throw InputError("miou: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " label maps");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) cm.add(predictions[i], labels[i]);
  return cm.mean_iou();
}

EvalResult evaluate_model(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) throw InputError("evaluate_model on an empty sample list");
  ConfusionMatrix cm(model.spec.num_classes());
  for (const auto& s : samples) cm.add(predict(model, s.image), s.labels);
  return {cm.mean_iou(), cm.pixel_accuracy()};
}

}  // namespace tseg
