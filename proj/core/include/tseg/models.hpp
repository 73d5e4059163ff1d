#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tseg/autograd.hpp"
#include "tseg/synthdata.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

enum class Activation { relu, none };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

struct LayerSpec {
  int out_channels = 0;
  int kernel = 3;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// A stack of resolution-preserving convolutions applied to the normalized
// image (x - input_mean) / input_std. The last layer produces raw logits,
// one channel per class.
struct ModelSpec {
  std::string name;
  int in_channels = 3;
  double input_mean = 0.5;
  double input_std = 0.045;
  std::vector<LayerSpec> layers;

  int num_classes() const { return layers.empty() ? 0 : layers.back().out_channels; }
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// The three reference architectures:
//   A: 3 layers (16, 32, M), k=5
//   B: 5 layers (16, 16, 32, 32, M), k=3
//   C: 4 layers (24, 48, 24, M), k=3
ModelSpec zoo_model(const std::string& name, int num_classes, int in_channels = 3);
std::vector<ModelSpec> default_zoo(int num_classes, int in_channels = 3);

template <typename T>
struct BasicLayerParams {
  BasicTensor<T> kernel;  // [out, in, k, k]
  BasicTensor<T> bias;    // [out]

  friend bool operator==(const BasicLayerParams&, const BasicLayerParams&) = default;
};

template <typename T>
using BasicParameters = std::vector<BasicLayerParams<T>>;
using Parameters = BasicParameters<float>;

template <typename T>
BasicParameters<T> cast_parameters(const Parameters& params) {
  BasicParameters<T> out;
  for (const auto& layer : params) out.push_back({layer.kernel.cast<T>(), layer.bias.cast<T>()});
  return out;
}

// Throws ShapeError when the parameter shapes do not follow the spec.
void check_parameters(const ModelSpec& spec, const Parameters& params);

struct Model {
  ModelSpec spec;
  Parameters params;
};

enum class LrSchedule { constant, cosine };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 0.05;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double momentum = 0.9;
  int batch_size = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainMetadata {
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_train_loss = 0.0;
  double eval_miou = -1.0;  // -1 when no eval set was given
  std::vector<double> epoch_losses;

  friend bool operator==(const TrainMetadata&, const TrainMetadata&) = default;
};

struct Checkpoint {
  Model model;
  TrainMetadata meta;
};

// Kaiming uniform kernels, bound sqrt(6 / fan_in) with fan_in = in*k*k;
// zero biases.
Parameters init_params(std::uint64_t seed, const ModelSpec& spec);

template <typename T>
struct ParamVars {
  VarT<T> kernel;
  VarT<T> bias;
};

template <typename T>
std::vector<ParamVars<T>> make_param_vars(const BasicParameters<T>& params, bool requires_grad);

// Builds the forward graph of a model on top of an input node.
template <typename T>
VarT<T> forward_graph(const ModelSpec& spec, const std::vector<ParamVars<T>>& vars,
                      const VarT<T>& input);

// Logits [M,H,W] for an image [C,H,W]; throws ShapeError on shape mismatch.
Tensor forward(const Model& model, const Tensor& image);
LabelMap predict(const Model& model, const Tensor& image);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

// Mini-batch SGD with momentum on mean pixel cross-entropy. When eval is
// non-null the final eval mIoU is recorded in the metadata.
// Throws TrainingError carrying the epoch index if the loss goes non-finite.
Checkpoint train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg,
                 const Dataset* eval = nullptr, const EpochCallback& on_epoch = {});

// TSEGCKPT container (little-endian):
//   "TSEGCKPT" | u32 version=1
//   | str name | u32 in_channels | f64 input_mean | f64 input_std | u32 L | L x (u32 out, u32 k, u8 act)
//   | L x (u32 rank, dims..., f32 kernel data, u32 rank, dims..., f32 bias data)
//   | u64 seed | u32 epochs | f64 final_loss | f64 eval_miou | u32 n | n x f64 epoch loss
// where str is u32 length followed by bytes.
inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t params_hash(const Parameters& params);

}  // namespace tseg
