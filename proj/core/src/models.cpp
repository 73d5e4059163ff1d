#include "tseg/models.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "binary_io.hpp"
#include "tseg/error.hpp"
#include "tseg/metrics.hpp"
#include "tseg/rng.hpp"

namespace tseg {

std::string to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "none";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "none") return Activation::none;
  throw ConfigError("unknown activation '" + name + "'");
}

void ModelSpec::validate() const {
  if (name.empty()) throw ConfigError("model spec needs a name");
  if (in_channels < 1) throw ConfigError("model '" + name + "': in_channels must be positive");
  if (!(input_std > 0.0) || !std::isfinite(input_mean)) {
    throw ConfigError("model '" + name + "': input_std must be positive");
  }
  if (layers.empty()) throw ConfigError("model '" + name + "' has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.out_channels < 1) throw ConfigError("model '" + name + "': layer " + std::to_string(i) + " has no outputs");
    if (l.kernel < 1 || l.kernel % 2 == 0) {
      throw ConfigError("model '" + name + "': layer " + std::to_string(i) + " kernel must be odd");
    }
  }
  if (layers.back().activation != Activation::none) {
    throw ConfigError("model '" + name + "': final layer must emit raw logits (activation none)");
  }
  if (layers.back().out_channels < 2) throw ConfigError("model '" + name + "': needs at least 2 classes");
}

ModelSpec zoo_model(const std::string& name, int num_classes, int in_channels) {
  auto stack = [&](std::vector<int> widths, int k) {
    ModelSpec spec;
    spec.name = name;
    spec.in_channels = in_channels;
    for (int w : widths) spec.layers.push_back({w, k, Activation::relu});
    spec.layers.push_back({num_classes, k, Activation::none});
    return spec;
  };
  if (name == "A") return stack({16, 32}, 5);
  if (name == "B") return stack({16, 16, 32, 32}, 3);
  if (name == "C") return stack({24, 48, 24}, 3);
  throw ConfigError("no zoo model named '" + name + "' (known: A, B, C)");
}

std::vector<ModelSpec> default_zoo(int num_classes, int in_channels) {
  return {zoo_model("A", num_classes, in_channels), zoo_model("B", num_classes, in_channels),
          zoo_model("C", num_classes, in_channels)};
}

void check_parameters(const ModelSpec& spec, const Parameters& params) {
  if (params.size() != spec.layers.size()) {
    throw ShapeError("model '" + spec.name + "' has " + std::to_string(spec.layers.size()) +
                     " layers but " + std::to_string(params.size()) + " parameter sets");
  }
  int in = spec.in_channels;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& l = spec.layers[i];
    const Shape want_k{l.out_channels, in, l.kernel, l.kernel};
    const Shape want_b{l.out_channels};
    if (params[i].kernel.shape() != want_k || params[i].bias.shape() != want_b) {
      throw ShapeError("model '" + spec.name + "' layer " + std::to_string(i) + ": expected kernel " +
                       shape_string(want_k) + " bias " + shape_string(want_b) + ", got " +
                       shape_string(params[i].kernel.shape()) + " / " +
                       shape_string(params[i].bias.shape()));
    }
    in = l.out_channels;
  }
}

std::string to_string(LrSchedule s) {
  return s == LrSchedule::cosine ? "cosine" : "constant";
}

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

Parameters init_params(std::uint64_t seed, const ModelSpec& spec) {
  spec.validate();
  Rng rng(seed);
  Parameters params;
  int in = spec.in_channels;
  for (const auto& l : spec.layers) {
    const double fan_in = static_cast<double>(in) * l.kernel * l.kernel;
    const double bound = std::sqrt(6.0 / fan_in);
    Tensor kernel(Shape{l.out_channels, in, l.kernel, l.kernel});
    for (auto& v : kernel.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    params.push_back({std::move(kernel), Tensor(Shape{l.out_channels})});
    in = l.out_channels;
  }
  return params;
}

template <typename T>
std::vector<ParamVars<T>> make_param_vars(const BasicParameters<T>& params, bool requires_grad) {
  std::vector<ParamVars<T>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back({make_leaf(p.kernel, requires_grad), make_leaf(p.bias, requires_grad)});
  return vars;
}

template <typename T>
VarT<T> forward_graph(const ModelSpec& spec, const std::vector<ParamVars<T>>& vars, const VarT<T>& input) {
  const auto& x = input->value;
  if (x.rank() != 3 || x.dim(0) != spec.in_channels) {
    throw ShapeError("model '" + spec.name + "' expects " + std::to_string(spec.in_channels) +
                     " input channels, got " + shape_string(x.shape()));
  }
  if (vars.size() != spec.layers.size()) throw ConfigError("parameter count does not match model spec");
  VarT<T> h = affine(input, spec.input_mean, 1.0 / spec.input_std);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    h = conv2d(h, vars[i].kernel, vars[i].bias, (l.kernel - 1) / 2);
    if (l.activation == Activation::relu) h = relu(h);
  }
  return h;
}

template std::vector<ParamVars<float>> make_param_vars(const BasicParameters<float>&, bool);
template std::vector<ParamVars<double>> make_param_vars(const BasicParameters<double>&, bool);
template VarT<float> forward_graph(const ModelSpec&, const std::vector<ParamVars<float>>&, const VarT<float>&);
template VarT<double> forward_graph(const ModelSpec&, const std::vector<ParamVars<double>>&, const VarT<double>&);

Tensor forward(const Model& model, const Tensor& image) {
  const auto vars = make_param_vars(model.params, false);
  return forward_graph(model.spec, vars, make_leaf(image, false))->value;
}

LabelMap predict(const Model& model, const Tensor& image) { return argmax_channels(forward(model, image)); }

Checkpoint train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg, const Dataset* eval,
                 const EpochCallback& on_epoch) {
  spec.validate();
  cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("cannot train on an empty dataset");
  if (dataset.num_classes != spec.num_classes()) {
    throw ConfigError("model '" + spec.name + "' emits " + std::to_string(spec.num_classes()) +
                      " classes but the dataset has " + std::to_string(dataset.num_classes));
  }

  Parameters params = init_params(cfg.seed, spec);
  auto vars = make_param_vars(params, true);
  std::vector<Tensor> velocity;
  for (const auto& v : vars) {
    velocity.push_back(Tensor::zeros_like(v.kernel->value));
    velocity.push_back(Tensor::zeros_like(v.bias->value));
  }
  auto each_param = [&](auto&& fn) {
    std::size_t j = 0;
    for (auto& v : vars) {
      fn(*v.kernel, velocity[j++]);
      fn(*v.bias, velocity[j++]);
    }
  };

  const std::size_t n = dataset.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(mix_seed(cfg.seed, 0x5EED5));
  const auto mu = static_cast<float>(cfg.momentum);

  TrainMetadata meta;
  meta.seed = cfg.seed;
  meta.epochs = cfg.epochs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle.uniform_int(0, static_cast<int>(i))]);
    }
    double rate = cfg.learning_rate;
    if (cfg.lr_schedule == LrSchedule::cosine) {
      rate *= 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
    }
    const auto lr = static_cast<float>(rate);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      each_param([](Node<float>& p, Tensor&) { p.grad_buffer().fill(0.0f); });
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = dataset.samples[order[b]];
        auto logits = forward_graph(spec, vars, make_leaf(s.image, false));
        auto ce = pixel_cross_entropy(logits, s.labels);
        const double scale = 1.0 / (static_cast<double>(ce->value.size()) * static_cast<double>(stop - start));
        auto loss = weighted_sum(ce, Tensor(ce->value.shape(), static_cast<float>(scale)));
        backward(loss);
        const double sample_loss = static_cast<double>(loss->value.item()) * static_cast<double>(stop - start);
        if (!std::isfinite(sample_loss)) {
          throw TrainingError("model '" + spec.name + "': training loss diverged in epoch " + std::to_string(epoch),
                              epoch);
        }
        epoch_loss += sample_loss;
      }
      each_param([&](Node<float>& p, Tensor& vel) {
        auto w = p.value.data();
        const auto g = p.grad.data();
        auto v = vel.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = mu * v[i] + g[i];
          w[i] -= lr * v[i];
        }
      });
    }
    epoch_loss /= static_cast<double>(n);
    meta.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  meta.final_train_loss = meta.epoch_losses.empty() ? 0.0 : meta.epoch_losses.back();

  for (std::size_t i = 0; i < vars.size(); ++i) {
    params[i].kernel = vars[i].kernel->value;
    params[i].bias = vars[i].bias->value;
  }
  Checkpoint ckpt{Model{spec, std::move(params)}, std::move(meta)};
  if (eval != nullptr) ckpt.meta.eval_miou = evaluate_model(ckpt.model, eval->samples).miou;
  return ckpt;
}

namespace {

void write_tensor(detail::ByteWriter& out, const Tensor& t) {
  out.u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) out.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) out.f32(v);
}

Tensor read_tensor(detail::ByteReader& in, const std::string& what) {
  const std::uint32_t rank = in.u32();
  if (rank == 0 || rank > 4) throw ShapeError(in.label() + ": bad tensor rank for " + what);
  Shape shape(rank);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = static_cast<int>(in.u32());
    if (d <= 0) throw ShapeError(in.label() + ": bad tensor dim for " + what);
    numel *= static_cast<std::size_t>(d);
  }
  if (numel * 4 > in.remaining()) {
    throw TruncationError(in.label() + ": truncated in " + what, -1);
  }
  std::vector<float> data(numel);
  for (auto& v : data) v = in.f32();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto& spec = ckpt.model.spec;
  detail::ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 8));
  out.u32(kCheckpointVersion);
  out.str(spec.name);
  out.u32(static_cast<std::uint32_t>(spec.in_channels));
  out.f64(spec.input_mean);
  out.f64(spec.input_std);
  out.u32(static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    out.u32(static_cast<std::uint32_t>(l.out_channels));
    out.u32(static_cast<std::uint32_t>(l.kernel));
    out.u8(l.activation == Activation::relu ? 1 : 0);
  }
  out.u32(static_cast<std::uint32_t>(ckpt.model.params.size()));
  for (const auto& p : ckpt.model.params) {
    write_tensor(out, p.kernel);
    write_tensor(out, p.bias);
  }
  const auto& m = ckpt.meta;
  out.u64(m.seed);
  out.u32(static_cast<std::uint32_t>(m.epochs));
  out.f64(m.final_train_loss);
  out.f64(m.eval_miou);
  out.u32(static_cast<std::uint32_t>(m.epoch_losses.size()));
  for (double v : m.epoch_losses) out.f64(v);
  out.write_file(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  if (in.bytes(8) != std::string_view(kCheckpointMagic, 8)) {
    throw MagicError(path.string() + ": not a TSEGCKPT file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(path.string() + ": unsupported TSEGCKPT version " + std::to_string(version));
  }
  Checkpoint ckpt;
  auto& spec = ckpt.model.spec;
  spec.name = in.str();
  spec.in_channels = static_cast<int>(in.u32());
  spec.input_mean = in.f64();
  spec.input_std = in.f64();
  const std::uint32_t layers = in.u32();
  if (layers > 4096) throw ShapeError(path.string() + ": implausible layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerSpec l;
    l.out_channels = static_cast<int>(in.u32());
    l.kernel = static_cast<int>(in.u32());
    l.activation = in.u8() ? Activation::relu : Activation::none;
    spec.layers.push_back(l);
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ShapeError(path.string() + ": invalid model spec: " + e.what());
  }
  const std::uint32_t sets = in.u32();
  if (sets > 4096) throw ShapeError(path.string() + ": implausible parameter count");
  for (std::uint32_t i = 0; i < sets; ++i) {
    in.set_record(i);
    Tensor kernel = read_tensor(in, "kernel of layer " + std::to_string(i));
    Tensor bias = read_tensor(in, "bias of layer " + std::to_string(i));
    ckpt.model.params.push_back({std::move(kernel), std::move(bias)});
  }
  in.set_record(-1);
  check_parameters(spec, ckpt.model.params);
  auto& m = ckpt.meta;
  m.seed = in.u64();
  m.epochs = static_cast<int>(in.u32());
  m.final_train_loss = in.f64();
  m.eval_miou = in.f64();
  const std::uint32_t n = in.u32();
  if (static_cast<std::size_t>(n) * 8 > in.remaining()) {
    throw TruncationError(path.string() + ": truncated in training metadata", -1);
  }
  for (std::uint32_t i = 0; i < n; ++i) m.epoch_losses.push_back(in.f64());
  return ckpt;
}

std::uint64_t params_hash(const Parameters& params) {
  std::uint64_t h = fnv1a64("");
  for (const auto& p : params) {
    for (const Tensor* t : {&p.kernel, &p.bias}) {
      const auto d = t->data();
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
    }
  }
  return h;
}

}  // namespace tseg
