#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "json.hpp"

#include "tseg/error.hpp"

namespace tseg::cli {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      std::string list;
      for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
      throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

SceneSpec parse_scene(const json& j, const std::string& where) {
  check_keys(j, where,
             {"height", "width", "channels", "num_classes", "min_shapes", "max_shapes", "shape_kinds", "color_jitter",
              "noise_sigma", "palette_contrast", "texture_amplitude"});
  SceneSpec s;
  read(j, "height", s.height, where);
  read(j, "width", s.width, where);
  read(j, "channels", s.channels, where);
  read(j, "num_classes", s.num_classes, where);
  read(j, "min_shapes", s.min_shapes, where);
  read(j, "max_shapes", s.max_shapes, where);
  if (j.contains("shape_kinds")) {
    std::vector<std::string> names;
    read(j, "shape_kinds", names, where);
    s.shape_kinds.clear();
    for (const auto& n : names) s.shape_kinds.push_back(parse_shape_kind(n));
  }
  read(j, "color_jitter", s.color_jitter, where);
  read(j, "noise_sigma", s.noise_sigma, where);
  read(j, "palette_contrast", s.palette_contrast, where);
  read(j, "texture_amplitude", s.texture_amplitude, where);
  return s;
}

json dump_scene(const SceneSpec& s) {
  std::vector<std::string> kinds;
  for (auto k : s.shape_kinds) kinds.push_back(to_string(k));
  return {{"height", s.height},
          {"width", s.width},
          {"channels", s.channels},
          {"num_classes", s.num_classes},
          {"min_shapes", s.min_shapes},
          {"max_shapes", s.max_shapes},
          {"shape_kinds", kinds},
          {"color_jitter", s.color_jitter},
          {"noise_sigma", s.noise_sigma},
          {"palette_contrast", s.palette_contrast},
          {"texture_amplitude", s.texture_amplitude}};
}

TrainConfig parse_train(const json& j, const std::string& where) {
  check_keys(j, where, {"epochs", "learning_rate", "lr_schedule", "momentum", "batch_size", "seed"});
  TrainConfig t;
  read(j, "epochs", t.epochs, where);
  read(j, "learning_rate", t.learning_rate, where);
  if (j.contains("lr_schedule")) {
    std::string s;
    read(j, "lr_schedule", s, where);
    t.lr_schedule = parse_lr_schedule(s);
  }
  read(j, "momentum", t.momentum, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "seed", t.seed, where);
  return t;
}

json dump_train(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"lr_schedule", to_string(t.lr_schedule)},
          {"momentum", t.momentum},
          {"batch_size", t.batch_size},
          {"seed", t.seed}};
}

ModelEntry parse_model(const json& j, const std::string& where, const SceneSpec& scene) {
  check_keys(j, where, {"name", "in_channels", "input_mean", "input_std", "layers", "train"});
  ModelEntry m;
  read(j, "name", m.spec.name, where);
  if (m.spec.name.empty()) throw ConfigError(where + ": model needs a name");
  if (j.contains("layers")) {
    const json& layers = j.at("layers");
    if (!layers.is_array()) throw ConfigError(where + ".layers: expected a list");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string lw = where + ".layers[" + std::to_string(i) + "]";
      check_keys(layers[i], lw, {"out_channels", "kernel", "activation"});
      LayerSpec l;
      read(layers[i], "out_channels", l.out_channels, lw);
      read(layers[i], "kernel", l.kernel, lw);
      if (layers[i].contains("activation")) {
        std::string a;
        read(layers[i], "activation", a, lw);
        l.activation = parse_activation(a);
      }
      m.spec.layers.push_back(l);
    }
  } else {
    try {
      const ModelSpec zoo = zoo_model(m.spec.name, scene.num_classes, scene.channels);
      m.spec.layers = zoo.layers;
    } catch (const ConfigError&) {
      throw ConfigError(where + ": model '" + m.spec.name + "' is not a zoo architecture, so it needs \"layers\"");
    }
  }
  m.spec.in_channels = scene.channels;
  read(j, "in_channels", m.spec.in_channels, where);
  read(j, "input_mean", m.spec.input_mean, where);
  read(j, "input_std", m.spec.input_std, where);
  if (j.contains("train")) m.train = parse_train(j.at("train"), where + ".train");
  return m;
}

json dump_model(const ModelEntry& m) {
  json layers = json::array();
  for (const auto& l : m.spec.layers) {
    layers.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"activation", to_string(l.activation)}});
  }
  return {{"name", m.spec.name},
          {"in_channels", m.spec.in_channels},
          {"input_mean", m.spec.input_mean},
          {"input_std", m.spec.input_std},
          {"layers", layers},
          {"train", dump_train(m.train)}};
}

AttackConfig parse_attack(const json& j, const std::string& where) {
  check_keys(j, where,
             {"name", "mode", "epsilon", "step_size", "iterations", "gamma", "beta", "transform", "momentum_decay",
              "translation_kernel", "translation_sigma", "step_schedule", "strict_stage_condition",
              "stage2_fallback"});
  AttackConfig a;
  read(j, "name", a.name, where);
  auto read_enum = [&](const char* key, auto parse, auto& out) {
    if (!j.contains(key)) return;
    std::string s;
    read(j, key, s, where);
    out = parse(s);
  };
  read_enum("mode", parse_attack_mode, a.mode);
  read(j, "epsilon", a.epsilon, where);
  read(j, "step_size", a.step_size, where);
  read(j, "iterations", a.iterations, where);
  if (j.contains("gamma") && !j.at("gamma").is_null()) {
    double g = 0.0;
    read(j, "gamma", g, where);
    a.gamma = g;
  }
  read(j, "beta", a.beta, where);
  read_enum("transform", parse_gradient_transform, a.transform);
  read(j, "momentum_decay", a.momentum_decay, where);
  read(j, "translation_kernel", a.translation_kernel, where);
  read(j, "translation_sigma", a.translation_sigma, where);
  read_enum("step_schedule", parse_step_schedule, a.step_schedule);
  read(j, "strict_stage_condition", a.strict_stage_condition, where);
  if (j.contains("stage2_fallback")) {
    if (j.at("stage2_fallback").is_null()) {
      a.stage2_fallback.reset();
    } else {
      double f = 0.0;
      read(j, "stage2_fallback", f, where);
      a.stage2_fallback = f;
    }
  }
  return a;
}

json dump_attack(const AttackConfig& a) {
  json j = {{"name", a.name},
            {"mode", to_string(a.mode)},
            {"epsilon", a.epsilon},
            {"step_size", a.step_size},
            {"iterations", a.iterations},
            {"gamma", nullptr},
            {"beta", a.beta},
            {"transform", to_string(a.transform)},
            {"momentum_decay", a.momentum_decay},
            {"translation_kernel", a.translation_kernel},
            {"translation_sigma", a.translation_sigma},
            {"step_schedule", to_string(a.step_schedule)},
            {"strict_stage_condition", a.strict_stage_condition},
            {"stage2_fallback", nullptr}};
  if (a.gamma) j["gamma"] = *a.gamma;
  if (a.stage2_fallback) j["stage2_fallback"] = *a.stage2_fallback;
  return j;
}

AttackConfig make_attack(const std::string& name, AttackMode mode, GradientTransform transform) {
  AttackConfig a;
  a.name = name;
  a.mode = mode;
  a.transform = transform;
  return a;
}

}  // namespace

const ModelEntry* RunConfig::find_model(const std::string& name) const {
  for (const auto& m : models) {
    if (m.spec.name == name) return &m;
  }
  return nullptr;
}

const AttackConfig* RunConfig::find_attack(const std::string& name) const {
  for (const auto& a : attacks) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::vector<std::string> RunConfig::model_names() const {
  std::vector<std::string> out;
  for (const auto& m : models) out.push_back(m.spec.name);
  return out;
}

std::vector<std::string> RunConfig::attack_names() const {
  std::vector<std::string> out;
  for (const auto& a : attacks) out.push_back(a.name);
  return out;
}

void RunConfig::validate() const {
  dataset.scene.validate();
  if (dataset.train_count < 1) throw ConfigError("dataset.train_count must be at least 1");
  if (dataset.eval_count < 1) throw ConfigError("dataset.eval_count must be at least 1");
  if (models.empty()) throw ConfigError("models: at least one model is required");
  std::set<std::string> seen;
  for (const auto& m : models) {
    if (!seen.insert(m.spec.name).second) throw ConfigError("models: duplicate name '" + m.spec.name + "'");
    m.spec.validate();
    m.train.validate();
    if (m.spec.in_channels != dataset.scene.channels) {
      throw ConfigError("model '" + m.spec.name + "': in_channels " + std::to_string(m.spec.in_channels) +
                        " does not match dataset channels " + std::to_string(dataset.scene.channels));
    }
    if (m.spec.num_classes() != dataset.scene.num_classes) {
      throw ConfigError("model '" + m.spec.name + "': " + std::to_string(m.spec.num_classes()) +
                        " output classes, dataset has " + std::to_string(dataset.scene.num_classes));
    }
  }
  seen.clear();
  for (const auto& a : attacks) {
    if (a.name.empty()) throw ConfigError("attacks: every attack needs a name");
    if (!seen.insert(a.name).second) throw ConfigError("attacks: duplicate name '" + a.name + "'");
    a.validate();
  }
  auto known = [&](const std::string& n) {
    if (find_model(n) == nullptr) {
      std::string list;
      for (const auto& m : model_names()) list += (list.empty() ? "" : ", ") + m;
      throw ConfigError("experiment: unknown model '" + n + "' (known: " + list + ")");
    }
  };
  known(experiment.source);
  if (experiment.targets.empty()) throw ConfigError("experiment.targets: at least one target is required");
  for (const auto& t : experiment.targets) known(t);
  if (experiment.seeds.empty()) throw ConfigError("experiment.seeds: at least one seed is required");
  if (experiment.output_dir.empty()) throw ConfigError("experiment.output_dir must not be empty");
  if (experiment.workers < 1) throw ConfigError("experiment.workers must be at least 1");
}

RunConfig default_run_config() {
  RunConfig c;
  for (const auto& spec : default_zoo(c.dataset.scene.num_classes, c.dataset.scene.channels)) {
    c.models.push_back({spec, TrainConfig{}});
  }
  using M = AttackMode;
  using G = GradientTransform;
  c.attacks = {make_attack("pgd", M::pgd, G::none),
               make_attack("segpgd", M::segpgd, G::none),
               make_attack("two_stage", M::two_stage, G::none),
               make_attack("mi_pgd", M::pgd, G::momentum),
               make_attack("mi_two_stage", M::two_stage, G::momentum),
               make_attack("ti_pgd", M::pgd, G::translation),
               make_attack("ti_two_stage", M::two_stage, G::translation),
               make_attack("ni_pgd", M::pgd, G::nesterov),
               make_attack("ni_two_stage", M::two_stage, G::nesterov)};
  return c;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config", {"dataset", "models", "attacks", "experiment"});
  RunConfig c = default_run_config();

  if (root.contains("dataset")) {
    const json& d = root.at("dataset");
    check_keys(d, "dataset", {"scene", "seed", "train_count", "eval_count"});
    if (d.contains("scene")) c.dataset.scene = parse_scene(d.at("scene"), "dataset.scene");
    read(d, "seed", c.dataset.seed, "dataset");
    read(d, "train_count", c.dataset.train_count, "dataset");
    read(d, "eval_count", c.dataset.eval_count, "dataset");
  }
  if (root.contains("models")) {
    const json& ms = root.at("models");
    if (!ms.is_array()) throw ConfigError("models: expected a list");
    c.models.clear();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      c.models.push_back(parse_model(ms[i], "models[" + std::to_string(i) + "]", c.dataset.scene));
    }
  } else {
    c.models.clear();
    for (const auto& spec : default_zoo(c.dataset.scene.num_classes, c.dataset.scene.channels)) {
      c.models.push_back({spec, TrainConfig{}});
    }
  }
  if (root.contains("attacks")) {
    const json& as = root.at("attacks");
    if (!as.is_array()) throw ConfigError("attacks: expected a list");
    c.attacks.clear();
    for (std::size_t i = 0; i < as.size(); ++i) {
      c.attacks.push_back(parse_attack(as[i], "attacks[" + std::to_string(i) + "]"));
    }
  }
  if (root.contains("experiment")) {
    const json& e = root.at("experiment");
    check_keys(e, "experiment", {"source", "targets", "seeds", "output_dir", "ablation", "workers"});
    read(e, "source", c.experiment.source, "experiment");
    read(e, "targets", c.experiment.targets, "experiment");
    read(e, "seeds", c.experiment.seeds, "experiment");
    read(e, "output_dir", c.experiment.output_dir, "experiment");
    read(e, "ablation", c.experiment.ablation, "experiment");
    read(e, "workers", c.experiment.workers, "experiment");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back(dump_model(m));
  json attacks = json::array();
  for (const auto& a : c.attacks) attacks.push_back(dump_attack(a));
  json root = {{"dataset",
                {{"scene", dump_scene(c.dataset.scene)},
                 {"seed", c.dataset.seed},
                 {"train_count", c.dataset.train_count},
                 {"eval_count", c.dataset.eval_count}}},
               {"models", models},
               {"attacks", attacks},
               {"experiment",
                {{"source", c.experiment.source},
                 {"targets", c.experiment.targets},
                 {"seeds", c.experiment.seeds},
                 {"output_dir", c.experiment.output_dir},
                 {"ablation", c.experiment.ablation},
                 {"workers", c.experiment.workers}}}};
  return root.dump(2) + "\n";
}

void apply_seed_override(RunConfig& config, std::uint64_t s) {
  config.dataset.seed = s;
  for (auto& m : config.models) m.train.seed = s;
  for (std::size_t i = 0; i < config.experiment.seeds.size(); ++i) config.experiment.seeds[i] = s + i;
}

}  // namespace tseg::cli
