#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ppm.hpp"
#include "tseg/error.hpp"
#include "tseg/experiment.hpp"
#include "tseg/metrics.hpp"
#include "tseg/plots.hpp"
#include "tseg/rng.hpp"

namespace tseg::cli {

namespace fs = std::filesystem;

namespace {

std::ostream& out_of(const CommandEnv& env) { return env.out != nullptr ? *env.out : std::cout; }
std::ostream& err_of(const CommandEnv& env) { return env.err != nullptr ? *env.err : std::cerr; }

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

OutputLayout layout_of(const RunConfig& config) { return OutputLayout{config.experiment.output_dir}; }

Dataset load_data(const fs::path& path, const CommandEnv& env) {
  if (!fs::exists(path)) {
    throw IoError("dataset " + path.string() + " not found; run: tseg gen-data --config " + env.config_arg);
  }
  return load_dataset(path);
}

Model load_model(const RunConfig& config, const std::string& name, const CommandEnv& env) {
  const fs::path path = layout_of(config).checkpoint(name);
  if (!fs::exists(path)) {
    throw IoError("checkpoint for model '" + name + "' not found at " + path.string() +
                  "; run: tseg train --config " + env.config_arg + " --model " + name);
  }
  Checkpoint ckpt = load_checkpoint(path);
  const ModelEntry* entry = config.find_model(name);
  if (entry != nullptr && !(ckpt.model.spec == entry->spec)) {
    throw ConfigError("checkpoint " + path.string() + " does not match the architecture of model '" + name +
                      "' in the config; retrain with: tseg train --config " + env.config_arg + " --model " + name);
  }
  return std::move(ckpt.model);
}

std::string known_list(const std::vector<std::string>& names) {
  std::string s;
  for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
  return s;
}

void print_class_frequencies(std::ostream& out, const std::string& what, const Dataset& d) {
  std::vector<double> counts(static_cast<std::size_t>(d.num_classes), 0.0);
  double total = 0.0;
  for (const auto& s : d.samples) {
    for (auto v : s.labels.data()) counts[v] += 1.0;
    total += static_cast<double>(s.labels.size());
  }
  out << what << " (" << d.samples.size() << " images) class pixel frequency:";
  for (std::size_t c = 0; c < counts.size(); ++c) out << " " << c << "=" << fmt("%.4f", counts[c] / total);
  out << "\n";
}

std::string created_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string dataset_id(const Dataset& eval) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : eval.samples) {
    const std::string v = hex(sample_hash(s));
    h = fnv1a64(v, h);
  }
  return "synth-" + hex(h);
}

GenDataResult cmd_gen_data(const RunConfig& config, const CommandEnv& env) {
  auto& out = out_of(env);
  const OutputLayout layout = layout_of(config);
  make_dir(layout.data_dir());
  const auto& d = config.dataset;
  // Train and eval come from disjoint seed streams.
  const Dataset train = generate_dataset(mix_seed(d.seed, 0), d.scene, d.train_count);
  const Dataset eval = generate_dataset(mix_seed(d.seed, 1), d.scene, d.eval_count);
  save_dataset(layout.train_data(), train);
  save_dataset(layout.eval_data(), eval);
  print_class_frequencies(out, "train", train);
  print_class_frequencies(out, "eval", eval);
  out << "wrote " << layout.train_data().string() << "\n";
  out << "wrote " << layout.eval_data().string() << " (" << dataset_id(eval) << ")\n";
  return {layout.train_data(), layout.eval_data()};
}

Checkpoint cmd_train(const RunConfig& config, const std::string& model, const CommandEnv& env) {
  auto& out = out_of(env);
  const ModelEntry* entry = config.find_model(model);
  if (entry == nullptr) {
    throw ConfigError("unknown model '" + model + "' (known: " + known_list(config.model_names()) + ")");
  }
  const OutputLayout layout = layout_of(config);
  const Dataset train_set = load_data(layout.train_data(), env);
  const Dataset eval_set = load_data(layout.eval_data(), env);
  const int epochs = entry->train.epochs;
  Checkpoint ckpt = train(entry->spec, train_set, entry->train, &eval_set, [&](int epoch, double loss) {
    out << "epoch " << (epoch + 1) << "/" << epochs << " loss " << fmt("%.6f", loss) << "\n" << std::flush;
  });
  const EvalResult ev = evaluate_model(ckpt.model, eval_set.samples);
  out << "model " << model << " eval mIoU " << fmt("%.4f", ev.miou) << " pixel accuracy "
      << fmt("%.4f", ev.pixel_accuracy) << "\n";
  make_dir(layout.models_dir());
  save_checkpoint(layout.checkpoint(model), ckpt);
  out << "wrote " << layout.checkpoint(model).string() << " (params " << hex(params_hash(ckpt.model.params))
      << ")\n";
  return ckpt;
}

AttackArtifacts cmd_attack(const RunConfig& config, const std::string& attack, int index, const CommandEnv& env) {
  auto& out = out_of(env);
  const AttackConfig* found = config.find_attack(attack);
  if (found == nullptr) {
    throw ConfigError("unknown attack '" + attack + "' (known: " + known_list(config.attack_names()) + ")");
  }
  const OutputLayout layout = layout_of(config);
  const Dataset eval_set = load_data(layout.eval_data(), env);
  if (index < 0 || index >= static_cast<int>(eval_set.samples.size())) {
    throw InputError("sample index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(eval_set.samples.size()) + ")");
  }
  std::vector<Model> models{load_model(config, config.experiment.source, env)};
  for (const auto& t : config.experiment.targets) {
    if (t != config.experiment.source) models.push_back(load_model(config, t, env));
  }

  const Sample& sample = eval_set.samples[static_cast<std::size_t>(index)];
  AttackConfig cfg = *found;
  cfg.seed = mix_seed(config.experiment.seeds.front(), static_cast<std::uint64_t>(index));
  AttackArtifacts art;
  art.result = run_attack(models.front(), sample.image, sample.labels, cfg);
  art.dir = layout.attacks_dir() / (attack + "_" + std::to_string(index));
  make_dir(art.dir);

  auto put = [&](const std::string& name, const RgbImage& img) {
    art.files.push_back(art.dir / name);
    write_ppm(art.files.back(), img);
  };
  put("clean.ppm", image_to_rgb(sample.image));
  put("adversarial.ppm", image_to_rgb(art.result.x_adv));
  put("perturbation.ppm", perturbation_to_rgb(art.result.x_adv, sample.image));
  put("labels.ppm", labels_to_rgb(sample.labels));
  out << "model   clean_acc  adv_acc\n";
  for (const auto& m : models) {
    const LabelMap clean_pred = predict(m, sample.image);
    const LabelMap adv_pred = predict(m, art.result.x_adv);
    put("pred_clean_" + m.spec.name + ".ppm", labels_to_rgb(clean_pred));
    put("pred_adv_" + m.spec.name + ".ppm", labels_to_rgb(adv_pred));
    ConfusionMatrix cc(config.dataset.scene.num_classes);
    ConfusionMatrix ca(config.dataset.scene.num_classes);
    cc.add(clean_pred, sample.labels);
    ca.add(adv_pred, sample.labels);
    char line[96];
    std::snprintf(line, sizeof line, "%-7s %9.4f %8.4f\n", m.spec.name.c_str(), cc.pixel_accuracy(),
                  ca.pixel_accuracy());
    out << line;
  }

  const fs::path log_path = art.dir / "log.tsv";
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << "iteration\tstage\tloss\tmisclassified\tmean_kl\tstep_size\tlinf\tin_range\n";
  for (const auto& r : art.result.log) {
    char line[256];
    std::snprintf(line, sizeof line, "%d\t%d\t%.9g\t%.6f\t%.9g\t%.9g\t%.9g\t%d\n", r.iteration, r.stage, r.loss,
                  r.misclassified_fraction, r.mean_kl, r.step_size, r.linf, r.in_range ? 1 : 0);
    log << line;
  }
  art.files.push_back(log_path);
  std::string stages;
  for (const auto& r : art.result.log) stages += std::to_string(r.stage);
  out << "stages " << stages << "\n";
  out << "wrote " << art.files.size() << " files to " << art.dir.string() << "\n";
  return art;
}

EvaluateResult cmd_evaluate(const RunConfig& config, const CommandEnv& env) {
  auto& out = out_of(env);
  auto& err = err_of(env);
  const OutputLayout layout = layout_of(config);
  const Dataset eval_set = load_data(layout.eval_data(), env);
  Model source = load_model(config, config.experiment.source, env);
  std::vector<Model> targets;
  for (const auto& t : config.experiment.targets) targets.push_back(load_model(config, t, env));

  ExperimentOptions opts;
  opts.workers = config.experiment.workers;
  opts.dataset_id = dataset_id(eval_set);
  opts.created = created_timestamp();
  int done = 0;
  opts.on_cell = [&](const std::string& attack, std::uint64_t seed, double seconds) {
    ++done;
    err << "[" << done << "] " << attack << " seed " << seed << " " << fmt("%.1f", seconds) << " s\n" << std::flush;
  };
  ExperimentRunner runner(std::move(source), std::move(targets), eval_set.samples, opts);
  TransferReport report = runner.run("transfer", config.attacks, config.experiment.seeds);
  if (config.experiment.ablation) {
    AttackConfig base;
    for (const auto& a : config.attacks) {
      if (a.mode == AttackMode::two_stage && a.transform == GradientTransform::none) {
        base = a;
        break;
      }
    }
    const auto grid = ablation_configs(base);
    report.merge(runner.run("ablation", grid, config.experiment.seeds));
  }

  EvaluateResult res;
  make_dir(layout.report_dir());
  write_report(layout.report_file(), report);
  write_csv(layout.csv_file(), report);
  res.files = {layout.report_file(), layout.csv_file()};
  for (auto& p : emit_plots(report, layout.report_dir())) res.files.push_back(p);
  out << format_report_table(report, false);
  for (const auto& f : res.files) out << "wrote " << f.string() << "\n";
  const auto failed = std::count_if(report.records.begin(), report.records.end(), [](const auto& r) { return !r.ok(); });
  if (failed > 0) err << failed << " cell(s) failed; see the status column of " << layout.csv_file().string() << "\n";
  res.report = std::move(report);
  return res;
}

std::string format_report_table(const TransferReport& report, bool markdown) {
  std::ostringstream os;
  std::vector<std::string> experiments;
  for (const auto& r : report.records) {
    if (std::find(experiments.begin(), experiments.end(), r.experiment) == experiments.end()) {
      experiments.push_back(r.experiment);
    }
  }
  for (const auto& exp : experiments) {
    TransferReport sub;
    std::string source;
    for (const auto& r : report.records) {
      if (r.experiment == exp) {
        sub.records.push_back(r);
        if (source.empty()) source = r.source;
      }
    }
    const auto attacks = sub.attacks();
    const auto targets = sub.targets();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"attack"};
    for (const auto& t : targets) header.push_back(t == source ? t + " (source)" : t);
    std::vector<std::string> clean{"clean"};
    for (const auto& t : targets) {
      const auto c = sub.clean_miou(t);
      clean.push_back(c ? fmt("%.2f", *c * 100.0) : "-");
    }
    rows.push_back(clean);
    for (const auto& a : attacks) {
      std::vector<std::string> row{a};
      for (const auto& t : targets) {
        const auto m = sub.median_adv_miou(a, t);
        row.push_back(m ? fmt("%.2f", *m * 100.0) : "error");
      }
      rows.push_back(row);
    }

    os << "experiment " << exp << ": source " << source << ", median mIoU (%) over " << sub.seeds().size()
       << " seed(s)\n";
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
      width[c] = header[c].size();
      for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    auto emit = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::string pad(width[c] - cells[c].size(), ' ');
        if (markdown) {
          os << "| " << (c == 0 ? cells[c] + pad : pad + cells[c]) << " ";
        } else {
          os << (c == 0 ? "" : "  ") << (c == 0 ? cells[c] + pad : pad + cells[c]);
        }
      }
      os << (markdown ? "|\n" : "\n");
    };
    emit(header);
    if (markdown) {
      for (std::size_t c = 0; c < header.size(); ++c) {
        os << "| " << (c == 0 ? std::string(width[c], '-') : std::string(width[c] - 1, '-') + ":") << " ";
      }
      os << "|\n";
    } else {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c == 0 ? 0 : 2);
      os << std::string(total, '-') << "\n";
    }
    for (const auto& r : rows) emit(r);
    os << "\n";
  }
  return os.str();
}

void cmd_report(const fs::path& report_path, bool markdown, const CommandEnv& env) {
  if (!fs::exists(report_path)) {
    throw IoError("report " + report_path.string() + " not found; run: tseg evaluate --config " + env.config_arg);
  }
  const TransferReport report = read_report(report_path);
  auto& out = out_of(env);
  if (report.records.empty()) {
    out << "report " << report_path.string() << " has no records\n";
    return;
  }
  out << format_report_table(report, markdown);
}

}  // namespace tseg::cli
