#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

#include "tristream/config_json.hpp"
#include "tristream/data.hpp"
#include "tristream/error.hpp"
#include "tristream/log.hpp"
#include "tristream/model.hpp"
#include "tristream/train.hpp"

namespace tristream::cli {

namespace {

using Json = nlohmann::json;

// Seeds for the independent random streams of one run.
enum Stream : std::uint64_t { kInitStream = 0, kSplitStream = 1, kAugmentStream = 2 };

struct CommonOptions {
  std::string config;
  std::string preset = "db5";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

/// preset -> config file -> command-line overrides.
RunConfig load_run_config(const CommonOptions& o, Json* file_json = nullptr) {
  RunConfig r;
  r.train = preset(o.preset);
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot open config file " + o.config);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw ConfigError("config file " + o.config + " is not valid JSON: " + e.what());
    }
    from_json(j, r);
    if (file_json) *file_json = std::move(j);
  }
  if (o.seed) r.train.seed = *o.seed;
  if (o.epochs) r.train.epochs = *o.epochs;
  r.train.validate();
  r.preprocess.validate();
  return r;
}

data::WindowedDataset load_dataset(const std::string& path, const data::PreprocessConfig& pre) {
  data::WindowedDataset ds = data::load_emgb(path);
  ds.validate();
  if (pre.standardize == data::Standardize::window) ds = data::standardize_windows(ds, pre.epsilon);
  return ds;
}

/// Takes C, W and K from the data unless the config file pins them.
void adapt_model(ModelConfig& m, const data::WindowedDataset& ds, const Json& file_json) {
  const Json* model = file_json.contains("model") ? &file_json.at("model") : nullptr;
  auto pinned = [&](const char* key) { return model && model->contains(key); };
  auto reconcile = [&](const char* key, std::size_t& field, std::size_t actual) {
    if (!pinned(key)) {
      field = actual;
    } else if (field != actual) {
      throw DataError("config sets model." + std::string(key) + "=" + std::to_string(field) + " but the data has " +
                      std::to_string(actual));
    }
  };
  reconcile("channels", m.channels, ds.channels());
  reconcile("window", m.window, ds.window());
  reconcile("num_classes", m.num_classes, ds.num_classes);
}

struct Partition {
  data::WindowedDataset train, val, test;
};

Partition partition(const data::WindowedDataset& ds, const RunConfig& rc, std::ostream& out) {
  Partition p;
  if (rc.preprocess.split.mode == data::SplitMode::ratio) {
    Rng rng(Rng::derive(rc.train.seed, kSplitStream));
    auto s = data::split_ratio(ds, rc.preprocess.split.ratios, rng);
    p = {std::move(s.train), std::move(s.val), std::move(s.test)};
  } else {
    auto s = data::split_repetition(ds, rc.preprocess.split.train_reps, rc.preprocess.split.test_reps);
    out << "repetition split: validation uses the test repetitions\n";
    p = {std::move(s.train), s.test, s.test};
  }
  return p;
}

data::WindowedDataset augment_training(const data::WindowedDataset& train, const RunConfig& rc) {
  Rng rng(Rng::derive(rc.train.seed, kAugmentStream));
  return data::augment(train, rc.preprocess.augment_copies, rc.preprocess.noise_variance, rng);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw DataError("failed writing " + path);
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

void print_metrics(const MetricsReport& m, std::ostream& out) {
  out << "accuracy " << fmt("%.2f", m.accuracy) << "  precision " << fmt("%.2f", m.precision) << "  recall "
      << fmt("%.2f", m.recall) << "  f1 " << fmt("%.2f", m.f1) << "  loss " << fmt("%.4f", m.loss) << "  (n="
      << m.total << ")\n";
}

void print_subject_table(const MetricsReport& m, std::ostream& out) {
  out << "subject  windows  accuracy  precision  recall  f1\n";
  for (const auto& [s, r] : m.per_subject) {
    char line[128];
    std::snprintf(line, sizeof line, "%-8u %-8zu %-9.2f %-10.2f %-7.2f %.2f\n", static_cast<unsigned>(s), r.total,
                  r.accuracy, r.precision, r.recall, r.f1);
    out << line;
  }
}

// --- Subcommands -----------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  std::string data;
  std::string val;
  std::string out;
  std::string log;
  std::string report;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
  Json file_json = Json::object();
  RunConfig rc = load_run_config(o.common, &file_json);
  const data::WindowedDataset ds = load_dataset(o.data, rc.preprocess);
  adapt_model(rc.model, ds, file_json);
  require_valid(rc.model, rc.ablation);

  Partition p;
  if (!o.val.empty()) {
    p.train = ds;
    p.val = load_dataset(o.val, rc.preprocess);
  } else {
    p = partition(ds, rc, out);
  }
  const data::WindowedDataset train = augment_training(p.train, rc);
  out << "train " << train.size() << " windows (" << p.train.size() << " before augmentation), val " << p.val.size()
      << ", test " << p.test.size() << "\n";

  Rng init(Rng::derive(rc.train.seed, kInitStream));
  const ParamStore params = build(rc.model, rc.ablation, init);
  out << "parameters " << params.scalar_count() << "\n";

  const std::string log_path = o.log.empty() ? o.out + ".log.jsonl" : o.log;
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw DataError("cannot open " + log_path + " for writing");
  const FitResult result = fit(rc.model, rc.ablation, params, train, p.val, rc.train, [&](const EpochRecord& e) {
    log << e.to_json().dump() << "\n";
    log.flush();
    out << "epoch " << e.epoch << "  train_loss " << fmt("%.4f", e.train_loss) << "  val_loss "
        << fmt("%.4f", e.val_loss) << "  val_accuracy " << fmt("%.2f", e.val_accuracy) << "\n";
  });

  save_checkpoint({rc.model, rc.ablation, result.best}, o.out);
  out << "best epoch " << result.best_epoch << ", checkpoint " << o.out << ", log " << log_path << "\n";

  if (p.test.size() > 0) {
    const MetricsReport m = evaluate(result.best, rc.model, rc.ablation, p.test);
    out << "test ";
    print_metrics(m, out);
    if (!o.report.empty()) write_text(o.report, m.to_json().dump(2) + "\n");
  }
  return kOk;
}

struct EvalOptions {
  std::string model;
  std::string data;
  std::string report;
  std::string standardize = "window";
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.model);
  data::PreprocessConfig pre;
  pre.standardize = o.standardize == "none" ? data::Standardize::none : data::Standardize::window;
  const data::WindowedDataset ds = load_dataset(o.data, pre);
  if (ds.channels() != ckpt.config.channels || ds.window() != ckpt.config.window ||
      ds.num_classes != ckpt.config.num_classes) {
    throw DataError("checkpoint expects C=" + std::to_string(ckpt.config.channels) +
                    ", W=" + std::to_string(ckpt.config.window) + ", K=" + std::to_string(ckpt.config.num_classes) +
                    " but " + o.data + " has C=" + std::to_string(ds.channels()) + ", W=" + std::to_string(ds.window()) +
                    ", K=" + std::to_string(ds.num_classes));
  }
  const MetricsReport m = evaluate(ckpt.params, ckpt.config, ckpt.flags, ds);
  print_metrics(m, out);
  print_subject_table(m, out);
  if (!o.report.empty()) write_text(o.report, m.to_json().dump(2) + "\n");
  return kOk;
}

struct AblateOptions {
  CommonOptions common;
  std::string data;
  std::string out;
};

int cmd_ablate(const AblateOptions& o, std::ostream& out) {
  Json file_json = Json::object();
  RunConfig rc = load_run_config(o.common, &file_json);
  const data::WindowedDataset ds = load_dataset(o.data, rc.preprocess);
  adapt_model(rc.model, ds, file_json);
  const Partition p = partition(ds, rc, out);
  const data::WindowedDataset train = augment_training(p.train, rc);
  const auto variants = ablation_rows();
  const auto rows = ablate(rc.model, variants, train, p.val, p.test, rc.train);
  out << format_ablation_table(rows);
  if (!o.out.empty()) write_text(o.out, ablation_to_json(rows).dump(2) + "\n");
  return kOk;
}

struct GradcheckCliOptions {
  std::uint64_t seed = 1;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckCliOptions& o, std::ostream& out) {
  const GradSuiteResult r = gradcheck_suite(o.seed, o.tol);
  out << r.summary(o.tol) << "\n";
  return r.passed() ? kOk : kNumericError;
}

struct SynthOptions {
  data::SynthConfig cfg;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  Rng rng(o.seed);
  const data::WindowedDataset ds = data::synth_generate(o.cfg, rng);
  data::save_emgb(ds, o.out);
  out << "wrote " << ds.size() << " windows (K=" << ds.num_classes << ", C=" << ds.channels() << ", W=" << ds.window()
      << ") to " << o.out << "\n";
  return kOk;
}

struct FlopsOptions {
  CommonOptions common;
  std::optional<std::size_t> input_len;
};

int cmd_flops(const FlopsOptions& o, std::ostream& out) {
  const RunConfig rc = load_run_config(o.common);
  const std::size_t T = o.input_len.value_or(rc.model.window);
  const FlopReport r = count_flops(rc.model, rc.ablation, T);
  out << "layer                              flops\n";
  for (const auto& l : r.layers) {
    char line[128];
    std::snprintf(line, sizeof line, "%-32s %12llu\n", l.name.c_str(), static_cast<unsigned long long>(l.flops));
    out << line;
  }
  out << "total " << r.total << " (" << fmt("%.3f", r.mflops()) << " MFLOPs) at input length " << T << "\n";
  return kOk;
}

struct SplitOptions {
  CommonOptions common;
  std::string data;
  std::string out_prefix;
};

int cmd_split(const SplitOptions& o, std::ostream& out) {
  const RunConfig rc = load_run_config(o.common);
  const data::WindowedDataset ds = data::load_emgb(o.data);
  ds.validate();
  auto write = [&](const data::WindowedDataset& part, const char* name) {
    const std::string path = o.out_prefix + "." + name + ".emgb";
    data::save_emgb(part, path);
    out << name << " " << part.size() << " windows -> " << path << "\n";
  };
  if (rc.preprocess.split.mode == data::SplitMode::ratio) {
    Rng rng(Rng::derive(rc.train.seed, kSplitStream));
    const auto s = data::split_ratio(ds, rc.preprocess.split.ratios, rng);
    write(s.train, "train");
    write(s.val, "val");
    write(s.test, "test");
  } else {
    const auto s = data::split_repetition(ds, rc.preprocess.split.train_reps, rc.preprocess.split.test_reps);
    write(s.train, "train");
    write(s.test, "test");
  }
  return kOk;
}

void add_common(CLI::App* app, CommonOptions& o, bool with_epochs) {
  app->add_option("--config", o.config, "JSON config with sections model, train, preprocess, ablation")
      ->check(CLI::ExistingFile);
  const auto names = preset_names();
  app->add_option("--preset", o.preset, "Training hyperparameter preset")->check(CLI::IsMember(names));
  app->add_option("--seed", o.seed, "Random seed (overrides the config; preset default 42)");
  if (with_epochs) app->add_option("--epochs", o.epochs, "Epoch count (overrides preset and config)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Three-stream sEMG gesture classifier toolkit.\n"
               "Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numeric failure, 4 internal error.\n"
               "TRISTREAM_THREADS caps worker threads (default: all cores).",
               "tristream"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TrainOptions train_o;
  auto* train = app.add_subcommand("train", "Train a model and write a TSW1 checkpoint plus a JSONL log");
  add_common(train, train_o.common, true);
  train->add_option("--data", train_o.data, "EMGB dataset (split 6:2:2 unless --val is given)")->required();
  train->add_option("--val", train_o.val, "EMGB validation set; --data is then used whole for training");
  train->add_option("--out", train_o.out, "Checkpoint path")->required();
  train->add_option("--log", train_o.log, "JSONL training log (default: <out>.log.jsonl)");
  train->add_option("--report", train_o.report, "JSON metrics of the best checkpoint on the test split");

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an EMGB dataset");
  eval->add_option("--model", eval_o.model, "TSW1 checkpoint")->required();
  eval->add_option("--data", eval_o.data, "EMGB dataset")->required();
  eval->add_option("--report", eval_o.report, "Write the metrics report as JSON");
  eval->add_option("--standardize", eval_o.standardize, "Per-window standardization")
      ->check(CLI::IsMember({"none", "window"}));

  AblateOptions ablate_o;
  auto* abl = app.add_subcommand("ablate", "Train and test the five ablation-table variants");
  add_common(abl, ablate_o.common, true);
  abl->add_option("--data", ablate_o.data, "EMGB dataset, split 6:2:2")->required();
  abl->add_option("--out", ablate_o.out, "Write the table as JSON");

  GradcheckCliOptions grad_o;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer and a small full model");
  grad->add_option("--seed", grad_o.seed, "Random seed");
  grad->add_option("--tol", grad_o.tol, "Maximum relative error");

  SynthOptions synth_o;
  auto* synth = app.add_subcommand("synth", "Write a synthetic gesture dataset");
  synth->add_option("--classes", synth_o.cfg.classes, "Number of classes");
  synth->add_option("--channels", synth_o.cfg.channels, "Channels per window");
  synth->add_option("--window", synth_o.cfg.window, "Samples per window");
  synth->add_option("--per-class", synth_o.cfg.per_class, "Windows per class");
  synth->add_option("--noise", synth_o.cfg.noise_std, "Noise standard deviation");
  synth->add_option("--seed", synth_o.seed, "Random seed");
  synth->add_option("--out", synth_o.out, "EMGB output path")->required();

  FlopsOptions flops_o;
  auto* flops = app.add_subcommand("flops", "Count forward-pass FLOPs per layer");
  flops->add_option("--config", flops_o.common.config, "JSON config (model and ablation sections are used)")
      ->check(CLI::ExistingFile);
  flops->add_option("--input-len", flops_o.input_len, "Input length T (default: model window)");

  SplitOptions split_o;
  auto* split = app.add_subcommand("split", "Split an EMGB dataset into train/val/test files");
  add_common(split, split_o.common, false);
  split->add_option("--data", split_o.data, "EMGB dataset")->required();
  split->add_option("--out-prefix", split_o.out_prefix, "Writes <prefix>.train.emgb, .val.emgb, .test.emgb")
      ->required();

  const log::Sink previous = log::set_warning_sink([&err](const std::string& m) { err << "warning: " << m << "\n"; });
  struct Restore {
    const log::Sink& sink;
    ~Restore() { log::set_warning_sink(sink); }
  } restore{previous};

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(train_o, out);
    if (*eval) return cmd_eval(eval_o, out);
    if (*abl) return cmd_ablate(ablate_o, out);
    if (*grad) return cmd_gradcheck(grad_o, out);
    if (*synth) return cmd_synth(synth_o, out);
    if (*flops) return cmd_flops(flops_o, out);
    if (*split) return cmd_split(split_o, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace tristream::cli
