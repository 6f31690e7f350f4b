// liquidbench command-line interface: train / eval / stress / inspect.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "liquidbench/checkpoint.hpp"
#include "liquidbench/config.hpp"
#include "liquidbench/stress.hpp"
#include "liquidbench/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace liquidbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("LIQUIDBENCH_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw ConfigError("LIQUIDBENCH_SEED is not an integer: '" +
                        std::string(env) + "'");
    }
  }
  return 0;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << "0x" << std::hex << h;
  return os.str();
}

json metrics_to_json(const MetricsReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  if (r.cer) j["cer"] = *r.cer;
  if (r.false_positives) j["false_positives"] = *r.false_positives;
  j["degenerate_precision"] = r.degenerate_precision;
  j["degenerate_recall"] = r.degenerate_recall;
  j["confusion"] = r.confusion;
  j["support"] = r.support;
  j["run_meta"] = {{"seed", r.run_meta.seed},
                   {"config_hash", hash_hex(r.run_meta.config_hash)},
                   {"dropout_rate", r.run_meta.dropout_rate}};
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TrainError("cannot write " + path.string());
  out << text;
}

void emit_metrics_json(const fs::path& out_dir, json payload, double wall_seconds) {
  payload["wall_time_seconds"] = wall_seconds;
  write_text(out_dir / "metrics.json", payload.dump(2) + "\n");
}

struct CommonOpts {
  std::string config_file;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

// Config precedence: built-in defaults < config file < command-line flags.
TrainConfig assemble_config(const CommonOpts& common, const KvMap& flag_overrides) {
  KvMap kv;
  if (!common.config_file.empty()) kv = load_config_file(common.config_file);
  for (const auto& [k, v] : flag_overrides) kv[k] = v;
  TrainConfig cfg = TrainConfig::from_kv(kv);
  if (common.seed_set) cfg.seed = common.seed;
  if (kv.find("train.seed") == kv.end() && !common.seed_set) {
    cfg.seed = default_seed();
  }
  if (cfg.schedule.kind == ScheduleKind::cosine) {
    cfg.schedule.total_epochs = cfg.epochs;
  }
  cfg.out_dir = common.out_dir;
  return cfg;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig cfg = TrainConfig::from_kv(parse_config_text(ckpt.config_text));
  if (cfg.schedule.kind == ScheduleKind::cosine) {
    cfg.schedule.total_epochs = cfg.epochs;
  }
  return cfg;
}

Model rebuild_model(const Checkpoint& ckpt, const TrainConfig& cfg,
                    TaskSetup& setup) {
  setup = resolve_task(cfg);
  Model model = Model::build(setup.model, cfg.seed);
  AdamState scratch;
  restore_checkpoint(ckpt, model, scratch);
  return model;
}

Dataset test_split_of(const Dataset& data) {
  SplitIndices split = split_dataset(data.samples.size());
  Dataset out;
  out.input_dim = data.input_dim;
  out.num_classes = data.num_classes;
  out.task = data.task;
  for (std::size_t i : split.test) out.samples.push_back(data.samples[i]);
  return out;
}

int cmd_train(const CommonOpts& common, const KvMap& overrides) {
  auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = assemble_config(common, overrides);
  if (cfg.out_dir.empty()) cfg.out_dir = "runs/latest";
  TrainResult result = train(cfg);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();

  json payload;
  payload["command"] = "train";
  payload["config"] = cfg.to_kv();
  payload["config_hash"] = hash_hex(cfg.hash());
  payload["best_epoch"] = result.best_epoch;
  payload["metrics"] = metrics_to_json(result.test_metrics);
  emit_metrics_json(cfg.out_dir, payload, wall);

  std::cout << "trained " << cell_kind_name(cfg.cell) << "(" << cfg.hidden
            << ") on " << cfg.task << " for " << cfg.epochs << " epochs\n";
  const EpochLog& last = result.log.back();
  std::cout << "final train loss " << format_double(last.train_loss)
            << ", val metric " << format_double(last.val_metric)
            << ", test accuracy " << format_double(result.test_metrics.accuracy);
  if (result.test_metrics.cer) {
    std::cout << ", test cer " << format_double(*result.test_metrics.cer);
  }
  std::cout << "\noutputs in " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_override,
             const CommonOpts& common) {
  auto t0 = std::chrono::steady_clock::now();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_from_checkpoint(ckpt);
  if (!dataset_override.empty()) cfg.task = dataset_override;
  if (common.seed_set) cfg.seed = common.seed;

  TaskSetup setup;
  Model model = rebuild_model(ckpt, cfg, setup);
  Dataset test = test_split_of(setup.dataset);
  MetricsReport report = evaluate_model(model, test);
  report.run_meta.seed = cfg.seed;
  report.run_meta.config_hash = cfg.hash();
  report.run_meta.dropout_rate = 0.0;
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();

  json payload;
  payload["command"] = "eval";
  payload["config"] = cfg.to_kv();
  payload["config_hash"] = hash_hex(cfg.hash());
  payload["metrics"] = metrics_to_json(report);
  if (!common.out_dir.empty()) emit_metrics_json(common.out_dir, payload, wall);

  std::cout << "eval on " << cfg.task << " test split (" << test.samples.size()
            << " samples): accuracy " << format_double(report.accuracy);
  if (report.cer) std::cout << ", cer " << format_double(*report.cer);
  std::cout << "\n";
  return kExitOk;
}

int cmd_stress(const std::string& ckpt_path, const std::string& dataset_override,
               const std::string& rates_csv, const std::string& mode_name,
               std::size_t trials, const CommonOpts& common) {
  auto t0 = std::chrono::steady_clock::now();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_from_checkpoint(ckpt);
  if (!dataset_override.empty()) cfg.task = dataset_override;

  StressPlan plan;
  plan.mode = drop_mode_from_name(mode_name);
  plan.trials = trials;
  plan.base_seed = common.seed_set ? common.seed : default_seed();
  std::stringstream ss(rates_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      plan.rates.push_back(std::stod(tok));
    } catch (...) {
      throw ConfigError("--drop_rates: bad rate '" + tok + "'");
    }
  }
  plan.validate();

  TaskSetup setup;
  Model model = rebuild_model(ckpt, cfg, setup);
  Dataset test = test_split_of(setup.dataset);
  StressResult result = run_stress_sweep(model, test, plan);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();

  std::ostringstream csv;
  csv << "rate,trial,accuracy\n";
  for (const StressCell& cell : result.cells) {
    csv << format_double(cell.rate) << ',' << cell.trial << ','
        << format_double(cell.report.accuracy) << '\n';
  }

  json payload;
  payload["command"] = "stress";
  payload["config"] = cfg.to_kv();
  payload["config_hash"] = hash_hex(cfg.hash());
  json stress;
  stress["mode"] = drop_mode_name(plan.mode);
  stress["trials"] = plan.trials;
  stress["base_seed"] = plan.base_seed;
  stress["rates"] = plan.rates;
  stress["cells"] = json::array();
  for (const StressCell& cell : result.cells) {
    json c;
    c["rate"] = cell.rate;
    c["trial"] = cell.trial;
    c["metrics"] = metrics_to_json(cell.report);
    stress["cells"].push_back(c);
  }
  stress["aggregate"] = json::array();
  for (const StressAggregate& a : result.aggregate) {
    stress["aggregate"].push_back({{"rate", a.rate},
                                   {"median_accuracy", a.median_accuracy},
                                   {"iqr_accuracy", a.iqr_accuracy}});
  }
  stress["warnings"] = result.warnings;
  payload["stress"] = stress;

  if (!common.out_dir.empty()) {
    emit_metrics_json(common.out_dir, payload, wall);
    write_text(fs::path(common.out_dir) / "stress.csv", csv.str());
  }

  for (const StressAggregate& a : result.aggregate) {
    std::cout << "rate " << format_double(a.rate) << ": median accuracy "
              << format_double(a.median_accuracy) << " (iqr "
              << format_double(a.iqr_accuracy) << ")\n";
  }
  for (const std::string& w : result.warnings) {
    std::cout << "warning: " << w << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& ckpt_path, bool as_json) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_from_checkpoint(ckpt);
  TaskSetup setup = resolve_task(cfg);
  Model model = Model::build(setup.model, cfg.seed);
  ParamBreakdown counts = model.param_breakdown();

  json payload;
  payload["command"] = "inspect";
  payload["config"] = cfg.to_kv();
  payload["config_hash"] = hash_hex(ckpt.config_hash);
  payload["epochs_done"] = ckpt.epochs_done;
  payload["counts"] = {{"core", counts.core},
                       {"encoder", counts.encoder},
                       {"head", counts.head},
                       {"total", counts.total()}};
  payload["parameters"] = json::array();
  std::size_t actual_total = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    payload["parameters"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"count", t.size()}});
    actual_total += t.size();
  }
  payload["actual_total"] = actual_total;

  if (as_json) {
    std::cout << payload.dump(2) << "\n";
  } else {
    std::cout << "checkpoint " << ckpt_path << " (after " << ckpt.epochs_done
              << " epochs)\n";
    std::cout << "cell " << cell_kind_name(cfg.cell) << ", hidden " << cfg.hidden
              << ", task " << cfg.task << "\n";
    std::cout << "core params    " << counts.core << "\n";
    std::cout << "encoder params " << counts.encoder << "\n";
    std::cout << "head params    " << counts.head << "\n";
    std::cout << "total params   " << counts.total() << " (tensors hold "
              << actual_total << ")\n";
    for (const auto& [name, t] : ckpt.tensors) {
      std::cout << "  " << name << " " << shape_str(t.shape()) << " = "
                << t.size() << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"liquid time-constant / closed-form continuous-time cells vs "
               "LSTM: training, evaluation, and temporal-dropout stress"};
  app.require_subcommand(1);

  CommonOpts common;
  KvMap overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_file,
                    "key = value config file; flags override it");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "run seed (or LIQUIDBENCH_SEED)")
        ->each([&](const std::string&) { common.seed_set = true; });
  };

  auto add_override = [&](CLI::App* sub, const char* flag, const char* key,
                          const char* help) {
    sub->add_option_function<std::string>(
           flag,
           [&, key](const std::string& v) { overrides[key] = v; }, help);
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd);
  add_override(train_cmd, "--task", "data.task",
               "synthetic kind (irregular_sine_class, event_digits_mini, "
               "stroke_shapes, sepsis_like) or dataset path");
  add_override(train_cmd, "--n-samples", "data.n_samples",
               "synthetic dataset size");
  add_override(train_cmd, "--sepsis-rate", "data.sepsis_positive_rate",
               "positive rate of sepsis_like");
  add_override(train_cmd, "--cell", "model.cell", "ltc | cfc | lstm");
  add_override(train_cmd, "--hidden", "model.hidden", "recurrent units");
  add_override(train_cmd, "--encoder", "model.encoder",
               "default | identity | linear_norm_relu");
  add_override(train_cmd, "--encoder-dim", "model.encoder_dim",
               "encoder width (0 = task default)");
  add_override(train_cmd, "--mlp-hidden", "model.mlp_hidden",
               "classifier hidden width (0 = task default)");
  add_override(train_cmd, "--dropout", "model.dropout", "head dropout rate");
  add_override(train_cmd, "--leakage-floor", "model.leakage_floor",
               "lower bound on the leak / time constant");
  add_override(train_cmd, "--unfolds", "model.ltc_unfolds",
               "euler substeps per ltc step");
  add_override(train_cmd, "--epochs", "train.epochs", "training epochs");
  add_override(train_cmd, "--batch", "train.batch_size", "batch size");
  add_override(train_cmd, "--optimizer", "train.optimizer", "adam | adamw");
  add_override(train_cmd, "--lr", "train.lr", "base learning rate");
  add_override(train_cmd, "--weight-decay", "train.weight_decay",
               "weight decay (adamw decouples it)");
  add_override(train_cmd, "--schedule", "train.schedule", "none | cosine | step");
  add_override(train_cmd, "--step-interval", "train.schedule_interval",
               "step schedule interval");
  add_override(train_cmd, "--step-gamma", "train.schedule_gamma",
               "step schedule decay factor");
  add_override(train_cmd, "--grad-clip", "train.grad_clip",
               "max gradient norm, or 'none'");

  std::string ckpt_path, dataset_override, drop_rates = "0,0.3,0.5,0.7";
  std::string mode_name = "zero_fill";
  std::size_t trials = 5;
  bool inspect_json = false;

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset_override,
                       "dataset kind or path (default: the training task)");
  add_common(eval_cmd);

  CLI::App* stress_cmd =
      app.add_subcommand("stress", "temporal-dropout stress sweep");
  stress_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")
      ->required();
  stress_cmd->add_option("--dataset", dataset_override,
                         "dataset kind or path (default: the training task)");
  stress_cmd->add_option("--drop_rates", drop_rates,
                         "comma-separated masking ratios");
  stress_cmd->add_option("--mode", mode_name, "zero_fill | drop_merge_dt");
  stress_cmd->add_option("--trials", trials, "stress trials per rate");
  add_common(stress_cmd);

  CLI::App* inspect_cmd =
      app.add_subcommand("inspect", "print checkpoint parameter counts");
  inspect_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")
      ->required();
  inspect_cmd->add_flag("--json", inspect_json, "emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common, overrides);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, dataset_override, common);
    if (stress_cmd->parsed()) {
      return cmd_stress(ckpt_path, dataset_override, drop_rates, mode_name,
                        trials, common);
    }
    if (inspect_cmd->parsed()) return cmd_inspect(ckpt_path, inspect_json);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
