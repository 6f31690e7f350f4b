#include "liquidbench/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "liquidbench/rng.hpp"
#include "liquidbench/stress.hpp"

namespace liquidbench {

namespace fs = std::filesystem;

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// ------------------------------------------------------------- TrainConfig

KvMap TrainConfig::to_kv() const {
  KvMap kv;
  kv["data.task"] = task;
  kv["data.n_samples"] = std::to_string(n_samples);
  kv["data.sepsis_positive_rate"] = format_double(sepsis_positive_rate);
  kv["model.cell"] = cell_kind_name(cell);
  kv["model.hidden"] = std::to_string(hidden);
  kv["model.encoder"] = encoder;
  kv["model.encoder_dim"] = std::to_string(encoder_dim);
  kv["model.mlp_hidden"] = std::to_string(mlp_hidden);
  kv["model.dropout"] = format_double(dropout);
  kv["model.leakage_floor"] = format_double(leakage_floor);
  kv["model.ltc_unfolds"] = std::to_string(ltc_unfolds);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.optimizer"] = optimizer;
  kv["train.lr"] = format_double(lr);
  kv["train.weight_decay"] = format_double(weight_decay);
  kv["train.schedule"] = schedule_kind_name(schedule.kind);
  kv["train.schedule_interval"] = std::to_string(schedule.interval);
  kv["train.schedule_gamma"] = format_double(schedule.gamma);
  kv["train.grad_clip"] = grad_clip ? format_double(*grad_clip) : "none";
  kv["train.seed"] = std::to_string(seed);
  return kv;
}

namespace {

std::size_t kv_size(const KvMap& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (...) {
    throw ConfigError("config field '" + key + "': bad integer '" + it->second + "'");
  }
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw ConfigError("config field '" + key + "': bad number '" + it->second + "'");
  }
}

std::string kv_str(const KvMap& kv, const std::string& key,
                   const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
  TrainConfig c;
  c.task = kv_str(kv, "data.task", c.task);
  c.n_samples = kv_size(kv, "data.n_samples", c.n_samples);
  c.sepsis_positive_rate =
      kv_double(kv, "data.sepsis_positive_rate", c.sepsis_positive_rate);
  c.cell = cell_kind_from_name(kv_str(kv, "model.cell", cell_kind_name(c.cell)));
  c.hidden = kv_size(kv, "model.hidden", c.hidden);
  c.encoder = kv_str(kv, "model.encoder", c.encoder);
  if (c.encoder != "default" && c.encoder != "identity" &&
      c.encoder != "linear_norm_relu") {
    throw ConfigError("config field 'model.encoder': expected "
                      "default|identity|linear_norm_relu, got '" +
                      c.encoder + "'");
  }
  c.encoder_dim = kv_size(kv, "model.encoder_dim", c.encoder_dim);
  c.mlp_hidden = kv_size(kv, "model.mlp_hidden", c.mlp_hidden);
  c.dropout = kv_double(kv, "model.dropout", c.dropout);
  c.leakage_floor = kv_double(kv, "model.leakage_floor", c.leakage_floor);
  c.ltc_unfolds = kv_size(kv, "model.ltc_unfolds", c.ltc_unfolds);
  c.epochs = kv_size(kv, "train.epochs", c.epochs);
  c.batch_size = kv_size(kv, "train.batch_size", c.batch_size);
  c.optimizer = kv_str(kv, "train.optimizer", c.optimizer);
  if (c.optimizer != "adam" && c.optimizer != "adamw") {
    throw ConfigError("config field 'train.optimizer': expected adam|adamw, got '" +
                      c.optimizer + "'");
  }
  c.lr = kv_double(kv, "train.lr", c.lr);
  c.weight_decay = kv_double(kv, "train.weight_decay", c.weight_decay);
  c.schedule.kind = schedule_kind_from_name(
      kv_str(kv, "train.schedule", schedule_kind_name(c.schedule.kind)));
  c.schedule.interval = kv_size(kv, "train.schedule_interval", c.schedule.interval);
  c.schedule.gamma = kv_double(kv, "train.schedule_gamma", c.schedule.gamma);
  std::string clip = kv_str(kv, "train.grad_clip", "none");
  if (clip != "none") {
    try {
      c.grad_clip = std::stod(clip);
    } catch (...) {
      throw ConfigError("config field 'train.grad_clip': bad value '" + clip + "'");
    }
  }
  c.seed = kv_size(kv, "train.seed", c.seed);
  return c;
}

std::string TrainConfig::canonical() const { return canonical_config(to_kv()); }

std::uint64_t TrainConfig::hash() const { return fnv1a64(canonical()); }

// ------------------------------------------------------------- task setup

TaskSetup resolve_task(const TrainConfig& config) {
  TaskSetup setup;
  ModelConfig& m = setup.model;
  m.cell = config.cell;
  m.hidden = config.hidden;
  m.dropout = config.dropout;
  m.leakage_floor = config.leakage_floor;
  m.ltc_unfolds = config.ltc_unfolds;

  auto apply_shape = [&](SynthKind kind) {
    switch (kind) {
      case SynthKind::irregular_sine_class:
        m.encoder = EncoderKind::identity;
        m.head = HeadKind::softmax_classes;
        m.aggregation = AggKind::mean_pool;
        break;
      case SynthKind::event_digits_mini:
        m.encoder = EncoderKind::linear_norm_relu;
        m.encoder_dim = config.encoder_dim ? config.encoder_dim : 32;
        m.head = HeadKind::softmax_classes;
        // last-state readout: the elapsed time since the burst is the
        // class code, which is exactly what a time-aware cell preserves
        // under merged-dt dropout and a step-counting cell does not
        m.aggregation = AggKind::last_state;
        break;
      case SynthKind::stroke_shapes:
        m.encoder = EncoderKind::linear_norm_relu;
        m.encoder_dim = config.encoder_dim ? config.encoder_dim : 32;
        m.head = HeadKind::softmax_classes;
        m.aggregation = AggKind::mean_pool;
        m.mlp_hidden = config.mlp_hidden ? config.mlp_hidden : 32;
        break;
      case SynthKind::sepsis_like:
        m.encoder = EncoderKind::identity;
        m.head = HeadKind::binary_logit;
        m.aggregation = AggKind::last_state;
        break;
    }
  };

  if (is_synth_kind(config.task)) {
    SynthKind kind = synth_kind_from_name(config.task);
    SynthOptions opts;
    opts.sepsis_positive_rate = config.sepsis_positive_rate;
    setup.dataset = synth_task(kind, config.seed, config.n_samples, opts);
    apply_shape(kind);
  } else if (config.task.size() > 7 &&
             config.task.substr(config.task.size() - 7) == ".ndjson") {
    setup.dataset = load_stroke_dataset(config.task);
    apply_shape(SynthKind::stroke_shapes);
  } else if (fs::is_directory(config.task)) {
    bool has_bin = false, has_csv = false;
    for (const auto& e : fs::directory_iterator(config.task)) {
      if (e.path().extension() == ".bin") has_bin = true;
      if (e.path().extension() == ".csv") has_csv = true;
    }
    if (has_bin) {
      setup.dataset = load_event_dataset(config.task);
      apply_shape(SynthKind::event_digits_mini);
    } else if (has_csv) {
      setup.dataset = load_clinical_dataset(config.task);
      apply_shape(SynthKind::sepsis_like);
    } else {
      throw ConfigError("task directory '" + config.task +
                        "' contains neither .bin nor .csv files");
    }
  } else {
    throw ConfigError("task '" + config.task +
                      "' is neither a synthetic kind nor a readable dataset path");
  }

  if (config.encoder == "identity") {
    m.encoder = EncoderKind::identity;
    m.encoder_dim = 0;
  } else if (config.encoder == "linear_norm_relu") {
    m.encoder = EncoderKind::linear_norm_relu;
    m.encoder_dim = config.encoder_dim ? config.encoder_dim : 32;
  }
  m.input_dim = setup.dataset.input_dim;
  m.classes = setup.dataset.num_classes == 2 && m.head == HeadKind::binary_logit
                  ? 2
                  : setup.dataset.num_classes;
  setup.model.validate();
  return setup;
}

SplitIndices split_dataset(std::size_t n) {
  SplitIndices s;
  std::size_t train_end = n * 70 / 100;
  std::size_t val_end = n * 85 / 100;
  for (std::size_t i = 0; i < train_end; ++i) s.train.push_back(i);
  for (std::size_t i = train_end; i < val_end; ++i) s.val.push_back(i);
  for (std::size_t i = val_end; i < n; ++i) s.test.push_back(i);
  return s;
}

// ------------------------------------------------------------- training

namespace {

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.input_dim = data.input_dim;
  out.num_classes = data.num_classes;
  out.task = data.task;
  for (std::size_t i : idx) out.samples.push_back(data.samples[i]);
  return out;
}

// accuracy for classification heads, CER for ctc heads
double eval_metric(Model& model, const Dataset& data, bool ctc) {
  MetricsReport r = evaluate_model(model, data);
  return ctc ? (r.cer ? *r.cer : 1.0) : r.accuracy;
}

std::string render_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,train_metric,val_metric,lr\n";
  for (const EpochLog& row : log) {
    out << row.epoch << ',' << format_double(row.train_loss) << ','
        << format_double(row.train_metric) << ',' << format_double(row.val_metric)
        << ',' << format_double(row.lr) << '\n';
  }
  return out.str();
}

}  // namespace

TrainResult train_on(const TrainConfig& config, const TaskSetup& setup,
                     const std::optional<Checkpoint>& resume_from) {
  if (config.epochs < 1) throw ConfigError("train needs epochs >= 1");
  if (!(config.lr > 0.0)) throw ConfigError("train needs lr > 0");
  if (config.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (config.schedule.kind == ScheduleKind::cosine) {
    // the cosine horizon is the configured run length
    if (config.schedule.total_epochs != config.epochs) {
      throw ConfigError("cosine schedule horizon must equal epochs");
    }
  }

  const Dataset& data = setup.dataset;
  SplitIndices split = split_dataset(data.samples.size());
  if (split.train.empty() || split.val.empty() || split.test.empty()) {
    throw TrainError("dataset too small for a 70/15/15 split");
  }
  Dataset val_set = subset(data, split.val);
  Dataset test_set = subset(data, split.test);

  Model model = Model::build(setup.model, config.seed);
  AdamState adam;
  std::size_t start_epoch = 0;
  if (resume_from) {
    if (resume_from->config_hash != config.hash()) {
      throw TrainError("resume checkpoint was produced by a different config");
    }
    restore_checkpoint(*resume_from, model, adam);
    start_epoch = static_cast<std::size_t>(resume_from->epochs_done);
    if (start_epoch >= config.epochs) {
      throw TrainError("checkpoint already covers all " +
                       std::to_string(config.epochs) + " epochs");
    }
  }

  AdamConfig opt;
  opt.weight_decay = config.weight_decay;
  opt.decoupled = config.optimizer == "adamw";

  bool ctc = setup.ctc;
  Rng root(config.seed);

  TrainResult result;
  double best = ctc ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    double lr_now = lr_schedule(config.schedule, config.lr, epoch);
    opt.lr = lr_now;

    std::vector<std::size_t> order = split.train;
    root.split("shuffle").split(epoch).shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<int> train_preds, train_targets;
    std::vector<double> train_cers;

    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      std::size_t end = std::min(start + config.batch_size, order.size());
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      SequenceBatch batch = make_batch(data, idx);

      Tape tape;
      Rng dropout_rng = root.split("dropout").split(epoch).split(batches);
      Tensor loss;
      if (ctc) {
        ModelOutput out = model.forward_ctc(tape, batch);
        CtcBatchResult cr = ctc_loss_batch(tape, out.logits, batch.seq_targets,
                                           batch.valid_lengths());
        loss = cr.loss;
        std::size_t B = batch.batch(), T = batch.steps();
        std::size_t V = model.config().classes + 1;
        std::vector<std::size_t> lens = batch.valid_lengths();
        for (std::size_t b = 0; b < B; ++b) {
          std::vector<double> lp(lens[b] * V);
          for (std::size_t t = 0; t < lens[b]; ++t) {
            for (std::size_t c = 0; c < V; ++c) {
              lp[t * V + c] = out.logits.values()[(b * T + t) * V + c];
            }
          }
          LabelSeq pred = ctc_greedy_decode(Tensor({lens[b], V}, std::move(lp)));
          if (!batch.seq_targets[b].tokens.empty()) {
            train_cers.push_back(cer(pred, batch.seq_targets[b]));
          }
        }
      } else {
        ModelOutput out =
            model.forward_classify(tape, batch, true, &dropout_rng);
        loss = model.config().head == HeadKind::binary_logit
                   ? binary_cross_entropy(tape, out.logits, batch.class_targets)
                   : cross_entropy(tape, out.logits, batch.class_targets);
        std::vector<int> preds = predict_classes(model.config(), out.logits);
        train_preds.insert(train_preds.end(), preds.begin(), preds.end());
        train_targets.insert(train_targets.end(), batch.class_targets.begin(),
                             batch.class_targets.end());
      }

      if (!std::isfinite(loss.value())) {
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batches) +
                         " (first offending batch); aborting");
      }
      loss_sum += loss.value();
      model.zero_grad();
      tape.backward(loss);
      if (config.grad_clip) clip_grad_norm(model.parameters(), *config.grad_clip);
      adam_step(model.parameters(), adam, opt);
      ++batches;
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    if (ctc) {
      double s = 0;
      for (double c : train_cers) s += c;
      row.train_metric = train_cers.empty() ? 1.0 : s / static_cast<double>(train_cers.size());
    } else {
      std::size_t hit = 0;
      for (std::size_t i = 0; i < train_preds.size(); ++i) {
        if (train_preds[i] == train_targets[i]) ++hit;
      }
      row.train_metric = train_preds.empty()
                             ? 0.0
                             : static_cast<double>(hit) /
                                   static_cast<double>(train_preds.size());
    }
    row.val_metric = eval_metric(model, val_set, ctc);
    row.lr = lr_now;
    result.log.push_back(row);

    bool improved = ctc ? row.val_metric < best : row.val_metric > best;
    if (improved || !have_best) {
      best = row.val_metric;
      have_best = true;
      result.best_epoch = epoch;
      result.best_checkpoint =
          make_checkpoint(model, adam, config.seed, epoch + 1, config.hash(),
                          config.canonical());
    }
  }

  result.final_checkpoint = make_checkpoint(
      model, adam, config.seed, config.epochs, config.hash(), config.canonical());

  // test metrics with the best-val parameters
  Model best_model = Model::build(setup.model, config.seed);
  AdamState scratch;
  restore_checkpoint(result.best_checkpoint, best_model, scratch);
  result.test_metrics = evaluate_model(best_model, test_set);
  result.test_metrics.run_meta.seed = config.seed;
  result.test_metrics.run_meta.config_hash = config.hash();
  result.test_metrics.run_meta.dropout_rate = config.dropout;

  result.log_csv = render_log_csv(result.log);
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    std::ofstream csv(fs::path(config.out_dir) / "log.csv",
                      std::ios::binary | std::ios::trunc);
    csv << result.log_csv;
    save_checkpoint((fs::path(config.out_dir) / "final.ckpt").string(),
                    result.final_checkpoint);
    save_checkpoint((fs::path(config.out_dir) / "best.ckpt").string(),
                    result.best_checkpoint);
  }
  return result;
}

TrainResult train(const TrainConfig& config,
                  const std::optional<Checkpoint>& resume_from) {
  return train_on(config, resolve_task(config), resume_from);
}

}  // namespace liquidbench
