#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "liquidbench/checkpoint.hpp"
#include "liquidbench/config.hpp"
#include "liquidbench/data.hpp"
#include "liquidbench/losses.hpp"
#include "liquidbench/model.hpp"
#include "liquidbench/optim.hpp"

namespace liquidbench {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string task = "irregular_sine_class";  // synthetic kind or file path
  std::size_t n_samples = 2000;               // synthetic tasks only
  CellKind cell = CellKind::cfc;
  std::size_t hidden = 32;
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  std::string optimizer = "adam";  // adam | adamw
  double lr = 1e-3;
  double weight_decay = 0.0;
  Schedule schedule;
  std::optional<double> grad_clip;
  std::uint64_t seed = 0;

  std::string encoder = "default";  // default | identity | linear_norm_relu
  std::size_t encoder_dim = 0;      // 0 = task default
  std::size_t mlp_hidden = 0;       // 0 = task default
  double dropout = 0.3;
  double leakage_floor = 0.1;
  std::size_t ltc_unfolds = 6;
  double sepsis_positive_rate = 0.1;

  std::string out_dir;  // empty = keep everything in memory

  KvMap to_kv() const;  // everything except out_dir
  static TrainConfig from_kv(const KvMap& kv);
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Dataset plus the fully resolved model shape for the configured task.
struct TaskSetup {
  Dataset dataset;
  ModelConfig model;
  bool ctc = false;
};

TaskSetup resolve_task(const TrainConfig& config);

// Deterministic 70/15/15 split over the (already seed-shuffled) dataset.
struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};
SplitIndices split_dataset(std::size_t n);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_metric = 0;  // accuracy, or CER for ctc heads
  double val_metric = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::size_t best_epoch = 0;
  MetricsReport test_metrics;  // evaluated with the best-val parameters
  std::string log_csv;         // the exact text written to log.csv
};

// Trains per the config; deterministic given the seed. Writes log.csv,
// final.ckpt and best.ckpt under out_dir when set. resume_from continues
// a run from an earlier checkpoint of the same config.
TrainResult train(const TrainConfig& config,
                  const std::optional<Checkpoint>& resume_from = {});

// Same loop on a caller-supplied setup (custom datasets, ctc tasks).
TrainResult train_on(const TrainConfig& config, const TaskSetup& setup,
                     const std::optional<Checkpoint>& resume_from = {});

// Shortest round-trip decimal rendering (std::to_chars) used for every
// float that lands in CSV or JSON output.
std::string format_double(double v);

}  // namespace liquidbench
