#pragma once

#include <cstdint>
#include <vector>

#include "liquidbench/data.hpp"
#include "liquidbench/losses.hpp"
#include "liquidbench/model.hpp"

namespace liquidbench {

enum class DropMode { zero_fill, drop_merge_dt };

const char* drop_mode_name(DropMode mode);
DropMode drop_mode_from_name(const std::string& name);

struct StressPlan {
  std::vector<double> rates;  // ascending, unique, each in [0, 1)
  DropMode mode = DropMode::zero_fill;
  std::size_t trials = 1;
  std::uint64_t base_seed = 0;

  void validate() const;
};

// Drops each valid step independently with probability `rate`, resampling
// any sequence that would lose every step.
//   zero_fill:     inputs zeroed, mask cleared, delta_t set to 1; T unchanged.
//   drop_merge_dt: dropped steps are removed and their delta_t accumulates
//                  onto the next surviving step (trailing drops fold into
//                  the last survivor, conserving total elapsed time); the
//                  batch is re-padded, so T may shrink.
SequenceBatch apply_temporal_dropout(const SequenceBatch& batch, double rate,
                                     DropMode mode, std::uint64_t seed);

struct StressCell {
  double rate = 0;
  std::size_t trial = 0;
  MetricsReport report;
};

struct StressAggregate {
  double rate = 0;
  double median_accuracy = 0;
  double iqr_accuracy = 0;
};

struct StressResult {
  std::vector<StressCell> cells;          // ordered by (rate, trial)
  std::vector<StressAggregate> aggregate;
  std::vector<std::string> warnings;      // e.g. non-monotone medians
};

// Plain evaluation used both standalone and as the rate-0 short circuit of
// the stress sweep, guaranteeing bit-identical results at rate 0.
MetricsReport evaluate_model(Model& model, const Dataset& data,
                             std::size_t eval_batch = 64);

// Evaluates the model on the dataset corrupted at every (rate, trial),
// with seeds derived from (base_seed, rate index, trial). Rate 0 short
// circuits to a single clean evaluation.
StressResult run_stress_sweep(Model& model, const Dataset& data,
                              const StressPlan& plan,
                              std::size_t eval_batch = 64);

}  // namespace liquidbench
