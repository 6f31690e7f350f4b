#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "liquidbench/tensor.hpp"

namespace liquidbench {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled = false;  // true = AdamW (decay applied to weights directly)
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
};

// Standard Adam with bias correction, reading each parameter's grad buffer.
// decoupled=false folds weight_decay into the gradient (classic L2);
// decoupled=true shrinks the weights directly (AdamW).
void adam_step(std::map<std::string, Tensor>& params, AdamState& state,
               const AdamConfig& config);

enum class ScheduleKind { none, cosine, step };

struct Schedule {
  ScheduleKind kind = ScheduleKind::none;
  std::size_t total_epochs = 1;   // cosine horizon
  std::size_t interval = 10;      // step schedule
  double gamma = 0.1;
};

const char* schedule_kind_name(ScheduleKind k);
ScheduleKind schedule_kind_from_name(const std::string& s);

// cosine: base_lr (1 + cos(pi epoch / total)) / 2; step: base_lr gamma^(epoch/interval).
// epoch must lie in [0, total) for cosine.
double lr_schedule(const Schedule& schedule, double base_lr, std::size_t epoch);

// Scales every gradient by max_norm / ||g||_2 when the global norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::map<std::string, Tensor>& params, double max_norm);

}  // namespace liquidbench
