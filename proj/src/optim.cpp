#include "liquidbench/optim.hpp"

#include <cmath>

namespace liquidbench {

void adam_step(std::map<std::string, Tensor>& params, AdamState& state,
               const AdamConfig& config) {
  state.step += 1;
  double t = static_cast<double>(state.step);
  double bc1 = 1.0 - std::pow(config.beta1, t);
  double bc2 = 1.0 - std::pow(config.beta2, t);

  for (auto& [name, p] : params) {
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0);
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    const std::vector<double>& g = p.grad();
    std::vector<double>& w = p.mutable_values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double grad = g[i];
      if (!config.decoupled && config.weight_decay != 0.0) {
        grad += config.weight_decay * w[i];
      }
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad * grad;
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      if (config.decoupled && config.weight_decay != 0.0) {
        w[i] -= config.lr * config.weight_decay * w[i];
      }
      w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

const char* schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::none: return "none";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::step: return "step";
  }
  return "?";
}

ScheduleKind schedule_kind_from_name(const std::string& s) {
  if (s == "none") return ScheduleKind::none;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "step") return ScheduleKind::step;
  throw ValueError("unknown schedule '" + s + "' (expected none|cosine|step)");
}

double lr_schedule(const Schedule& schedule, double base_lr, std::size_t epoch) {
  switch (schedule.kind) {
    case ScheduleKind::none:
      return base_lr;
    case ScheduleKind::cosine: {
      if (epoch >= schedule.total_epochs) {
        throw ValueError("epoch " + std::to_string(epoch) +
                         " outside the cosine horizon of " +
                         std::to_string(schedule.total_epochs));
      }
      double frac = static_cast<double>(epoch) /
                    static_cast<double>(schedule.total_epochs);
      return base_lr * (1.0 + std::cos(3.141592653589793238462643383279 * frac)) / 2.0;
    }
    case ScheduleKind::step: {
      std::size_t decays = epoch / schedule.interval;
      return base_lr * std::pow(schedule.gamma, static_cast<double>(decays));
    }
  }
  return base_lr;
}

double clip_grad_norm(std::map<std::string, Tensor>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ValueError("clip_grad_norm needs max_norm > 0");
  double sq = 0.0;
  for (auto& [name, p] : params) {
    for (double g : p.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& [name, p] : params) {
      for (double& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace liquidbench
