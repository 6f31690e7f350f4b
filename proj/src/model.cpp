#include "liquidbench/model.hpp"

#include <cmath>

namespace liquidbench {

namespace {

Tensor uniform_init(Shape shape, Rng rng, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  Tensor t(std::move(shape), std::move(v));
  t.grad();
  return t;
}

Tensor linear_layer_init(Shape shape, Rng rng, std::size_t fan_in) {
  return uniform_init(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor const_init(Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.grad();
  return t;
}

}  // namespace

const char* encoder_kind_name(EncoderKind k) {
  return k == EncoderKind::identity ? "identity" : "linear_norm_relu";
}
const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::softmax_classes: return "softmax_classes";
    case HeadKind::ctc_vocab: return "ctc_vocab";
    case HeadKind::binary_logit: return "binary_logit";
  }
  return "?";
}
const char* agg_kind_name(AggKind k) {
  switch (k) {
    case AggKind::mean_pool: return "mean_pool";
    case AggKind::last_state: return "last_state";
    case AggKind::global_avg_pool: return "global_avg_pool";
    case AggKind::per_step: return "per_step";
  }
  return "?";
}

EncoderKind encoder_kind_from_name(const std::string& s) {
  if (s == "identity") return EncoderKind::identity;
  if (s == "linear_norm_relu") return EncoderKind::linear_norm_relu;
  throw ConfigError("unknown encoder '" + s + "'");
}
HeadKind head_kind_from_name(const std::string& s) {
  if (s == "softmax_classes") return HeadKind::softmax_classes;
  if (s == "ctc_vocab") return HeadKind::ctc_vocab;
  if (s == "binary_logit") return HeadKind::binary_logit;
  throw ConfigError("unknown head '" + s + "'");
}
AggKind agg_kind_from_name(const std::string& s) {
  if (s == "mean_pool") return AggKind::mean_pool;
  if (s == "last_state") return AggKind::last_state;
  if (s == "global_avg_pool") return AggKind::global_avg_pool;
  if (s == "per_step") return AggKind::per_step;
  throw ConfigError("unknown aggregation '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_dim == 0 || hidden == 0) {
    throw ConfigError("model needs positive input_dim and hidden");
  }
  if (encoder == EncoderKind::linear_norm_relu && encoder_dim == 0) {
    throw ConfigError("linear_norm_relu encoder needs encoder_dim > 0");
  }
  if (classes == 0) throw ConfigError("model needs classes >= 1");
  if (head == HeadKind::ctc_vocab && aggregation != AggKind::per_step) {
    throw ConfigError(
        "ctc_vocab head needs per-step outputs; aggregation must be per_step, "
        "not " + std::string(agg_kind_name(aggregation)));
  }
  if (head != HeadKind::ctc_vocab && aggregation == AggKind::per_step) {
    throw ConfigError("per_step aggregation is only valid with a ctc_vocab head");
  }
  if (head == HeadKind::binary_logit && aggregation != AggKind::last_state) {
    throw ConfigError("binary_logit head requires last_state aggregation");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng init = Rng(seed).split("init");

  std::size_t core_in = config.core_input_dim();
  m.cell_ = CellParams::init(config.cell, core_in, config.hidden,
                             init.split("cell"), config.leakage_floor);
  m.cell_.ltc_unfolds = config.ltc_unfolds;
  for (auto& [name, w] : m.cell_.weights) {
    m.params_["cell." + name] = w;
  }

  if (config.encoder == EncoderKind::linear_norm_relu) {
    std::size_t d = config.input_dim, e = config.encoder_dim;
    m.params_["encoder.weight"] =
        linear_layer_init({d, e}, init.split("encoder.weight"), d);
    m.params_["encoder.bias"] =
        linear_layer_init({e}, init.split("encoder.bias"), d);
    m.params_["encoder.ln_gamma"] = const_init({e}, 1.0);
    m.params_["encoder.ln_beta"] = const_init({e}, 0.0);
  }

  std::size_t h = config.hidden;
  std::size_t out = config.head == HeadKind::binary_logit
                        ? 1
                        : config.head == HeadKind::ctc_vocab ? config.classes + 1
                                                             : config.classes;
  if (config.mlp_hidden > 0 && config.head != HeadKind::ctc_vocab) {
    std::size_t mh = config.mlp_hidden;
    m.params_["head.fc1_weight"] =
        linear_layer_init({h, mh}, init.split("head.fc1_weight"), h);
    m.params_["head.fc1_bias"] =
        linear_layer_init({mh}, init.split("head.fc1_bias"), h);
    m.params_["head.fc2_weight"] =
        linear_layer_init({mh, out}, init.split("head.fc2_weight"), mh);
    m.params_["head.fc2_bias"] =
        linear_layer_init({out}, init.split("head.fc2_bias"), mh);
  } else {
    m.params_["head.weight"] =
        linear_layer_init({h, out}, init.split("head.weight"), h);
    m.params_["head.bias"] = linear_layer_init({out}, init.split("head.bias"), h);
  }
  return m;
}

ParamBreakdown Model::param_breakdown() const {
  ParamBreakdown b;
  b.core = cell_.param_count();
  if (config_.encoder == EncoderKind::linear_norm_relu) {
    b.encoder = config_.input_dim * config_.encoder_dim + 3 * config_.encoder_dim;
  }
  std::size_t h = config_.hidden;
  std::size_t out = config_.head == HeadKind::binary_logit
                        ? 1
                        : config_.head == HeadKind::ctc_vocab
                              ? config_.classes + 1
                              : config_.classes;
  if (config_.mlp_hidden > 0 && config_.head != HeadKind::ctc_vocab) {
    b.head = h * config_.mlp_hidden + config_.mlp_hidden +
             config_.mlp_hidden * out + out;
  } else {
    b.head = h * out + out;
  }
  return b;
}

void Model::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

ModelOutput Model::forward(Tape& tape, const SequenceBatch& batch, MaskMode mode,
                           bool training, Rng* dropout_rng, bool want_trace) {
  if (batch.dim() != config_.input_dim) {
    throw ShapeError("batch input dim " + std::to_string(batch.dim()) +
                     " != model input dim " + std::to_string(config_.input_dim));
  }
  for (auto& [name, p] : params_) tape.watch(p);

  std::size_t B = batch.batch(), T = batch.steps(), D = batch.dim();
  const auto& flat = batch.inputs.values();

  // per-step encoding
  std::vector<Tensor> steps;
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> sv(B * D);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>((b * T + t) * D),
                flat.begin() + static_cast<std::ptrdiff_t>((b * T + t + 1) * D),
                sv.begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    Tensor x({B, D}, std::move(sv));
    if (config_.encoder == EncoderKind::linear_norm_relu) {
      Tensor z = add(tape, matmul(tape, x, params_.at("encoder.weight")),
                     params_.at("encoder.bias"));
      Tensor normed = layer_norm(tape, z, params_.at("encoder.ln_gamma"),
                                 params_.at("encoder.ln_beta"));
      steps.push_back(relu(tape, normed));
    } else {
      steps.push_back(x);
    }
  }

  CellState init = CellState::zeros(config_.cell, B, config_.hidden);
  std::vector<CellState> trace = run_sequence(
      tape, cell_, steps, batch.delta_t.values(), batch.mask.values(), init, mode);

  ModelOutput out;
  if (want_trace) {
    out.hidden_trace.emplace();
    for (const CellState& s : trace) out.hidden_trace->push_back(s.hidden);
  }

  auto linear_head = [&](const Tensor& in) {
    if (config_.mlp_hidden > 0 && config_.head != HeadKind::ctc_vocab) {
      Tensor hmid = relu(tape, add(tape, matmul(tape, in, params_.at("head.fc1_weight")),
                                   params_.at("head.fc1_bias")));
      if (training && config_.dropout > 0.0) {
        if (dropout_rng == nullptr) {
          throw ValueError("training forward with dropout needs an rng");
        }
        std::vector<double> dmask(hmid.size());
        double keep = 1.0 - config_.dropout;
        for (double& v : dmask) {
          v = dropout_rng->bernoulli(config_.dropout) ? 0.0 : 1.0 / keep;
        }
        hmid = mul(tape, hmid, Tensor(hmid.shape(), std::move(dmask)));
      }
      return add(tape, matmul(tape, hmid, params_.at("head.fc2_weight")),
                 params_.at("head.fc2_bias"));
    }
    return add(tape, matmul(tape, in, params_.at("head.weight")),
               params_.at("head.bias"));
  };

  const auto& mask = batch.mask.values();
  switch (config_.aggregation) {
    case AggKind::mean_pool:
    case AggKind::global_avg_pool: {
      // masked temporal mean: sum(h_t * m_t) / count of valid steps
      Tensor acc = Tensor::zeros({B, config_.hidden});
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> m(B);
        for (std::size_t b = 0; b < B; ++b) m[b] = mask[b * T + t];
        acc = add(tape, acc,
                  mul(tape, trace[t].hidden, tile_rows(m, config_.hidden)));
      }
      std::vector<double> inv(B);
      for (std::size_t b = 0; b < B; ++b) {
        double count = 0;
        for (std::size_t t = 0; t < T; ++t) count += mask[b * T + t];
        inv[b] = count > 0 ? 1.0 / count : 0.0;
      }
      Tensor pooled = mul(tape, acc, tile_rows(inv, config_.hidden));
      out.logits = linear_head(pooled);
      break;
    }
    case AggKind::last_state: {
      // carry forward the last valid state per row
      Tensor last = trace[0].hidden;
      for (std::size_t t = 1; t < T; ++t) {
        std::vector<double> m(B), keep(B);
        for (std::size_t b = 0; b < B; ++b) {
          m[b] = mask[b * T + t];
          keep[b] = 1.0 - m[b];
        }
        last = add(tape, mul(tape, trace[t].hidden, tile_rows(m, config_.hidden)),
                   mul(tape, last, tile_rows(keep, config_.hidden)));
      }
      out.logits = linear_head(last);
      break;
    }
    case AggKind::per_step: {
      std::vector<Tensor> logp;
      logp.reserve(T);
      for (std::size_t t = 0; t < T; ++t) {
        logp.push_back(log_softmax(tape, linear_head(trace[t].hidden), 1));
      }
      out.logits = stack_time(tape, logp);  // [B x T x (v+1)]
      break;
    }
  }
  return out;
}

ModelOutput Model::forward_classify(Tape& tape, const SequenceBatch& batch,
                                    bool training, Rng* dropout_rng) {
  if (config_.head == HeadKind::ctc_vocab) {
    throw ConfigError("forward_classify on a ctc_vocab model");
  }
  return forward(tape, batch, MaskMode::hold_state, training, dropout_rng);
}

ModelOutput Model::forward_ctc(Tape& tape, const SequenceBatch& batch) {
  if (config_.head != HeadKind::ctc_vocab) {
    throw ConfigError("forward_ctc needs a ctc_vocab head, this model has " +
                      std::string(head_kind_name(config_.head)));
  }
  return forward(tape, batch, MaskMode::hold_state, false, nullptr);
}

std::vector<int> predict_classes(const ModelConfig& config, const Tensor& logits) {
  std::size_t B = logits.shape()[0];
  std::vector<int> out(B);
  if (config.head == HeadKind::binary_logit) {
    for (std::size_t b = 0; b < B; ++b) {
      out[b] = logits.values()[b] > 0.0 ? 1 : 0;
    }
    return out;
  }
  std::size_t k = logits.shape()[1];
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.values()[b * k + c] > logits.values()[b * k + best]) best = c;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace liquidbench
