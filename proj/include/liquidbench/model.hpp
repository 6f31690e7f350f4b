#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "liquidbench/cells.hpp"
#include "liquidbench/data.hpp"
#include "liquidbench/rng.hpp"
#include "liquidbench/tensor.hpp"

namespace liquidbench {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class EncoderKind { identity, linear_norm_relu };
enum class HeadKind { softmax_classes, ctc_vocab, binary_logit };
enum class AggKind { mean_pool, last_state, global_avg_pool, per_step };

const char* encoder_kind_name(EncoderKind k);
const char* head_kind_name(HeadKind k);
const char* agg_kind_name(AggKind k);
EncoderKind encoder_kind_from_name(const std::string& s);
HeadKind head_kind_from_name(const std::string& s);
AggKind agg_kind_from_name(const std::string& s);

struct ModelConfig {
  CellKind cell = CellKind::cfc;
  std::size_t input_dim = 0;
  std::size_t hidden = 32;
  EncoderKind encoder = EncoderKind::identity;
  std::size_t encoder_dim = 0;  // linear_norm_relu output width
  HeadKind head = HeadKind::softmax_classes;
  std::size_t classes = 2;      // k for softmax, vocab v for ctc (blank excluded)
  std::size_t mlp_hidden = 0;   // 0 = plain linear head
  double dropout = 0.3;         // MLP head, training mode only
  AggKind aggregation = AggKind::mean_pool;
  double leakage_floor = 0.1;
  std::size_t ltc_unfolds = 6;

  // head/aggregation compatibility; throws ConfigError
  void validate() const;
  std::size_t core_input_dim() const {
    return encoder == EncoderKind::identity ? input_dim : encoder_dim;
  }
};

struct ModelOutput {
  Tensor logits;  // [B x k], [B x 1], or [B x T x (v+1)] log-probs for ctc
  std::optional<std::vector<Tensor>> hidden_trace;
};

struct ParamBreakdown {
  std::size_t encoder = 0;
  std::size_t core = 0;
  std::size_t head = 0;
  std::size_t total() const { return encoder + core + head; }
};

class Model {
public:
  // Deterministic parameter initialization: every tensor draws from an RNG
  // stream derived from (seed, "init", tensor name).
  static Model build(const ModelConfig& config, std::uint64_t seed);

  // training=true enables head dropout, drawing the mask from dropout_rng.
  ModelOutput forward(Tape& tape, const SequenceBatch& batch,
                      MaskMode mode = MaskMode::hold_state,
                      bool training = false, Rng* dropout_rng = nullptr,
                      bool want_trace = false);

  ModelOutput forward_classify(Tape& tape, const SequenceBatch& batch,
                               bool training = false,
                               Rng* dropout_rng = nullptr);
  // Per-step log-probabilities [B x T x (v+1)], blank at index 0.
  ModelOutput forward_ctc(Tape& tape, const SequenceBatch& batch);

  const ModelConfig& config() const { return config_; }
  const CellParams& cell() const { return cell_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }

  ParamBreakdown param_breakdown() const;  // closed-form counts
  std::size_t param_count() const { return param_breakdown().total(); }

  void zero_grad();

private:
  ModelConfig config_;
  CellParams cell_;
  std::map<std::string, Tensor> params_;  // shares storage with cell_.weights
};

// argmax per row of [B x k] logits; binary_logit thresholds at 0.
std::vector<int> predict_classes(const ModelConfig& config, const Tensor& logits);

}  // namespace liquidbench
