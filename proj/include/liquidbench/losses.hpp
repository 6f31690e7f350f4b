#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "liquidbench/tensor.hpp"

namespace liquidbench {

// Target token sequence for CTC tasks. Tokens live in [1, vocab]; 0 is the
// blank and never appears in targets.
struct LabelSeq {
  std::vector<int> tokens;
};

// Mean negative log-likelihood over the batch, via log-softmax on the
// logits. targets must lie in [0, k).
Tensor cross_entropy(Tape& tape, const Tensor& logits,
                     const std::vector<int>& targets);

// Binary cross-entropy with logits [B x 1]; targets in {0, 1}.
Tensor binary_cross_entropy(Tape& tape, const Tensor& logits,
                            const std::vector<int>& targets);

struct CtcBatchResult {
  Tensor loss;                   // scalar; mean over feasible samples
  std::size_t infeasible = 0;    // samples with T < minimal alignment length
  std::vector<double> per_sample;  // -log P per sample (+inf if infeasible)
};

// log_probs is [T x V] of per-step log-probabilities (V = vocab + 1 with
// blank at index 0). Computed entirely in log space; the analytic
// alpha-beta gradient is injected into the tape.
Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const LabelSeq& target);

// Batched form over stacked [B x T x V] log-probs; valid_lengths gives the
// usable prefix per sample. Infeasible samples are excluded from the mean
// and counted.
CtcBatchResult ctc_loss_batch(Tape& tape, const Tensor& log_probs,
                              const std::vector<LabelSeq>& targets,
                              const std::vector<std::size_t>& valid_lengths);

// Per-step argmax, collapse repeats, drop blanks. log_probs is [T x V].
LabelSeq ctc_greedy_decode(const Tensor& log_probs);

// Levenshtein distance between token sequences.
std::size_t edit_distance(const LabelSeq& a, const LabelSeq& b);

// Character error rate: edit distance normalized by reference length.
// The reference must be nonempty.
double cer(const LabelSeq& predicted, const LabelSeq& reference);

struct RunMeta {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double dropout_rate = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> cer;
  std::vector<std::vector<std::size_t>> confusion;  // [k x k], row = true class
  std::vector<std::size_t> support;                 // per true class
  std::optional<std::size_t> false_positives;       // binary tasks only
  bool degenerate_precision = false;  // a 0/0 case was defined as 0
  bool degenerate_recall = false;
  RunMeta run_meta;
};

// Binary tasks (k == 2) report precision/recall/F1 of the positive class 1
// plus the false-positive count; multiclass reports macro averages. 0/0
// ratios are defined as 0 and flagged.
MetricsReport classify_metrics(const std::vector<int>& predictions,
                               const std::vector<int>& targets, std::size_t k);

}  // namespace liquidbench
