#include "liquidbench/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace liquidbench {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

// Blank-extended target: blank, l1, blank, l2, ..., blank.
std::vector<int> extend_with_blanks(const LabelSeq& target) {
  std::vector<int> ext;
  ext.reserve(2 * target.tokens.size() + 1);
  ext.push_back(0);
  for (int tok : target.tokens) {
    ext.push_back(tok);
    ext.push_back(0);
  }
  return ext;
}

struct CtcSample {
  double loss;               // -log P(target | log_probs), +inf infeasible
  std::vector<double> grad;  // d loss / d log_probs, [T x V] flat
};

// Forward-backward over the blank-extended target, all in log space.
// beta excludes the emission at t, so alpha_t(s) + beta_t(s) log-sums to
// log P at every t and d(-logP)/d(log p_t(c)) = -exp(lse_{s: l's=c} - logP).
CtcSample ctc_forward_backward(const double* lp, std::size_t T, std::size_t V,
                               const LabelSeq& target) {
  for (int tok : target.tokens) {
    if (tok <= 0 || static_cast<std::size_t>(tok) >= V) {
      throw ValueError("ctc target token " + std::to_string(tok) +
                       " outside [1, " + std::to_string(V - 1) + "]");
    }
  }
  std::vector<int> ext = extend_with_blanks(target);
  std::size_t S = ext.size();

  CtcSample out;
  out.grad.assign(T * V, 0.0);

  auto allowed_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0 * S + 0] = lp[0 * V + 0];
  if (S > 1) alpha[0 * S + 1] = lp[0 * V + static_cast<std::size_t>(ext[1])];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double best = alpha[(t - 1) * S + s];
      if (s >= 1) best = log_add(best, alpha[(t - 1) * S + s - 1]);
      if (allowed_skip(s)) best = log_add(best, alpha[(t - 1) * S + s - 2]);
      if (best == kNegInf) continue;
      alpha[t * S + s] = best + lp[t * V + static_cast<std::size_t>(ext[s])];
    }
  }

  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
  if (log_p == kNegInf) {
    out.loss = std::numeric_limits<double>::infinity();
    return out;  // infeasible: T shorter than the minimal alignment
  }
  out.loss = -log_p;

  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t ti = T - 1; ti-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc =
          beta[(ti + 1) * S + s] + lp[(ti + 1) * V + static_cast<std::size_t>(ext[s])];
      if (s + 1 < S) {
        acc = log_add(acc, beta[(ti + 1) * S + s + 1] +
                               lp[(ti + 1) * V + static_cast<std::size_t>(ext[s + 1])]);
      }
      if (s + 2 < S && allowed_skip(s + 2)) {
        acc = log_add(acc, beta[(ti + 1) * S + s + 2] +
                               lp[(ti + 1) * V + static_cast<std::size_t>(ext[s + 2])]);
      }
      beta[ti * S + s] = acc;
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> per_class(V, kNegInf);
    for (std::size_t s = 0; s < S; ++s) {
      double ab = alpha[t * S + s] + beta[t * S + s];
      if (ab == kNegInf || std::isnan(ab)) continue;
      std::size_t c = static_cast<std::size_t>(ext[s]);
      per_class[c] = log_add(per_class[c], ab);
    }
    for (std::size_t c = 0; c < V; ++c) {
      if (per_class[c] == kNegInf) continue;
      out.grad[t * V + c] = -std::exp(per_class[c] - log_p);
    }
  }
  return out;
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits,
                     const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy expects [B x k] logits, got " +
                     shape_str(logits.shape()));
  }
  std::size_t batch = logits.shape()[0], k = logits.shape()[1];
  if (targets.size() != batch) {
    throw ShapeError("cross_entropy got " + std::to_string(targets.size()) +
                     " targets for a batch of " + std::to_string(batch));
  }
  std::vector<double> onehot(batch * k, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= k) {
      throw ValueError("cross_entropy target " + std::to_string(targets[b]) +
                       " outside [0, " + std::to_string(k) + ")");
    }
    onehot[b * k + static_cast<std::size_t>(targets[b])] = 1.0;
  }
  Tensor logp = log_softmax(tape, logits, 1);
  Tensor picked = reduce_sum(tape, mul(tape, logp, Tensor({batch, k}, onehot)));
  return mul(tape, picked, Tensor::scalar(-1.0 / static_cast<double>(batch)));
}

Tensor binary_cross_entropy(Tape& tape, const Tensor& logits,
                            const std::vector<int>& targets) {
  if (logits.rank() != 2 || logits.shape()[1] != 1) {
    throw ShapeError("binary_cross_entropy expects [B x 1] logits, got " +
                     shape_str(logits.shape()));
  }
  std::size_t batch = logits.shape()[0];
  if (targets.size() != batch) {
    throw ShapeError("binary_cross_entropy target count mismatch");
  }
  // mean(softplus(z) - z y), the logit form of the negative log-likelihood
  std::vector<double> y(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] != 0 && targets[b] != 1) {
      throw ValueError("binary target must be 0 or 1");
    }
    y[b] = static_cast<double>(targets[b]);
  }
  Tensor yz = mul(tape, logits, Tensor({batch, 1}, y));
  return reduce_mean(tape, sub(tape, softplus(tape, logits), yz));
}

Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const LabelSeq& target) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_loss expects [T x V] log-probs, got " +
                     shape_str(log_probs.shape()));
  }
  std::size_t T = log_probs.shape()[0], V = log_probs.shape()[1];
  if (T == 0 || V < 2) throw ShapeError("ctc_loss needs T >= 1 and V >= 2");
  CtcSample s = ctc_forward_backward(log_probs.values().data(), T, V, target);
  return custom_scalar(tape, log_probs, s.loss, std::move(s.grad));
}

CtcBatchResult ctc_loss_batch(Tape& tape, const Tensor& log_probs,
                              const std::vector<LabelSeq>& targets,
                              const std::vector<std::size_t>& valid_lengths) {
  if (log_probs.rank() != 3) {
    throw ShapeError("ctc_loss_batch expects [B x T x V] log-probs, got " +
                     shape_str(log_probs.shape()));
  }
  std::size_t B = log_probs.shape()[0];
  std::size_t T = log_probs.shape()[1];
  std::size_t V = log_probs.shape()[2];
  if (targets.size() != B || valid_lengths.size() != B) {
    throw ShapeError("ctc_loss_batch batch size mismatch");
  }

  CtcBatchResult result;
  result.per_sample.resize(B);
  std::vector<double> grad(B * T * V, 0.0);
  double total = 0.0;
  std::size_t feasible = 0;

  for (std::size_t b = 0; b < B; ++b) {
    std::size_t Tb = std::min(valid_lengths[b], T);
    if (Tb == 0) {
      result.per_sample[b] = std::numeric_limits<double>::infinity();
      ++result.infeasible;
      continue;
    }
    CtcSample s = ctc_forward_backward(log_probs.values().data() + b * T * V,
                                       Tb, V, targets[b]);
    result.per_sample[b] = s.loss;
    if (!std::isfinite(s.loss)) {
      ++result.infeasible;
      continue;
    }
    total += s.loss;
    ++feasible;
    for (std::size_t i = 0; i < Tb * V; ++i) grad[b * T * V + i] = s.grad[i];
  }

  if (feasible == 0) {
    result.loss =
        custom_scalar(tape, log_probs, std::numeric_limits<double>::infinity(),
                      std::vector<double>(B * T * V, 0.0));
    return result;
  }
  double inv = 1.0 / static_cast<double>(feasible);
  for (double& g : grad) g *= inv;
  result.loss = custom_scalar(tape, log_probs, total * inv, std::move(grad));
  return result;
}

LabelSeq ctc_greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_greedy_decode expects [T x V], got " +
                     shape_str(log_probs.shape()));
  }
  std::size_t T = log_probs.shape()[0], V = log_probs.shape()[1];
  const std::vector<double>& lp = log_probs.values();
  LabelSeq out;
  int prev = 0;
  for (std::size_t t = 0; t < T; ++t) {
    int best = 0;
    double best_v = lp[t * V];
    for (std::size_t c = 1; c < V; ++c) {
      if (lp[t * V + c] > best_v) {
        best_v = lp[t * V + c];
        best = static_cast<int>(c);
      }
    }
    if (best != 0 && best != prev) out.tokens.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t edit_distance(const LabelSeq& a, const LabelSeq& b) {
  std::size_t n = a.tokens.size(), m = b.tokens.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (a.tokens[i - 1] == b.tokens[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const LabelSeq& predicted, const LabelSeq& reference) {
  if (reference.tokens.empty()) {
    throw ValueError("cer needs a nonempty reference sequence");
  }
  return static_cast<double>(edit_distance(predicted, reference)) /
         static_cast<double>(reference.tokens.size());
}

MetricsReport classify_metrics(const std::vector<int>& predictions,
                               const std::vector<int>& targets, std::size_t k) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("classify_metrics length mismatch: " +
                     std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  MetricsReport r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.support.assign(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    int p = predictions[i], t = targets[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= k ||
        static_cast<std::size_t>(t) >= k) {
      throw ValueError("label outside [0, " + std::to_string(k) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    ++r.support[static_cast<std::size_t>(t)];
    if (p == t) ++correct;
  }
  std::size_t total = predictions.size();
  r.accuracy =
      total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);

  auto prf = [&](std::size_t cls) {
    std::size_t tp = r.confusion[cls][cls];
    std::size_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == cls) continue;
      fp += r.confusion[o][cls];
      fn += r.confusion[cls][o];
    }
    double precision, recall;
    if (tp + fp == 0) {
      precision = 0.0;
      r.degenerate_precision = true;
    } else {
      precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
      recall = 0.0;
      r.degenerate_recall = true;
    } else {
      recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    double f1 = precision + recall == 0.0
                    ? 0.0
                    : 2.0 * precision * recall / (precision + recall);
    return std::array<double, 3>{precision, recall, f1};
  };

  if (k == 2) {
    auto [p, rec, f1] = prf(1);
    r.precision = p;
    r.recall = rec;
    r.f1 = f1;
    r.false_positives = r.confusion[0][1];
  } else {
    double ps = 0, rs = 0, fs = 0;
    for (std::size_t c = 0; c < k; ++c) {
      auto [p, rec, f1] = prf(c);
      ps += p;
      rs += rec;
      fs += f1;
    }
    double kk = static_cast<double>(k);
    r.precision = ps / kk;
    r.recall = rs / kk;
    r.f1 = fs / kk;
  }
  return r;
}

}  // namespace liquidbench
