#include "liquidbench/stress.hpp"

#include <algorithm>
#include <cmath>

#include "liquidbench/rng.hpp"

namespace liquidbench {

const char* drop_mode_name(DropMode mode) {
  return mode == DropMode::zero_fill ? "zero_fill" : "drop_merge_dt";
}

DropMode drop_mode_from_name(const std::string& name) {
  if (name == "zero_fill") return DropMode::zero_fill;
  if (name == "drop_merge_dt") return DropMode::drop_merge_dt;
  throw ValueError("unknown drop mode '" + name +
                   "' (expected zero_fill|drop_merge_dt)");
}

void StressPlan::validate() const {
  if (rates.empty()) throw ValueError("stress plan needs at least one rate");
  if (trials < 1) throw ValueError("stress plan needs trials >= 1");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] >= 0.0 && rates[i] < 1.0)) {
      throw ValueError("drop rate " + std::to_string(rates[i]) +
                       " outside [0, 1)");
    }
    if (i > 0 && !(rates[i] > rates[i - 1])) {
      throw ValueError("drop rates must be ascending and unique");
    }
  }
}

SequenceBatch apply_temporal_dropout(const SequenceBatch& batch, double rate,
                                     DropMode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ValueError("drop rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (rate == 0.0) return batch;

  std::size_t B = batch.batch(), T = batch.steps(), D = batch.dim();
  const auto& mask = batch.mask.values();
  const auto& delta = batch.delta_t.values();
  const auto& inputs = batch.inputs.values();

  // per-sequence drop decisions, resampled until at least one step survives
  std::vector<std::vector<char>> dropped(B);
  Rng root = Rng(seed).split("drop");
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::size_t> valid;
    for (std::size_t t = 0; t < T; ++t) {
      if (mask[b * T + t] != 0.0) valid.push_back(t);
    }
    dropped[b].assign(T, 0);
    if (valid.empty()) continue;
    Rng rng = root.split(b);
    while (true) {
      std::size_t survivors = 0;
      for (std::size_t t : valid) {
        bool d = rng.bernoulli(rate);
        dropped[b][t] = d ? 1 : 0;
        if (!d) ++survivors;
      }
      if (survivors > 0) break;
    }
  }

  if (mode == DropMode::zero_fill) {
    std::vector<double> new_inputs = inputs;
    std::vector<double> new_delta = delta;
    std::vector<double> new_mask = mask;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        if (!dropped[b][t]) continue;
        std::fill(new_inputs.begin() + static_cast<std::ptrdiff_t>((b * T + t) * D),
                  new_inputs.begin() + static_cast<std::ptrdiff_t>((b * T + t + 1) * D),
                  0.0);
        new_delta[b * T + t] = 1.0;
        new_mask[b * T + t] = 0.0;
      }
    }
    SequenceBatch out;
    out.inputs = Tensor({B, T, D}, std::move(new_inputs));
    out.delta_t = Tensor({B, T}, std::move(new_delta));
    out.mask = Tensor({B, T}, std::move(new_mask));
    out.class_targets = batch.class_targets;
    out.seq_targets = batch.seq_targets;
    return out;
  }

  // drop_merge_dt: remove steps, accumulate their dt onto the next survivor;
  // trailing drops fold into the last survivor so total time is conserved
  struct Row {
    std::vector<std::size_t> keep;   // original step indices
    std::vector<double> dt;
  };
  std::vector<Row> rows(B);
  std::size_t new_T = 1;
  for (std::size_t b = 0; b < B; ++b) {
    double carry = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (mask[b * T + t] == 0.0) continue;
      if (dropped[b][t]) {
        carry += delta[b * T + t];
        continue;
      }
      rows[b].keep.push_back(t);
      rows[b].dt.push_back(delta[b * T + t] + carry);
      carry = 0.0;
    }
    if (carry > 0.0 && !rows[b].dt.empty()) rows[b].dt.back() += carry;
    new_T = std::max(new_T, rows[b].keep.size());
  }

  std::vector<double> new_inputs(B * new_T * D, 0.0);
  std::vector<double> new_delta(B * new_T, 1.0);
  std::vector<double> new_mask(B * new_T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < rows[b].keep.size(); ++i) {
      std::size_t t = rows[b].keep[i];
      std::copy(inputs.begin() + static_cast<std::ptrdiff_t>((b * T + t) * D),
                inputs.begin() + static_cast<std::ptrdiff_t>((b * T + t + 1) * D),
                new_inputs.begin() + static_cast<std::ptrdiff_t>((b * new_T + i) * D));
      new_delta[b * new_T + i] = rows[b].dt[i];
      new_mask[b * new_T + i] = 1.0;
    }
  }
  SequenceBatch out;
  out.inputs = Tensor({B, new_T, D}, std::move(new_inputs));
  out.delta_t = Tensor({B, new_T}, std::move(new_delta));
  out.mask = Tensor({B, new_T}, std::move(new_mask));
  out.class_targets = batch.class_targets;
  out.seq_targets = batch.seq_targets;
  return out;
}

namespace {

struct EvalAccum {
  std::vector<int> predictions;
  std::vector<int> targets;
  std::vector<double> cers;  // ctc only
};

void eval_batch_into(Model& model, const SequenceBatch& batch, EvalAccum& acc) {
  Tape tape;
  if (model.config().head == HeadKind::ctc_vocab) {
    ModelOutput out = model.forward_ctc(tape, batch);
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
      const LabelSeq& ref = batch.seq_targets[b];
      // exact-match as a binary outcome keeps the confusion invariants
      acc.targets.push_back(1);
      acc.predictions.push_back(pred.tokens == ref.tokens ? 1 : 0);
      if (!ref.tokens.empty()) acc.cers.push_back(cer(pred, ref));
    }
  } else {
    ModelOutput out = model.forward_classify(tape, batch);
    std::vector<int> preds = predict_classes(model.config(), out.logits);
    acc.predictions.insert(acc.predictions.end(), preds.begin(), preds.end());
    acc.targets.insert(acc.targets.end(), batch.class_targets.begin(),
                       batch.class_targets.end());
  }
}

MetricsReport finish_eval(const Model& model, const EvalAccum& acc,
                          std::size_t num_classes) {
  std::size_t k =
      model.config().head == HeadKind::ctc_vocab || model.config().head == HeadKind::binary_logit
          ? 2
          : num_classes;
  MetricsReport r = classify_metrics(acc.predictions, acc.targets, k);
  if (!acc.cers.empty()) {
    double s = 0;
    for (double c : acc.cers) s += c;
    r.cer = s / static_cast<double>(acc.cers.size());
  }
  return r;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr_of(std::vector<double> v) {
  if (v.size() < 2) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  std::vector<double> lower(v.begin(), v.begin() + n / 2);
  std::vector<double> upper(v.begin() + (n + 1) / 2, v.end());
  return median_of(upper) - median_of(lower);
}

}  // namespace

MetricsReport evaluate_model(Model& model, const Dataset& data,
                             std::size_t eval_batch) {
  if (data.samples.empty()) throw ValueError("evaluate_model on an empty dataset");
  EvalAccum acc;
  for (std::size_t start = 0; start < data.samples.size(); start += eval_batch) {
    std::size_t end = std::min(start + eval_batch, data.samples.size());
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    eval_batch_into(model, make_batch(data, idx), acc);
  }
  return finish_eval(model, acc, data.num_classes);
}

StressResult run_stress_sweep(Model& model, const Dataset& data,
                              const StressPlan& plan, std::size_t eval_batch) {
  plan.validate();
  if (data.samples.empty()) throw ValueError("stress sweep on an empty dataset");

  StressResult result;
  Rng root = Rng(plan.base_seed).split("stress");

  for (std::size_t ri = 0; ri < plan.rates.size(); ++ri) {
    double rate = plan.rates[ri];
    std::vector<double> accs;
    if (rate == 0.0) {
      // identical code path as the plain evaluation, bit for bit
      StressCell cell;
      cell.rate = 0.0;
      cell.trial = 0;
      cell.report = evaluate_model(model, data, eval_batch);
      accs.push_back(cell.report.accuracy);
      result.cells.push_back(std::move(cell));
    } else {
      for (std::size_t trial = 0; trial < plan.trials; ++trial) {
        Rng trial_rng = root.split(ri).split(trial);
        EvalAccum acc;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < data.samples.size();
             start += eval_batch) {
          std::size_t end = std::min(start + eval_batch, data.samples.size());
          std::vector<std::size_t> idx;
          for (std::size_t i = start; i < end; ++i) idx.push_back(i);
          SequenceBatch clean = make_batch(data, idx);
          SequenceBatch stressed = apply_temporal_dropout(
              clean, rate, plan.mode, trial_rng.split(batch_index).key());
          eval_batch_into(model, stressed, acc);
          ++batch_index;
        }
        StressCell cell;
        cell.rate = rate;
        cell.trial = trial;
        cell.report = finish_eval(model, acc, data.num_classes);
        accs.push_back(cell.report.accuracy);
        result.cells.push_back(std::move(cell));
      }
    }
    StressAggregate agg;
    agg.rate = rate;
    agg.median_accuracy = median_of(accs);
    agg.iqr_accuracy = iqr_of(accs);
    result.aggregate.push_back(agg);
  }

  for (std::size_t i = 1; i < result.aggregate.size(); ++i) {
    if (result.aggregate[i].median_accuracy >
        result.aggregate[i - 1].median_accuracy + 1e-12) {
      result.warnings.push_back(
          "median accuracy increased from rate " +
          std::to_string(result.aggregate[i - 1].rate) + " to rate " +
          std::to_string(result.aggregate[i].rate));
    }
  }
  return result;
}

}  // namespace liquidbench
