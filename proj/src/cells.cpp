#include "liquidbench/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace liquidbench {

namespace {

Tensor uniform_tensor(Shape shape, Rng rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  Tensor t(std::move(shape), std::move(v));
  t.grad();  // parameters allocate their grad buffer before any copy is made
  return t;
}

Tensor linear_init(Shape shape, Rng rng, std::size_t fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), rng, -bound, bound);
}

void check_delta_t(const StepInput& step, std::size_t batch) {
  if (step.delta_t.size() != batch) {
    throw ShapeError("delta_t has " + std::to_string(step.delta_t.size()) +
                     " rows for a batch of " + std::to_string(batch));
  }
  for (double dt : step.delta_t) {
    if (!(dt > 0.0)) {
      throw ValueError("delta_t must be strictly positive, got " +
                       std::to_string(dt));
    }
  }
}

// sigmoid(w_gate . [x,h] + b_gate), shared by ltc and cfc.
Tensor gate_forward(Tape& tape, const CellParams& p, const Tensor& x,
                    const Tensor& h) {
  Tensor xh = concat_cols(tape, x, h);
  Tensor z = add(tape, matmul(tape, xh, p.weights.at("w_gate")),
                 p.weights.at("b_gate"));
  return sigmoid(tape, z);
}

}  // namespace

const char* cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::ltc: return "ltc";
    case CellKind::cfc: return "cfc";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

CellKind cell_kind_from_name(const std::string& name) {
  if (name == "ltc") return CellKind::ltc;
  if (name == "cfc") return CellKind::cfc;
  if (name == "lstm") return CellKind::lstm;
  throw ValueError("unknown cell kind '" + name + "' (expected ltc|cfc|lstm)");
}

CellParams CellParams::init(CellKind kind, std::size_t input_dim,
                            std::size_t hidden_dim, Rng rng,
                            double leakage_floor) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw ValueError("cell dimensions must be positive");
  }
  if (!(leakage_floor > 0.0)) {
    throw ValueError("leakage_floor must be positive");
  }
  CellParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.leakage_floor = leakage_floor;
  std::size_t d = input_dim, h = hidden_dim;
  auto stream = [&](const char* name) { return rng.split(name); };
  switch (kind) {
    case CellKind::ltc:
      p.weights["w_gate"] = linear_init({d + h, h}, stream("w_gate"), d + h);
      p.weights["b_gate"] = linear_init({h}, stream("b_gate"), d + h);
      p.weights["w_tau"] = linear_init({d + h, h}, stream("w_tau"), d + h);
      p.weights["b_tau"] = linear_init({h}, stream("b_tau"), d + h);
      break;
    case CellKind::cfc: {
      p.weights["w_gate"] = linear_init({d + h, h}, stream("w_gate"), d + h);
      // negative gate bias and a_raw keep the initial decay A + f well
      // below 1/dt, the cfc analog of the positive lstm forget bias: a
      // cell that forgets everything within one step has no usable
      // gradient through time
      Tensor b_gate = linear_init({h}, stream("b_gate"), d + h);
      for (double& v : b_gate.mutable_values()) v -= 2.0;
      p.weights["b_gate"] = b_gate;
      // spread of initial leaks = spectrum of time constants per unit
      Tensor a = uniform_tensor({h}, stream("a_raw"), -4.5, -1.0);
      p.weights["a_raw"] = a;
      p.weights["target_state"] = uniform_tensor({h}, stream("target_state"),
                                                 -1.0, 1.0);
      break;
    }
    case CellKind::lstm: {
      p.weights["w_input"] = linear_init({d, 4 * h}, stream("w_input"), d);
      p.weights["w_hidden"] = linear_init({h, 4 * h}, stream("w_hidden"), h);
      Tensor bias = linear_init({4 * h}, stream("bias"), h);
      // forget gate block sits at [h, 2h)
      for (std::size_t j = h; j < 2 * h; ++j) bias.mutable_values()[j] += 1.0;
      p.weights["bias"] = bias;
      break;
    }
  }
  return p;
}

std::size_t CellParams::param_count() const {
  std::size_t d = input_dim, h = hidden_dim;
  switch (kind) {
    case CellKind::ltc: return 2 * ((d + h) * h + h);
    case CellKind::cfc: return (d + h) * h + 3 * h;
    case CellKind::lstm: return 4 * (d * h + h * h + h);
  }
  return 0;
}

CellState CellState::zeros(CellKind kind, std::size_t batch, std::size_t hidden) {
  CellState s;
  s.hidden = Tensor::zeros({batch, hidden});
  if (kind == CellKind::lstm) s.cell_memory = Tensor::zeros({batch, hidden});
  return s;
}

Tensor ltc_derivative(Tape& tape, const CellParams& params, const Tensor& x,
                      const Tensor& h) {
  Tensor f = gate_forward(tape, params, x, h);
  Tensor xh = concat_cols(tape, x, h);
  Tensor tau_raw = add(tape, matmul(tape, xh, params.weights.at("w_tau")),
                       params.weights.at("b_tau"));
  Tensor tau = add(tape, softplus(tape, tau_raw),
                   Tensor::scalar(params.leakage_floor));
  return div(tape, sub(tape, f, h), tau);
}

CellState ltc_step(Tape& tape, const CellParams& params, const CellState& state,
                   const StepInput& step, std::size_t unfolds) {
  if (params.kind != CellKind::ltc) throw ValueError("ltc_step on non-ltc params");
  if (unfolds < 1) throw ValueError("ltc_step needs unfolds >= 1");
  std::size_t batch = state.hidden.shape()[0];
  check_delta_t(step, batch);

  std::vector<double> sub_dt(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    sub_dt[b] = step.delta_t[b] / static_cast<double>(unfolds);
  }
  Tensor dt_tile = tile_rows(sub_dt, params.hidden_dim);

  Tensor h = state.hidden;
  for (std::size_t k = 0; k < unfolds; ++k) {
    Tensor dh = ltc_derivative(tape, params, step.x, h);
    h = add(tape, h, mul(tape, dh, dt_tile));
  }
  CellState out;
  out.hidden = h;
  return out;
}

CellState cfc_step(Tape& tape, const CellParams& params, const CellState& state,
                   const StepInput& step) {
  if (params.kind != CellKind::cfc) throw ValueError("cfc_step on non-cfc params");
  std::size_t batch = state.hidden.shape()[0];
  check_delta_t(step, batch);

  Tensor f = gate_forward(tape, params, step.x, state.hidden);
  Tensor a = add(tape, softplus(tape, params.weights.at("a_raw")),
                 Tensor::scalar(params.leakage_floor));
  Tensor decay = add(tape, f, a);                                    // A + f
  Tensor h_inf = div(tape, mul(tape, f, params.weights.at("target_state")),
                     decay);                                         // f L/(A+f)
  Tensor dt_tile = tile_rows(step.delta_t, params.hidden_dim);
  Tensor damp = exp(tape, neg(tape, mul(tape, decay, dt_tile)));
  Tensor h = add(tape, h_inf,
                 mul(tape, sub(tape, state.hidden, h_inf), damp));
  CellState out;
  out.hidden = h;
  return out;
}

CellState lstm_step(Tape& tape, const CellParams& params, const CellState& state,
                    const StepInput& step) {
  if (params.kind != CellKind::lstm) throw ValueError("lstm_step on non-lstm params");
  if (!state.cell_memory) {
    throw ValueError("lstm_step requires cell_memory in the state");
  }
  std::size_t batch = state.hidden.shape()[0];
  check_delta_t(step, batch);
  std::size_t h = params.hidden_dim;

  Tensor z = add(tape,
                 add(tape, matmul(tape, step.x, params.weights.at("w_input")),
                     matmul(tape, state.hidden, params.weights.at("w_hidden"))),
                 params.weights.at("bias"));
  Tensor gi = sigmoid(tape, slice_cols(tape, z, 0, h));
  Tensor gf = sigmoid(tape, slice_cols(tape, z, h, h));
  Tensor gg = tanh(tape, slice_cols(tape, z, 2 * h, h));
  Tensor go = sigmoid(tape, slice_cols(tape, z, 3 * h, h));

  Tensor c = add(tape, mul(tape, gf, *state.cell_memory), mul(tape, gi, gg));
  CellState out;
  out.cell_memory = c;
  out.hidden = mul(tape, go, tanh(tape, c));
  return out;
}

CellState cell_step(Tape& tape, const CellParams& params, const CellState& state,
                    const StepInput& step) {
  switch (params.kind) {
    case CellKind::ltc: return ltc_step(tape, params, state, step, params.ltc_unfolds);
    case CellKind::cfc: return cfc_step(tape, params, state, step);
    case CellKind::lstm: return lstm_step(tape, params, state, step);
  }
  throw ValueError("unknown cell kind");
}

std::vector<CellState> run_sequence(Tape& tape, const CellParams& params,
                                    const std::vector<Tensor>& step_inputs,
                                    const std::vector<double>& delta_t,
                                    const std::vector<double>& mask,
                                    const CellState& initial, MaskMode mode) {
  std::size_t T = step_inputs.size();
  if (T == 0) throw ValueError("run_sequence on an empty sequence (T = 0)");
  std::size_t batch = step_inputs[0].shape()[0];
  if (delta_t.size() != batch * T || mask.size() != batch * T) {
    throw ShapeError("delta_t/mask must be [B x T] flat");
  }

  std::vector<double> carry(batch, 0.0);  // accumulated dt from masked steps
  std::vector<CellState> trace;
  trace.reserve(T);
  CellState state = initial;

  for (std::size_t t = 0; t < T; ++t) {
    StepInput si;
    si.x = step_inputs[t];
    si.delta_t.resize(batch);
    std::vector<double> m(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      double valid = mask[b * T + t];
      m[b] = valid;
      double dt = delta_t[b * T + t];
      if (mode == MaskMode::merge_dt) {
        if (valid != 0.0) {
          si.delta_t[b] = dt + carry[b];
          carry[b] = 0.0;
        } else {
          carry[b] += dt;
          si.delta_t[b] = 1.0;  // placeholder; the update is discarded below
        }
      } else {
        si.delta_t[b] = valid != 0.0 ? dt : 1.0;
      }
    }

    CellState next = cell_step(tape, params, state, si);
    Tensor mt = tile_rows(m, params.hidden_dim);
    Tensor keep = tile_rows([&] {
      std::vector<double> inv(batch);
      for (std::size_t b = 0; b < batch; ++b) inv[b] = 1.0 - m[b];
      return inv;
    }(), params.hidden_dim);

    CellState mixed;
    mixed.hidden = add(tape, mul(tape, next.hidden, mt),
                       mul(tape, state.hidden, keep));
    if (state.cell_memory) {
      mixed.cell_memory = add(tape, mul(tape, *next.cell_memory, mt),
                              mul(tape, *state.cell_memory, keep));
    }
    state = mixed;
    trace.push_back(state);
  }
  return trace;
}

Tensor sequence_forward(Tape& tape, const CellParams& params,
                        const SequenceBatchView& batch, const CellState& initial,
                        MaskMode mode) {
  if (batch.inputs.rank() != 3) {
    throw ShapeError("sequence_forward expects [B x T x D] inputs, got " +
                     shape_str(batch.inputs.shape()));
  }
  std::size_t B = batch.inputs.shape()[0];
  std::size_t T = batch.inputs.shape()[1];
  std::size_t D = batch.inputs.shape()[2];
  if (T == 0) throw ValueError("sequence_forward on an empty sequence (T = 0)");
  const auto& flat = batch.inputs.values();

  std::vector<Tensor> steps;
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> sv(B * D);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>((b * T + t) * D),
                flat.begin() + static_cast<std::ptrdiff_t>((b * T + t + 1) * D),
                sv.begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    steps.emplace_back(Shape{B, D}, std::move(sv));
  }
  std::vector<CellState> trace =
      run_sequence(tape, params, steps, batch.delta_t.values(),
                   batch.mask.values(), initial, mode);
  std::vector<Tensor> hidden;
  hidden.reserve(T);
  for (const CellState& s : trace) hidden.push_back(s.hidden);
  return stack_time(tape, hidden);
}

}  // namespace liquidbench
