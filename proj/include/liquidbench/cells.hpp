#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "liquidbench/rng.hpp"
#include "liquidbench/tensor.hpp"

namespace liquidbench {

enum class CellKind { ltc, cfc, lstm };

const char* cell_kind_name(CellKind kind);
CellKind cell_kind_from_name(const std::string& name);

// Learnable state of one recurrent core. Weight layouts per kind:
//
//   ltc:  w_gate [(D+H) x H], b_gate [H]   -> drive f = sigmoid(.)
//         w_tau  [(D+H) x H], b_tau  [H]   -> tau = floor + softplus(.)
//   cfc:  w_gate [(D+H) x H], b_gate [H]   -> gate f = sigmoid(.)
//         a_raw [H]                         -> leak A = floor + softplus(a_raw)
//         target_state [H]                  -> attractor L
//   lstm: w_input [D x 4H], w_hidden [H x 4H], bias [4H], gate order i,f,g,o
//
// Matrices and biases init uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)];
// a_raw inits to zero, target_state uniform in [-1, 1], and the LSTM
// forget-gate bias block is offset by +1.
struct CellParams {
  CellKind kind = CellKind::cfc;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  double leakage_floor = 0.1;  // lower bound on tau (ltc) and on A (cfc)
  std::size_t ltc_unfolds = 6;

  std::map<std::string, Tensor> weights;

  static CellParams init(CellKind kind, std::size_t input_dim,
                         std::size_t hidden_dim, Rng rng,
                         double leakage_floor = 0.1);

  // Closed-form parameter count; always equals the sum of weight sizes.
  //   lstm: 4 (D H + H^2 + H)
  //   cfc:  (D + H) H + 3 H
  //   ltc:  2 ((D + H) H + H)
  std::size_t param_count() const;
};

struct CellState {
  Tensor hidden;                      // [B, H]
  std::optional<Tensor> cell_memory;  // LSTM only

  static CellState zeros(CellKind kind, std::size_t batch, std::size_t hidden);
};

struct StepInput {
  Tensor x;                     // [B, D], typically a constant slice
  std::vector<double> delta_t;  // [B], strictly positive
};

// dh/dt of the liquid ODE: (-h + f(x,h)) / tau(x,h) with tau > 0 by
// construction (floor + softplus).
Tensor ltc_derivative(Tape& tape, const CellParams& params, const Tensor& x,
                      const Tensor& h);

// Advances h by delta_t via `unfolds` explicit-Euler substeps.
CellState ltc_step(Tape& tape, const CellParams& params, const CellState& state,
                   const StepInput& step, std::size_t unfolds);

// Exact per-step solution of dh/dt = -(A + f) h + f L with the gate f
// frozen at (x, h_prev) for the duration of the step:
//   h_inf = f L / (A + f);  h' = h_inf + (h - h_inf) exp(-(A + f) dt)
CellState cfc_step(Tape& tape, const CellParams& params, const CellState& state,
                   const StepInput& step);

// Standard LSTM update; delta_t is ignored by construction.
CellState lstm_step(Tape& tape, const CellParams& params, const CellState& state,
                    const StepInput& step);

CellState cell_step(Tape& tape, const CellParams& params, const CellState& state,
                    const StepInput& step);

// How a forward pass treats invalid (mask == 0) steps:
//   hold_state: state is carried through, the step's delta_t is discarded
//   merge_dt:   state is carried through and the step's delta_t accumulates
//               onto the next valid step (continuous-time semantics)
enum class MaskMode { hold_state, merge_dt };

// Runs the core over encoded per-step inputs. mask/delta_t are row-major
// [B x T] flat. Returns the state after every step (length T).
std::vector<CellState> run_sequence(Tape& tape, const CellParams& params,
                                    const std::vector<Tensor>& step_inputs,
                                    const std::vector<double>& delta_t,
                                    const std::vector<double>& mask,
                                    const CellState& initial, MaskMode mode);

// Convenience over a raw padded batch: feeds inputs[b,t,:] straight into
// the cell and stacks every intermediate hidden state into [B x T x H].
struct SequenceBatchView {
  const Tensor& inputs;   // [B x T x D]
  const Tensor& delta_t;  // [B x T]
  const Tensor& mask;     // [B x T]
};
Tensor sequence_forward(Tape& tape, const CellParams& params,
                        const SequenceBatchView& batch, const CellState& initial,
                        MaskMode mode = MaskMode::hold_state);

}  // namespace liquidbench
