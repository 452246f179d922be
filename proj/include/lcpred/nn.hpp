#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lcpred/linalg.hpp"
#include "lcpred/rng.hpp"

namespace lcpred {

class Rng;

// Per-sequence recurrent dropout mask (inverted scaling). The mask is drawn
// once and applied to the candidate cell update at every step of one
// sequence; inference runs without a mask.
struct DropoutMask {
  double keep_probability = 1.0;
  Vec mask;  // entries are 0 or 1/keep_probability
};

DropoutMask sample_dropout_mask(std::size_t hidden_size, double keep_probability,
                                std::uint64_t seed);

// One LSTM unit. Gates are computed as
//   i = sigmoid(Wx_i x + Wh_i h + Wc_i c + b_i)
//   f = sigmoid(Wx_f x + Wh_f h + Wc_f c + b_f)
//   c' = f (.) c + i (.) g,  g = tanh(Wx_g x + Wh_g h + b_g)
//   o = sigmoid(Wx_o x + Wh_o h + Wc_o c' + b_o)
//   h' = o (.) tanh(c')
// with full-matrix peephole weights Wc_* reading the context vector. With
// layer normalization enabled, the input block (Wx x) and the recurrent
// block (Wh h) are normalized separately per gate before summation,
// peephole terms and biases are added after normalization, and the copy of
// c' entering the output tanh is normalized; the context vector itself
// propagates unnormalized.
struct LstmCell {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  bool use_layer_norm = false;

  // gate order used throughout: i, f, g (candidate), o
  Mat wx_i, wx_f, wx_g, wx_o;  // hidden x input
  Mat wh_i, wh_f, wh_g, wh_o;  // hidden x hidden
  Mat wc_i, wc_f, wc_o;        // hidden x hidden peepholes
  Vec b_i, b_f, b_g, b_o;

  struct LnPair {
    Vec gain, bias;
  };
  // one pair per (gate, block): [i,f,g,o] x [input block, recurrent block]
  std::array<LnPair, 8> ln_blocks;
  LnPair ln_cell;  // cell state ahead of the output tanh

  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, bool layer_norm);

  std::size_t param_count() const;
};

// Learnable parameters live in LstmCell; gradients use the same layout.
LstmCell make_zero_like(const LstmCell& cell);
void zero_params(LstmCell& cell);

// Glorot-style scaled-uniform init for weight matrices; biases zero except
// the forget-gate bias, which starts at 1 to keep early memories alive.
void init_lstm_params(LstmCell& cell, Rng& rng);

// Flat views over every learnable tensor, in a fixed order shared between
// a cell and its gradient twin.
std::vector<std::span<double>> param_spans(LstmCell& cell);

struct LstmState {
  Vec h, c;
  explicit LstmState(std::size_t hidden = 0) : h(hidden, 0.0), c(hidden, 0.0) {}
};

// Everything the backward pass needs about one forward step.
struct LstmStepCache {
  Vec x, h_prev, c_prev;
  Vec gate_i, gate_f, gate_g, gate_o;  // post-activation
  Vec g_masked;                        // candidate after dropout
  Vec c_new;
  Vec tanh_c;  // tanh of the (possibly normalized) cell state
  // raw pre-normalization block values + statistics (layer norm only)
  std::array<Vec, 8> block_raw;
  std::array<double, 8> block_mu{}, block_inv_sigma{};
  double cell_mu = 0.0, cell_inv_sigma = 0.0;
};

struct LstmTrace {
  std::vector<LstmStepCache> steps;
  Vec mask;  // dropout mask in effect for the sequence, empty if none
};

// Single recurrence step. Output h/c are checked finite.
LstmState lstm_step(const LstmCell& cell, const Vec& x, const LstmState& prev,
                    const DropoutMask* mask = nullptr);

// Unrolls the cell over a sequence from a zero state. states_out[t] holds
// the state after consuming xs[t]; trace may be null at inference.
void lstm_forward_sequence(const LstmCell& cell, std::span<const Vec> xs,
                           const DropoutMask* mask,
                           std::vector<LstmState>& states_out, LstmTrace* trace);

// Reverse accumulation through the unrolled recurrence. output_grads[t] is
// dLoss/dh_t injected from downstream consumers of the step-t output.
// Parameter gradients accumulate into grads (layout of make_zero_like);
// input_grads, when non-null, receives dLoss/dx_t per step.
void lstm_backward(const LstmCell& cell, const LstmTrace& trace,
                   std::span<const Vec> output_grads, LstmCell& grads,
                   std::vector<Vec>* input_grads);

// Fully connected classification head.
struct LinearHead {
  Mat w;  // classes x hidden
  Vec b;
  LinearHead() = default;
  LinearHead(std::size_t classes, std::size_t hidden)
      : w(classes, hidden), b(classes, 0.0) {}
};

void init_linear_params(LinearHead& head, Rng& rng);

// Per-step softmax cross entropy against one label, each step scaled by
// weights[k]. Returns the summed loss and dLoss/dlogits per step.
struct WeightedXentResult {
  double loss = 0.0;
  std::vector<Vec> logit_grads;
};

WeightedXentResult weighted_xent_loss(std::span<const Vec> step_logits,
                                      std::size_t label,
                                      std::span<const double> weights);

// weights[k] = exp(-(num_steps-1-k) * dt_seconds): time-to-go weighting
// that leaves the final step at exactly 1 and decays earlier steps.
std::vector<double> make_exp_weights(std::size_t num_steps, double dt_seconds);

// Bias-corrected ADAM over a flat list of parameter blocks.
struct AdamState {
  std::size_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 1e-4;
  std::vector<double> m, v;

  AdamState() = default;
  AdamState(std::size_t total_params, double lr)
      : learning_rate(lr), m(total_params, 0.0), v(total_params, 0.0) {}
};

void adam_update(std::vector<std::span<double>>& params,
                 const std::vector<std::span<double>>& grads, AdamState& state);

// Scales grads so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<std::span<double>>& grads, double max_norm);

std::size_t total_span_size(const std::vector<std::span<double>>& spans);

}  // namespace lcpred
