#include "lcpred/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lcpred {

namespace {

constexpr double kLnEps = 1e-5;

// block index: gate * 2 for the input block, gate * 2 + 1 for the recurrent
// block, gates ordered i, f, g, o
enum Gate { kI = 0, kF = 1, kG = 2, kO = 3 };

Vec ln_backward(const Vec& raw, double mu, double inv_sigma, const Vec& gain,
                const Vec& dy, Vec& dgain, Vec& dbias) {
  const std::size_t n = raw.size();
  Vec du(n);
  double mean_a = 0.0, mean_ax = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double xh = (raw[j] - mu) * inv_sigma;
    const double a = dy[j] * gain[j];
    mean_a += a;
    mean_ax += a * xh;
    dgain[j] += dy[j] * xh;
    dbias[j] += dy[j];
    du[j] = a;  // staged, centered below
  }
  mean_a /= static_cast<double>(n);
  mean_ax /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double xh = (raw[j] - mu) * inv_sigma;
    du[j] = inv_sigma * (du[j] - mean_a - xh * mean_ax);
  }
  return du;
}

void glorot_fill(Mat& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& w : m.a) w = rng.uniform(-limit, limit);
}

LstmState step_impl(const LstmCell& cell, const Vec& x, const LstmState& prev,
                    const DropoutMask* mask, LstmStepCache* cache) {
  const std::size_t H = cell.hidden_size;
  if (x.size() != cell.input_size) throw std::invalid_argument("lstm_step: input size");
  if (prev.h.size() != H || prev.c.size() != H)
    throw std::invalid_argument("lstm_step: state size");
  if (mask && mask->mask.size() != H)
    throw std::invalid_argument("lstm_step: mask size");

  const Mat* wx[4] = {&cell.wx_i, &cell.wx_f, &cell.wx_g, &cell.wx_o};
  const Mat* wh[4] = {&cell.wh_i, &cell.wh_f, &cell.wh_g, &cell.wh_o};
  const Vec* bias[4] = {&cell.b_i, &cell.b_f, &cell.b_g, &cell.b_o};

  Vec z[4];
  for (int gate = 0; gate < 4; ++gate) {
    Vec raw_x = matvec(*wx[gate], x);
    Vec raw_h = matvec(*wh[gate], prev.h);
    Vec val_x, val_h;
    if (cell.use_layer_norm) {
      const std::size_t bx = static_cast<std::size_t>(gate) * 2;
      const std::size_t bh = bx + 1;
      double mu_x, is_x, mu_h, is_h;
      val_x = layer_norm(raw_x, cell.ln_blocks[bx].gain, cell.ln_blocks[bx].bias,
                         kLnEps, &mu_x, &is_x);
      val_h = layer_norm(raw_h, cell.ln_blocks[bh].gain, cell.ln_blocks[bh].bias,
                         kLnEps, &mu_h, &is_h);
      if (cache) {
        cache->block_raw[bx] = std::move(raw_x);
        cache->block_raw[bh] = std::move(raw_h);
        cache->block_mu[bx] = mu_x;
        cache->block_inv_sigma[bx] = is_x;
        cache->block_mu[bh] = mu_h;
        cache->block_inv_sigma[bh] = is_h;
      }
    } else {
      val_x = std::move(raw_x);
      val_h = std::move(raw_h);
    }
    Vec& zg = z[gate];
    zg = std::move(val_x);
    axpy(1.0, val_h, zg);
    axpy(1.0, *bias[gate], zg);
  }
  matvec_add(cell.wc_i, prev.c, z[kI]);
  matvec_add(cell.wc_f, prev.c, z[kF]);

  Vec gate_i = sigmoid(z[kI]);
  Vec gate_f = sigmoid(z[kF]);
  Vec gate_g = tanh_vec(z[kG]);
  Vec g_masked = gate_g;
  if (mask)
    for (std::size_t j = 0; j < H; ++j) g_masked[j] *= mask->mask[j];

  LstmState out(H);
  for (std::size_t j = 0; j < H; ++j)
    out.c[j] = gate_f[j] * prev.c[j] + gate_i[j] * g_masked[j];

  matvec_add(cell.wc_o, out.c, z[kO]);
  Vec gate_o = sigmoid(z[kO]);

  Vec tanh_c;
  double cell_mu = 0.0, cell_is = 0.0;
  if (cell.use_layer_norm) {
    Vec c_ln = layer_norm(out.c, cell.ln_cell.gain, cell.ln_cell.bias, kLnEps,
                          &cell_mu, &cell_is);
    tanh_c = tanh_vec(c_ln);
  } else {
    tanh_c = tanh_vec(out.c);
  }
  for (std::size_t j = 0; j < H; ++j) out.h[j] = gate_o[j] * tanh_c[j];

  if (!all_finite(out.h) || !all_finite(out.c))
    throw std::runtime_error("lstm_step: non-finite state");

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->gate_i = std::move(gate_i);
    cache->gate_f = std::move(gate_f);
    cache->gate_g = std::move(gate_g);
    cache->gate_o = std::move(gate_o);
    cache->g_masked = std::move(g_masked);
    cache->c_new = out.c;
    cache->tanh_c = std::move(tanh_c);
    cache->cell_mu = cell_mu;
    cache->cell_inv_sigma = cell_is;
  }
  return out;
}

}  // namespace

DropoutMask sample_dropout_mask(std::size_t hidden_size, double keep_probability,
                                std::uint64_t seed) {
  if (!(keep_probability > 0.0) || keep_probability > 1.0)
    throw std::invalid_argument("sample_dropout_mask: keep probability");
  DropoutMask m;
  m.keep_probability = keep_probability;
  m.mask.resize(hidden_size);
  Rng rng(seed);
  const double scale = 1.0 / keep_probability;
  for (std::size_t j = 0; j < hidden_size; ++j)
    m.mask[j] = rng.bernoulli(keep_probability) ? scale : 0.0;
  return m;
}

LstmCell::LstmCell(std::size_t input, std::size_t hidden, bool layer_norm)
    : input_size(input),
      hidden_size(hidden),
      use_layer_norm(layer_norm),
      wx_i(hidden, input),
      wx_f(hidden, input),
      wx_g(hidden, input),
      wx_o(hidden, input),
      wh_i(hidden, hidden),
      wh_f(hidden, hidden),
      wh_g(hidden, hidden),
      wh_o(hidden, hidden),
      wc_i(hidden, hidden),
      wc_f(hidden, hidden),
      wc_o(hidden, hidden),
      b_i(hidden, 0.0),
      b_f(hidden, 0.0),
      b_g(hidden, 0.0),
      b_o(hidden, 0.0) {
  if (layer_norm) {
    for (auto& blk : ln_blocks) {
      blk.gain.assign(hidden, 1.0);
      blk.bias.assign(hidden, 0.0);
    }
    ln_cell.gain.assign(hidden, 1.0);
    ln_cell.bias.assign(hidden, 0.0);
  }
}

std::size_t LstmCell::param_count() const {
  std::size_t n = 4 * hidden_size * input_size + 4 * hidden_size * hidden_size +
                  3 * hidden_size * hidden_size + 4 * hidden_size;
  if (use_layer_norm) n += 9 * 2 * hidden_size;
  return n;
}

LstmCell make_zero_like(const LstmCell& cell) {
  LstmCell z(cell.input_size, cell.hidden_size, cell.use_layer_norm);
  if (cell.use_layer_norm) {
    for (auto& blk : z.ln_blocks) std::fill(blk.gain.begin(), blk.gain.end(), 0.0);
    std::fill(z.ln_cell.gain.begin(), z.ln_cell.gain.end(), 0.0);
  }
  return z;
}

void zero_params(LstmCell& cell) {
  for (auto s : param_spans(cell)) std::fill(s.begin(), s.end(), 0.0);
}

void init_lstm_params(LstmCell& cell, Rng& rng) {
  const std::size_t in = cell.input_size, hid = cell.hidden_size;
  glorot_fill(cell.wx_i, in, hid, rng);
  glorot_fill(cell.wx_f, in, hid, rng);
  glorot_fill(cell.wx_g, in, hid, rng);
  glorot_fill(cell.wx_o, in, hid, rng);
  glorot_fill(cell.wh_i, hid, hid, rng);
  glorot_fill(cell.wh_f, hid, hid, rng);
  glorot_fill(cell.wh_g, hid, hid, rng);
  glorot_fill(cell.wh_o, hid, hid, rng);
  glorot_fill(cell.wc_i, hid, hid, rng);
  glorot_fill(cell.wc_f, hid, hid, rng);
  glorot_fill(cell.wc_o, hid, hid, rng);
  std::fill(cell.b_i.begin(), cell.b_i.end(), 0.0);
  std::fill(cell.b_f.begin(), cell.b_f.end(), 1.0);
  std::fill(cell.b_g.begin(), cell.b_g.end(), 0.0);
  std::fill(cell.b_o.begin(), cell.b_o.end(), 0.0);
  if (cell.use_layer_norm) {
    for (auto& blk : cell.ln_blocks) {
      std::fill(blk.gain.begin(), blk.gain.end(), 1.0);
      std::fill(blk.bias.begin(), blk.bias.end(), 0.0);
    }
    std::fill(cell.ln_cell.gain.begin(), cell.ln_cell.gain.end(), 1.0);
    std::fill(cell.ln_cell.bias.begin(), cell.ln_cell.bias.end(), 0.0);
  }
}

std::vector<std::span<double>> param_spans(LstmCell& cell) {
  std::vector<std::span<double>> s;
  s.reserve(cell.use_layer_norm ? 33 : 15);
  for (Mat* m : {&cell.wx_i, &cell.wx_f, &cell.wx_g, &cell.wx_o, &cell.wh_i,
                 &cell.wh_f, &cell.wh_g, &cell.wh_o, &cell.wc_i, &cell.wc_f,
                 &cell.wc_o})
    s.push_back(m->a);
  for (Vec* v : {&cell.b_i, &cell.b_f, &cell.b_g, &cell.b_o}) s.push_back(*v);
  if (cell.use_layer_norm) {
    for (auto& blk : cell.ln_blocks) {
      s.push_back(blk.gain);
      s.push_back(blk.bias);
    }
    s.push_back(cell.ln_cell.gain);
    s.push_back(cell.ln_cell.bias);
  }
  return s;
}

LstmState lstm_step(const LstmCell& cell, const Vec& x, const LstmState& prev,
                    const DropoutMask* mask) {
  return step_impl(cell, x, prev, mask, nullptr);
}

void lstm_forward_sequence(const LstmCell& cell, std::span<const Vec> xs,
                           const DropoutMask* mask,
                           std::vector<LstmState>& states_out, LstmTrace* trace) {
  const std::size_t T = xs.size();
  states_out.clear();
  states_out.reserve(T);
  if (trace) {
    trace->steps.assign(T, LstmStepCache{});
    trace->mask = mask ? mask->mask : Vec{};
  }
  LstmState state(cell.hidden_size);
  for (std::size_t t = 0; t < T; ++t) {
    state = step_impl(cell, xs[t], state, mask, trace ? &trace->steps[t] : nullptr);
    states_out.push_back(state);
  }
}

void lstm_backward(const LstmCell& cell, const LstmTrace& trace,
                   std::span<const Vec> output_grads, LstmCell& grads,
                   std::vector<Vec>* input_grads) {
  const std::size_t T = trace.steps.size();
  const std::size_t H = cell.hidden_size;
  if (output_grads.size() != T)
    throw std::invalid_argument("lstm_backward: gradient count");
  if (grads.input_size != cell.input_size || grads.hidden_size != H ||
      grads.use_layer_norm != cell.use_layer_norm)
    throw std::invalid_argument("lstm_backward: gradient shape");
  if (input_grads) input_grads->assign(T, Vec(cell.input_size, 0.0));

  const Mat* wx[4] = {&cell.wx_i, &cell.wx_f, &cell.wx_g, &cell.wx_o};
  const Mat* wh[4] = {&cell.wh_i, &cell.wh_f, &cell.wh_g, &cell.wh_o};
  Mat* gwx[4] = {&grads.wx_i, &grads.wx_f, &grads.wx_g, &grads.wx_o};
  Mat* gwh[4] = {&grads.wh_i, &grads.wh_f, &grads.wh_g, &grads.wh_o};
  Vec* gb[4] = {&grads.b_i, &grads.b_f, &grads.b_g, &grads.b_o};

  Vec dh_carry(H, 0.0), dc_carry(H, 0.0);
  const bool has_mask = !trace.mask.empty();

  for (std::size_t ti = T; ti-- > 0;) {
    const LstmStepCache& st = trace.steps[ti];
    Vec dh = dh_carry;
    axpy(1.0, output_grads[ti], dh);

    // output gate, then the cell path feeding tanh
    Vec dz_o(H), dc_total(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double o = st.gate_o[j];
      dz_o[j] = dh[j] * st.tanh_c[j] * o * (1.0 - o);
    }
    {
      Vec dtanh_in(H);
      for (std::size_t j = 0; j < H; ++j)
        dtanh_in[j] = dh[j] * st.gate_o[j] * (1.0 - st.tanh_c[j] * st.tanh_c[j]);
      if (cell.use_layer_norm) {
        dc_total = ln_backward(st.c_new, st.cell_mu, st.cell_inv_sigma,
                               cell.ln_cell.gain, dtanh_in, grads.ln_cell.gain,
                               grads.ln_cell.bias);
      } else {
        dc_total = std::move(dtanh_in);
      }
    }
    axpy(1.0, dc_carry, dc_total);
    matvec_transposed_add(cell.wc_o, dz_o, dc_total);

    Vec dz_i(H), dz_f(H), dz_g(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double i = st.gate_i[j], f = st.gate_f[j], g = st.gate_g[j];
      const double dgm = dc_total[j] * i;
      const double dg = has_mask ? dgm * trace.mask[j] : dgm;
      dz_g[j] = dg * (1.0 - g * g);
      dz_i[j] = dc_total[j] * st.g_masked[j] * i * (1.0 - i);
      dz_f[j] = dc_total[j] * st.c_prev[j] * f * (1.0 - f);
    }

    outer_add(grads.wc_i, dz_i, st.c_prev);
    outer_add(grads.wc_f, dz_f, st.c_prev);
    outer_add(grads.wc_o, dz_o, st.c_new);

    Vec dc_prev(H);
    for (std::size_t j = 0; j < H; ++j) dc_prev[j] = dc_total[j] * st.gate_f[j];
    matvec_transposed_add(cell.wc_i, dz_i, dc_prev);
    matvec_transposed_add(cell.wc_f, dz_f, dc_prev);

    Vec dh_prev(H, 0.0);
    const Vec* dz[4] = {&dz_i, &dz_f, &dz_g, &dz_o};
    for (int gate = 0; gate < 4; ++gate) {
      axpy(1.0, *dz[gate], *gb[gate]);
      Vec du_x, du_h;
      if (cell.use_layer_norm) {
        const std::size_t bx = static_cast<std::size_t>(gate) * 2;
        const std::size_t bh = bx + 1;
        du_x = ln_backward(st.block_raw[bx], st.block_mu[bx],
                           st.block_inv_sigma[bx], cell.ln_blocks[bx].gain,
                           *dz[gate], grads.ln_blocks[bx].gain,
                           grads.ln_blocks[bx].bias);
        du_h = ln_backward(st.block_raw[bh], st.block_mu[bh],
                           st.block_inv_sigma[bh], cell.ln_blocks[bh].gain,
                           *dz[gate], grads.ln_blocks[bh].gain,
                           grads.ln_blocks[bh].bias);
      } else {
        du_x = *dz[gate];
        du_h = *dz[gate];
      }
      outer_add(*gwx[gate], du_x, st.x);
      outer_add(*gwh[gate], du_h, st.h_prev);
      if (input_grads) matvec_transposed_add(*wx[gate], du_x, (*input_grads)[ti]);
      matvec_transposed_add(*wh[gate], du_h, dh_prev);
    }

    dh_carry = std::move(dh_prev);
    dc_carry = std::move(dc_prev);
  }
}

void init_linear_params(LinearHead& head, Rng& rng) {
  glorot_fill(head.w, head.w.cols, head.w.rows, rng);
  std::fill(head.b.begin(), head.b.end(), 0.0);
}

WeightedXentResult weighted_xent_loss(std::span<const Vec> step_logits,
                                      std::size_t label,
                                      std::span<const double> weights) {
  if (step_logits.size() != weights.size())
    throw std::invalid_argument("weighted_xent_loss: weight count");
  WeightedXentResult res;
  res.logit_grads.reserve(step_logits.size());
  for (std::size_t k = 0; k < step_logits.size(); ++k) {
    const Vec& logits = step_logits[k];
    if (label >= logits.size())
      throw std::invalid_argument("weighted_xent_loss: label out of range");
    Vec p = softmax(logits);
    res.loss -= weights[k] * std::log(std::max(p[label], 1e-300));
    Vec g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j)
      g[j] = weights[k] * (p[j] - (j == label ? 1.0 : 0.0));
    res.logit_grads.push_back(std::move(g));
  }
  return res;
}

std::vector<double> make_exp_weights(std::size_t num_steps, double dt_seconds) {
  if (num_steps == 0) throw std::invalid_argument("make_exp_weights: empty");
  std::vector<double> w(num_steps);
  for (std::size_t k = 0; k < num_steps; ++k)
    w[k] = std::exp(-static_cast<double>(num_steps - 1 - k) * dt_seconds);
  return w;
}

void adam_update(std::vector<std::span<double>>& params,
                 const std::vector<std::span<double>>& grads, AdamState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_update: block count");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  std::size_t off = 0;
  for (std::size_t bi = 0; bi < params.size(); ++bi) {
    auto p = params[bi];
    auto g = grads[bi];
    if (p.size() != g.size()) throw std::invalid_argument("adam_update: block size");
    if (off + p.size() > state.m.size())
      throw std::invalid_argument("adam_update: state size");
    for (std::size_t j = 0; j < p.size(); ++j) {
      double& m = state.m[off + j];
      double& v = state.v[off + j];
      m = state.beta1 * m + (1.0 - state.beta1) * g[j];
      v = state.beta2 * v + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
    off += p.size();
  }
  if (off != state.m.size()) throw std::invalid_argument("adam_update: state size");
}

double clip_global_norm(std::vector<std::span<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto g : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

std::size_t total_span_size(const std::vector<std::span<double>>& spans) {
  std::size_t n = 0;
  for (auto s : spans) n += s.size();
  return n;
}

}  // namespace lcpred
