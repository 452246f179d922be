#include "lcpred/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lcpred/parallel.hpp"
#include "lcpred/rng.hpp"

namespace lcpred {

namespace {

constexpr std::size_t kFactorInputDim = 2 * kNeighborDim + kStateDim;

void check_sample(const Sample& s) {
  const std::size_t h = s.target_history.size();
  if (h == 0) throw std::invalid_argument("model forward: empty history");
  for (const auto& hist : s.neighbor_histories)
    if (hist.size() != h)
      throw std::invalid_argument("model forward: history-length mismatch");
}

// factor input per step: [ahead neighbor; behind neighbor; target]
std::vector<Vec> factor_inputs(const Sample& s, std::size_t ahead_slot) {
  const std::size_t h = s.target_history.size();
  std::vector<Vec> xs(h);
  for (std::size_t k = 0; k < h; ++k) {
    Vec f;
    f.reserve(kFactorInputDim);
    append_neighbor_features(s.neighbor_histories[ahead_slot][k], f);
    append_neighbor_features(s.neighbor_histories[ahead_slot + 1][k], f);
    append_state_features(s.target_history[k], f);
    xs[k] = std::move(f);
  }
  return xs;
}

Vec head_logits(const LinearHead& head, const Vec& h) {
  Vec out = head.b;
  matvec_add(head.w, h, out);
  return out;
}

// ---- per-architecture plumbing shared by forward, backward and training

struct LaneOps {
  using Model = LaneSrnnModel;
  static constexpr std::size_t kCells = 4;
  using Inputs = std::array<std::vector<Vec>, 3>;

  struct Trace {
    LstmTrace left, same, right, node;
    std::vector<LstmState> node_states;
  };

  static Inputs make_inputs(const Sample& s) {
    check_sample(s);
    return {factor_inputs(s, 0), factor_inputs(s, 2), factor_inputs(s, 4)};
  }

  static std::vector<Vec> forward(const Model& m, const Inputs& in,
                                  const DropoutMask* masks, Trace* tr) {
    const std::size_t T = in[0].size();
    const std::size_t H = m.hidden_size;
    std::vector<LstmState> hl, hs, hr;
    lstm_forward_sequence(m.lstm_left, in[0], masks ? &masks[0] : nullptr, hl,
                          tr ? &tr->left : nullptr);
    lstm_forward_sequence(m.lstm_same, in[1], masks ? &masks[1] : nullptr, hs,
                          tr ? &tr->same : nullptr);
    lstm_forward_sequence(m.lstm_right, in[2], masks ? &masks[2] : nullptr, hr,
                          tr ? &tr->right : nullptr);

    std::vector<Vec> node_in(T);
    for (std::size_t t = 0; t < T; ++t) {
      Vec v;
      v.reserve(3 * H);
      v.insert(v.end(), hl[t].h.begin(), hl[t].h.end());
      v.insert(v.end(), hs[t].h.begin(), hs[t].h.end());
      v.insert(v.end(), hr[t].h.begin(), hr[t].h.end());
      node_in[t] = std::move(v);
    }
    std::vector<LstmState> hn;
    lstm_forward_sequence(m.lstm_node, node_in, masks ? &masks[3] : nullptr, hn,
                          tr ? &tr->node : nullptr);

    std::vector<Vec> logits(T);
    for (std::size_t t = 0; t < T; ++t) logits[t] = head_logits(m.head, hn[t].h);
    if (tr) tr->node_states = std::move(hn);
    return logits;
  }

  static void backward(const Model& m, const Trace& tr,
                       const std::vector<Vec>& dlogits, Model& g) {
    const std::size_t T = dlogits.size();
    const std::size_t H = m.hidden_size;
    std::vector<Vec> dh_node(T, Vec(H, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
      outer_add(g.head.w, dlogits[t], tr.node_states[t].h);
      axpy(1.0, dlogits[t], g.head.b);
      matvec_transposed_add(m.head.w, dlogits[t], dh_node[t]);
    }
    std::vector<Vec> dnode_in;
    lstm_backward(m.lstm_node, tr.node, dh_node, g.lstm_node, &dnode_in);

    std::vector<Vec> dhl(T, Vec(H)), dhs(T, Vec(H)), dhr(T, Vec(H));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < H; ++j) {
        dhl[t][j] = dnode_in[t][j];
        dhs[t][j] = dnode_in[t][H + j];
        dhr[t][j] = dnode_in[t][2 * H + j];
      }
    lstm_backward(m.lstm_left, tr.left, dhl, g.lstm_left, nullptr);
    lstm_backward(m.lstm_same, tr.same, dhs, g.lstm_same, nullptr);
    lstm_backward(m.lstm_right, tr.right, dhr, g.lstm_right, nullptr);
  }

  static std::vector<std::span<double>> spans(Model& m) {
    auto s = param_spans(m.lstm_left);
    for (auto sp : param_spans(m.lstm_same)) s.push_back(sp);
    for (auto sp : param_spans(m.lstm_right)) s.push_back(sp);
    for (auto sp : param_spans(m.lstm_node)) s.push_back(sp);
    s.push_back(m.head.w.a);
    s.push_back(m.head.b);
    return s;
  }
};

struct SingleOps {
  using Model = SingleLstmModel;
  static constexpr std::size_t kCells = 1;
  using Inputs = std::vector<Vec>;

  struct Trace {
    LstmTrace lstm;
    std::vector<LstmState> states;
  };

  static Inputs make_inputs(const Sample& s) {
    check_sample(s);
    return concat_features(s);
  }

  static std::vector<Vec> forward(const Model& m, const Inputs& in,
                                  const DropoutMask* masks, Trace* tr) {
    std::vector<LstmState> hs;
    lstm_forward_sequence(m.lstm, in, masks ? &masks[0] : nullptr, hs,
                          tr ? &tr->lstm : nullptr);
    std::vector<Vec> logits(in.size());
    for (std::size_t t = 0; t < in.size(); ++t)
      logits[t] = head_logits(m.head, hs[t].h);
    if (tr) tr->states = std::move(hs);
    return logits;
  }

  static void backward(const Model& m, const Trace& tr,
                       const std::vector<Vec>& dlogits, Model& g) {
    const std::size_t T = dlogits.size();
    std::vector<Vec> dh(T, Vec(m.hidden_size, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
      outer_add(g.head.w, dlogits[t], tr.states[t].h);
      axpy(1.0, dlogits[t], g.head.b);
      matvec_transposed_add(m.head.w, dlogits[t], dh[t]);
    }
    lstm_backward(m.lstm, tr.lstm, dh, g.lstm, nullptr);
  }

  static std::vector<std::span<double>> spans(Model& m) {
    auto s = param_spans(m.lstm);
    s.push_back(m.head.w.a);
    s.push_back(m.head.b);
    return s;
  }
};

struct StackedOps {
  using Model = SingleFactorSrnnModel;
  static constexpr std::size_t kCells = 2;
  using Inputs = std::vector<Vec>;

  struct Trace {
    LstmTrace factor, node;
    std::vector<LstmState> node_states;
  };

  static Inputs make_inputs(const Sample& s) {
    check_sample(s);
    return concat_features(s);
  }

  static std::vector<Vec> forward(const Model& m, const Inputs& in,
                                  const DropoutMask* masks, Trace* tr) {
    std::vector<LstmState> hf;
    lstm_forward_sequence(m.lstm_factor, in, masks ? &masks[0] : nullptr, hf,
                          tr ? &tr->factor : nullptr);
    std::vector<Vec> node_in(in.size());
    for (std::size_t t = 0; t < in.size(); ++t) node_in[t] = hf[t].h;
    std::vector<LstmState> hn;
    lstm_forward_sequence(m.lstm_node, node_in, masks ? &masks[1] : nullptr, hn,
                          tr ? &tr->node : nullptr);
    std::vector<Vec> logits(in.size());
    for (std::size_t t = 0; t < in.size(); ++t)
      logits[t] = head_logits(m.head, hn[t].h);
    if (tr) tr->node_states = std::move(hn);
    return logits;
  }

  static void backward(const Model& m, const Trace& tr,
                       const std::vector<Vec>& dlogits, Model& g) {
    const std::size_t T = dlogits.size();
    std::vector<Vec> dh_node(T, Vec(m.hidden_size, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
      outer_add(g.head.w, dlogits[t], tr.node_states[t].h);
      axpy(1.0, dlogits[t], g.head.b);
      matvec_transposed_add(m.head.w, dlogits[t], dh_node[t]);
    }
    std::vector<Vec> dh_factor;
    lstm_backward(m.lstm_node, tr.node, dh_node, g.lstm_node, &dh_factor);
    lstm_backward(m.lstm_factor, tr.factor, dh_factor, g.lstm_factor, nullptr);
  }

  static std::vector<std::span<double>> spans(Model& m) {
    auto s = param_spans(m.lstm_factor);
    for (auto sp : param_spans(m.lstm_node)) s.push_back(sp);
    s.push_back(m.head.w.a);
    s.push_back(m.head.b);
    return s;
  }
};

template <class Ops>
ForwardResult run_forward(const typename Ops::Model& model, const Sample& sample,
                          bool training, std::uint64_t rng_seed) {
  auto inputs = Ops::make_inputs(sample);
  std::vector<DropoutMask> masks;
  if (training) {
    masks.reserve(Ops::kCells);
    for (std::size_t c = 0; c < Ops::kCells; ++c)
      masks.push_back(sample_dropout_mask(model.hidden_size, kDefaultDropoutKeep,
                                          derive_seed(rng_seed, c)));
  }
  ForwardResult res;
  res.step_logits =
      Ops::forward(model, inputs, masks.empty() ? nullptr : masks.data(), nullptr);
  res.distribution.probabilities = softmax(res.step_logits.back());
  return res;
}

Vec snapshot_params(const std::vector<std::span<double>>& spans) {
  Vec v;
  v.reserve(total_span_size(spans));
  for (auto s : spans) v.insert(v.end(), s.begin(), s.end());
  return v;
}

void restore_params(std::vector<std::span<double>>& spans, const Vec& snap) {
  std::size_t off = 0;
  for (auto s : spans) {
    std::copy(snap.begin() + static_cast<long>(off),
              snap.begin() + static_cast<long>(off + s.size()), s.begin());
    off += s.size();
  }
}

// recall averaged over the classes that actually appear
double mean_recall(const std::vector<Maneuver>& truth,
                   const std::vector<Maneuver>& pred) {
  std::array<std::size_t, kNumClasses> total{}, hit{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    total[c] += 1;
    if (pred[i] == truth[i]) hit[c] += 1;
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (total[c] == 0) continue;
    classes += 1;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
  }
  return classes == 0 ? 0.0 : sum / static_cast<double>(classes);
}

template <class Ops>
TrainReport train_impl(typename Ops::Model& model,
                       std::span<const Sample> training_set,
                       const TrainConfig& cfg) {
  using Model = typename Ops::Model;
  if (training_set.empty()) throw std::runtime_error("train_model: empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_model: batch_size");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train_model: lr");
  if (cfg.validation_fraction < 0.0 || cfg.validation_fraction >= 1.0)
    throw std::invalid_argument("train_model: validation fraction");
  if (!(cfg.dropout_keep > 0.0) || cfg.dropout_keep > 1.0)
    throw std::invalid_argument("train_model: dropout keep");

  const std::size_t T = training_set[0].target_history.size();
  for (const Sample& s : training_set)
    if (s.target_history.size() != T)
      throw std::invalid_argument("train_model: mixed history lengths");

  // optional per-class cap, drawn without replacement
  std::vector<std::size_t> used;
  if (cfg.max_per_class > 0) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::vector<std::size_t> cls;
      for (std::size_t i = 0; i < training_set.size(); ++i)
        if (static_cast<std::size_t>(training_set[i].label) == c) cls.push_back(i);
      Rng crng(derive_seed(cfg.seed, 0xCA9, c));
      crng.shuffle(cls);
      if (cls.size() > cfg.max_per_class) cls.resize(cfg.max_per_class);
      used.insert(used.end(), cls.begin(), cls.end());
    }
    std::sort(used.begin(), used.end());
  } else {
    used.resize(training_set.size());
    for (std::size_t i = 0; i < used.size(); ++i) used[i] = i;
  }

  const std::size_t n = used.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng vrng(derive_seed(cfg.seed, 1));
  vrng.shuffle(order);
  const auto val_count =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.validation_fraction));
  if (n - val_count == 0) throw std::runtime_error("train_model: no samples left to train");
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<long>(val_count));
  std::vector<std::size_t> val_idx(order.end() - static_cast<long>(val_count), order.end());

  // inputs and labels are fixed across epochs; build them once
  std::vector<typename Ops::Inputs> inputs(n);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = Ops::make_inputs(training_set[used[i]]);
    labels[i] = static_cast<std::size_t>(training_set[used[i]].label);
  }
  std::vector<Maneuver> val_truth;
  val_truth.reserve(val_idx.size());
  for (std::size_t i : val_idx) val_truth.push_back(training_set[used[i]].label);

  const std::vector<double> weights = make_exp_weights(T, kDtSeconds);

  auto model_spans = Ops::spans(model);
  AdamState adam(total_span_size(model_spans), cfg.learning_rate);

  const int threads = cfg.threads == 0 ? default_thread_count()
                                       : static_cast<int>(cfg.threads);
  auto make_scratch = [&]() {
    Model g = model;
    auto sp = Ops::spans(g);
    for (auto s : sp) std::fill(s.begin(), s.end(), 0.0);
    return g;
  };
  std::vector<Model> scratch;
  for (int w = 0; w < threads; ++w) scratch.push_back(make_scratch());
  Model batch_grads = make_scratch();
  auto grad_spans = Ops::spans(batch_grads);

  TrainReport report;
  double best_val = -1.0;
  Vec best_params;
  std::size_t best_epoch = 0, since_best = 0;

  Rng erng(derive_seed(cfg.seed, 2));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    erng.shuffle(train_idx);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, train_idx.size() - start);
      const double inv_count = 1.0 / static_cast<double>(count);

      for (auto& g : scratch) {
        auto sp = Ops::spans(g);
        for (auto s : sp) std::fill(s.begin(), s.end(), 0.0);
      }
      std::vector<double> losses(count, 0.0);

      const std::size_t workers =
          std::min<std::size_t>(std::max(threads, 1), count);
      const std::size_t chunk = (count + workers - 1) / workers;
      parallel_for(count, threads, [&](std::size_t b0, std::size_t b1) {
        Model& g = scratch[b0 / chunk];
        for (std::size_t b = b0; b < b1; ++b) {
          const std::size_t i = train_idx[start + b];
          std::vector<DropoutMask> masks;
          masks.reserve(Ops::kCells);
          for (std::size_t c = 0; c < Ops::kCells; ++c)
            masks.push_back(sample_dropout_mask(
                model.hidden_size, cfg.dropout_keep,
                derive_seed(cfg.seed, 3 + c, epoch, i)));
          typename Ops::Trace trace;
          auto logits = Ops::forward(model, inputs[i],
                                     cfg.dropout_keep < 1.0 ? masks.data() : nullptr,
                                     &trace);
          auto xent = weighted_xent_loss(logits, labels[i], weights);
          losses[b] = xent.loss;
          for (auto& dl : xent.logit_grads)
            for (double& v : dl) v *= inv_count;
          Ops::backward(model, trace, xent.logit_grads, g);
        }
      });

      for (double l : losses) epoch_loss += l;
      for (auto s : grad_spans) std::fill(s.begin(), s.end(), 0.0);
      for (std::size_t w = 0; w < workers; ++w) {
        auto sp = Ops::spans(scratch[w]);
        for (std::size_t k = 0; k < sp.size(); ++k) axpy(1.0, sp[k], grad_spans[k]);
      }
      clip_global_norm(grad_spans, cfg.clip_norm);
      adam_update(model_spans, grad_spans, adam);
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(train_idx.size());
    if (!val_idx.empty()) {
      std::vector<Maneuver> pred;
      pred.reserve(val_idx.size());
      for (std::size_t i : val_idx) {
        auto logits = Ops::forward(model, inputs[i], nullptr, nullptr);
        const Vec& last = logits.back();
        std::size_t best = 0;
        for (std::size_t j = 1; j < last.size(); ++j)
          if (last[j] > last[best]) best = j;
        pred.push_back(static_cast<Maneuver>(best));
      }
      stats.val_balanced_accuracy = mean_recall(val_truth, pred);
      if (stats.val_balanced_accuracy > best_val + 1e-9) {
        best_val = stats.val_balanced_accuracy;
        best_params = snapshot_params(model_spans);
        best_epoch = epoch;
        since_best = 0;
      } else {
        since_best += 1;
      }
    } else {
      stats.val_balanced_accuracy = std::numeric_limits<double>::quiet_NaN();
      best_epoch = epoch;
    }
    report.epochs.push_back(stats);

    if (!val_idx.empty() && cfg.patience > 0 && since_best >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }

  if (!best_params.empty()) restore_params(model_spans, best_params);
  report.best_epoch = best_epoch;
  if (!training_set.empty()) model.horizon = training_set[0].horizon;
  return report;
}

}  // namespace

LaneSrnnModel::LaneSrnnModel(std::size_t hidden, bool layer_norm, std::uint64_t seed)
    : hidden_size(hidden),
      use_layer_norm(layer_norm),
      lstm_left(kFactorInputDim, hidden, layer_norm),
      lstm_same(kFactorInputDim, hidden, layer_norm),
      lstm_right(kFactorInputDim, hidden, layer_norm),
      lstm_node(3 * hidden, hidden, layer_norm),
      head(kNumClasses, hidden),
      init_seed(seed) {
  Rng rng(seed);
  init_lstm_params(lstm_left, rng);
  init_lstm_params(lstm_same, rng);
  init_lstm_params(lstm_right, rng);
  init_lstm_params(lstm_node, rng);
  init_linear_params(head, rng);
}

SingleLstmModel::SingleLstmModel(std::size_t hidden, bool layer_norm,
                                 std::uint64_t seed)
    : hidden_size(hidden),
      use_layer_norm(layer_norm),
      lstm(kConcatDim, hidden, layer_norm),
      head(kNumClasses, hidden),
      init_seed(seed) {
  Rng rng(seed);
  init_lstm_params(lstm, rng);
  init_linear_params(head, rng);
}

SingleFactorSrnnModel::SingleFactorSrnnModel(std::size_t hidden, bool layer_norm,
                                             std::uint64_t seed)
    : hidden_size(hidden),
      use_layer_norm(layer_norm),
      lstm_factor(kConcatDim, hidden, layer_norm),
      lstm_node(hidden, hidden, layer_norm),
      head(kNumClasses, hidden),
      init_seed(seed) {
  Rng rng(seed);
  init_lstm_params(lstm_factor, rng);
  init_lstm_params(lstm_node, rng);
  init_linear_params(head, rng);
}

ForwardResult lane_srnn_forward(const LaneSrnnModel& model, const Sample& sample,
                                bool training, std::uint64_t rng_seed) {
  return run_forward<LaneOps>(model, sample, training, rng_seed);
}

ForwardResult single_lstm_forward(const SingleLstmModel& model, const Sample& sample,
                                  bool training, std::uint64_t rng_seed) {
  return run_forward<SingleOps>(model, sample, training, rng_seed);
}

ForwardResult single_factor_srnn_forward(const SingleFactorSrnnModel& model,
                                         const Sample& sample, bool training,
                                         std::uint64_t rng_seed) {
  return run_forward<StackedOps>(model, sample, training, rng_seed);
}

Maneuver argmax_maneuver(const ManeuverDistribution& dist) {
  const Vec& p = dist.probabilities;
  if (p.size() != kNumClasses)
    throw std::invalid_argument("argmax_maneuver: wrong arity");
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j)
    if (p[j] > p[best]) best = j;
  return static_cast<Maneuver>(best);
}

Maneuver predict_maneuver(const LaneSrnnModel& model, const Sample& sample) {
  return argmax_maneuver(lane_srnn_forward(model, sample).distribution);
}

Maneuver predict_maneuver(const SingleLstmModel& model, const Sample& sample) {
  return argmax_maneuver(single_lstm_forward(model, sample).distribution);
}

Maneuver predict_maneuver(const SingleFactorSrnnModel& model, const Sample& sample) {
  return argmax_maneuver(single_factor_srnn_forward(model, sample).distribution);
}

TrainReport train_model(LaneSrnnModel& model, std::span<const Sample> training_set,
                        const TrainConfig& config) {
  return train_impl<LaneOps>(model, training_set, config);
}

TrainReport train_model(SingleLstmModel& model, std::span<const Sample> training_set,
                        const TrainConfig& config) {
  return train_impl<SingleOps>(model, training_set, config);
}

TrainReport train_model(SingleFactorSrnnModel& model,
                        std::span<const Sample> training_set,
                        const TrainConfig& config) {
  return train_impl<StackedOps>(model, training_set, config);
}

namespace {

template <class Ops>
double loss_grads_impl(const typename Ops::Model& model, const Sample& sample,
                       typename Ops::Model& grads) {
  auto inputs = Ops::make_inputs(sample);
  typename Ops::Trace trace;
  auto logits = Ops::forward(model, inputs, nullptr, &trace);
  const auto weights = make_exp_weights(logits.size(), kDtSeconds);
  auto xent =
      weighted_xent_loss(logits, static_cast<std::size_t>(sample.label), weights);
  Ops::backward(model, trace, xent.logit_grads, grads);
  return xent.loss;
}

}  // namespace

double model_loss_grads(const LaneSrnnModel& model, const Sample& sample,
                        LaneSrnnModel& grads) {
  return loss_grads_impl<LaneOps>(model, sample, grads);
}

double model_loss_grads(const SingleLstmModel& model, const Sample& sample,
                        SingleLstmModel& grads) {
  return loss_grads_impl<SingleOps>(model, sample, grads);
}

double model_loss_grads(const SingleFactorSrnnModel& model, const Sample& sample,
                        SingleFactorSrnnModel& grads) {
  return loss_grads_impl<StackedOps>(model, sample, grads);
}

std::vector<std::span<double>> model_param_spans(LaneSrnnModel& model) {
  return LaneOps::spans(model);
}

std::vector<std::span<double>> model_param_spans(SingleLstmModel& model) {
  return SingleOps::spans(model);
}

std::vector<std::span<double>> model_param_spans(SingleFactorSrnnModel& model) {
  return StackedOps::spans(model);
}

}  // namespace lcpred
