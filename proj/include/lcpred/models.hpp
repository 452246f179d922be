#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lcpred/data.hpp"
#include "lcpred/nn.hpp"

namespace lcpred {

inline constexpr std::size_t kDefaultHiddenSize = 128;
inline constexpr double kDefaultDropoutKeep = 0.5;

struct ManeuverDistribution {
  Vec probabilities;  // left, right, none
};

// three factor LSTMs (left/same/right lane) feeding one node LSTM whose
// final hidden state drives the classification head
struct LaneSrnnModel {
  std::size_t hidden_size = kDefaultHiddenSize;
  bool use_layer_norm = true;
  LstmCell lstm_left, lstm_same, lstm_right;  // input 9+9+8 = 26
  LstmCell lstm_node;                         // input 3*hidden
  LinearHead head;
  Standardizer standardizer;
  HorizonConfig horizon;
  std::uint64_t init_seed = 0;

  LaneSrnnModel() = default;
  LaneSrnnModel(std::size_t hidden, bool layer_norm, std::uint64_t seed);
};

struct SingleLstmModel {
  std::size_t hidden_size = kDefaultHiddenSize;
  bool use_layer_norm = true;
  LstmCell lstm;  // input 62
  LinearHead head;
  Standardizer standardizer;
  HorizonConfig horizon;
  std::uint64_t init_seed = 0;

  SingleLstmModel() = default;
  SingleLstmModel(std::size_t hidden, bool layer_norm, std::uint64_t seed);
};

struct SingleFactorSrnnModel {
  std::size_t hidden_size = kDefaultHiddenSize;
  bool use_layer_norm = true;
  LstmCell lstm_factor;  // input 62
  LstmCell lstm_node;    // input hidden
  LinearHead head;
  Standardizer standardizer;
  HorizonConfig horizon;
  std::uint64_t init_seed = 0;

  SingleFactorSrnnModel() = default;
  SingleFactorSrnnModel(std::size_t hidden, bool layer_norm, std::uint64_t seed);
};

struct ForwardResult {
  std::vector<Vec> step_logits;
  ManeuverDistribution distribution;  // softmax of the final step
};

// samples must already be standardized; training=true applies per-sequence
// recurrent dropout masks derived from rng_seed
ForwardResult lane_srnn_forward(const LaneSrnnModel& model, const Sample& sample,
                                bool training = false, std::uint64_t rng_seed = 0);
ForwardResult single_lstm_forward(const SingleLstmModel& model, const Sample& sample,
                                  bool training = false, std::uint64_t rng_seed = 0);
ForwardResult single_factor_srnn_forward(const SingleFactorSrnnModel& model,
                                         const Sample& sample, bool training = false,
                                         std::uint64_t rng_seed = 0);

Maneuver argmax_maneuver(const ManeuverDistribution& dist);

Maneuver predict_maneuver(const LaneSrnnModel& model, const Sample& sample);
Maneuver predict_maneuver(const SingleLstmModel& model, const Sample& sample);
Maneuver predict_maneuver(const SingleFactorSrnnModel& model, const Sample& sample);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;  // tail of the shuffled training set
  std::size_t patience = 6;          // epochs without improvement; 0 disables
  double dropout_keep = kDefaultDropoutKeep;
  std::size_t threads = 1;
  std::size_t max_per_class = 0;  // 0 keeps everything
  double clip_norm = 5.0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_balanced_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

TrainReport train_model(LaneSrnnModel& model, std::span<const Sample> training_set,
                        const TrainConfig& config);
TrainReport train_model(SingleLstmModel& model, std::span<const Sample> training_set,
                        const TrainConfig& config);
TrainReport train_model(SingleFactorSrnnModel& model,
                        std::span<const Sample> training_set,
                        const TrainConfig& config);

// summed weighted cross-entropy loss of one standardized sample, with
// parameter gradients accumulated into grads, a same-shape model whose
// parameters the caller zeroed beforehand; dropout off
double model_loss_grads(const LaneSrnnModel& model, const Sample& sample,
                        LaneSrnnModel& grads);
double model_loss_grads(const SingleLstmModel& model, const Sample& sample,
                        SingleLstmModel& grads);
double model_loss_grads(const SingleFactorSrnnModel& model, const Sample& sample,
                        SingleFactorSrnnModel& grads);

// flat views over every learnable tensor, in the order gradients use
std::vector<std::span<double>> model_param_spans(LaneSrnnModel& model);
std::vector<std::span<double>> model_param_spans(SingleLstmModel& model);
std::vector<std::span<double>> model_param_spans(SingleFactorSrnnModel& model);

}  // namespace lcpred
