#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcpred/data.hpp"
#include "lcpred/hmm.hpp"
#include "lcpred/models.hpp"

namespace lcpred {

struct ConfusionCounts {
  // rows = true class, cols = predicted class
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(Maneuver truth, Maneuver pred) {
    counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
  }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t true_class) const;
  std::uint64_t col_sum(std::size_t pred_class) const;
};

// 0/0 denominators yield NaN so averages can skip them
std::pair<double, double> precision_recall(const ConfusionCounts& c, Maneuver m);

// mean per-class recall; throws when some class has no true samples
double balanced_accuracy(const ConfusionCounts& c);

// accuracy over true left/right samples only; throws when there are none
double positive_lane_change_accuracy(const ConfusionCounts& c);

double overall_accuracy(const ConfusionCounts& c);

struct MetricsReport {
  std::string model;
  bool average_row = false;  // averages across all settings; t_h/t_f print as "all"
  double t_h_seconds = 0.0;
  double t_f_seconds = 0.0;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double plc_accuracy = 0.0;
};

struct GridConfig {
  std::vector<std::string> models = {"hmm", "single_lstm", "single_factor_srnn",
                                     "lane_srnn"};
  std::vector<double> history_seconds = {1.0, 3.0, 5.0};
  std::vector<double> future_seconds = {1.0, 2.0, 3.0};
  std::uint64_t seed = 0;
  std::size_t hidden_size = kDefaultHiddenSize;
  bool use_layer_norm = true;
  TrainConfig train;     // its seed is superseded per model and setting
  HmmTrainConfig hmm;    // likewise
};

// trains every model from scratch per horizon setting on the balanced train
// split and scores the unbalanced eval split; rows come out model-major
// (all settings of a model, then its average row appended after the grid)
std::vector<MetricsReport> run_grid(std::span<const Sample> corpus,
                                    const GridConfig& config);

std::string report_to_csv(std::span<const MetricsReport> rows);

}  // namespace lcpred
