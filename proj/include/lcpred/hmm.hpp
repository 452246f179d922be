#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lcpred/data.hpp"
#include "lcpred/linalg.hpp"

namespace lcpred {

// diagonal-covariance Gaussian emissions, everything kept in log space
struct GaussianHmm {
  std::size_t num_states = 0;
  std::size_t obs_dim = 0;
  Vec initial_log_probs;             // num_states
  Mat transition_log_probs;          // num_states x num_states
  std::vector<Vec> emission_means;   // per state
  std::vector<Vec> emission_variances;
};

double hmm_log_likelihood(const GaussianHmm& hmm, std::span<const Vec> observations);

struct BaumWelchConfig {
  std::size_t max_iters = 100;
  double rel_tol = 1e-4;
  double var_floor = 1e-6;
};

struct BaumWelchResult {
  GaussianHmm hmm;
  std::vector<double> log_likelihoods;  // total training log-lik per iteration
};

using ObsSequence = std::vector<Vec>;

BaumWelchResult baum_welch(std::span<const ObsSequence> sequences,
                           std::size_t num_states, std::uint64_t seed,
                           const BaumWelchConfig& config = {});

// one HMM per maneuver, uniform class priors
struct HmmClassifier {
  std::array<GaussianHmm, kNumClasses> per_class;  // left, right, none
  Standardizer standardizer;
  HorizonConfig horizon;
};

struct HmmClassification {
  Maneuver label = Maneuver::kNone;
  Vec probabilities;  // softmax over per-class log-likelihoods
};

HmmClassification hmm_classify(const HmmClassifier& classifier,
                               std::span<const Vec> observations);

// grid search over state counts, same count for all three classes, scored
// by macro F1 on a withheld 20% validation share; ties go to the smaller
// count so the result is independent of candidate ordering
std::size_t select_num_states(
    const std::array<std::vector<ObsSequence>, kNumClasses>& sequences_by_class,
    std::span<const std::size_t> candidate_counts, std::uint64_t seed);

struct HmmTrainConfig {
  std::vector<std::size_t> candidate_counts = {2, 3, 4, 5, 6, 8, 10};
  BaumWelchConfig em;
  std::uint64_t seed = 0;
};

// samples must already be standardized and class-balanced
HmmClassifier train_hmm_classifier(std::span<const Sample> training_samples,
                                   const HmmTrainConfig& config);

Maneuver predict_maneuver(const HmmClassifier& classifier, const Sample& sample);

}  // namespace lcpred
