#include "lcpred/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lcpred/rng.hpp"

namespace lcpred {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double emission_log_density(const GaussianHmm& hmm, std::size_t state,
                            const Vec& x) {
  const Vec& mu = hmm.emission_means[state];
  const Vec& var = hmm.emission_variances[state];
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - mu[d];
    acc += std::log(var[d]) + diff * diff / var[d];
  }
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + acc);
}

void check_observations(const GaussianHmm& hmm, std::span<const Vec> obs) {
  if (obs.empty()) throw std::invalid_argument("hmm: empty observation sequence");
  for (const Vec& x : obs)
    if (x.size() != hmm.obs_dim)
      throw std::invalid_argument("hmm: observation dimension mismatch");
}

// log-space forward table, alpha[t*K + s]
std::vector<double> forward_table(const GaussianHmm& hmm, std::span<const Vec> obs) {
  const std::size_t K = hmm.num_states, T = obs.size();
  std::vector<double> alpha(T * K);
  for (std::size_t s = 0; s < K; ++s)
    alpha[s] = hmm.initial_log_probs[s] + emission_log_density(hmm, s, obs[0]);
  std::vector<double> terms(K);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < K; ++s) {
      for (std::size_t r = 0; r < K; ++r)
        terms[r] = alpha[(t - 1) * K + r] + hmm.transition_log_probs.at(r, s);
      alpha[t * K + s] = logsumexp(terms) + emission_log_density(hmm, s, obs[t]);
    }
  return alpha;
}

std::vector<double> backward_table(const GaussianHmm& hmm, std::span<const Vec> obs) {
  const std::size_t K = hmm.num_states, T = obs.size();
  std::vector<double> beta(T * K, 0.0);
  std::vector<double> terms(K);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t r = 0; r < K; ++r) {
      for (std::size_t s = 0; s < K; ++s)
        terms[s] = hmm.transition_log_probs.at(r, s) +
                   emission_log_density(hmm, s, obs[t + 1]) + beta[(t + 1) * K + s];
      beta[t * K + r] = logsumexp(terms);
    }
  return beta;
}

GaussianHmm init_hmm(std::span<const ObsSequence> sequences, std::size_t num_states,
                     double var_floor, std::uint64_t seed) {
  std::vector<const Vec*> pool;
  for (const auto& seq : sequences)
    for (const Vec& x : seq) pool.push_back(&x);
  const std::size_t dim = pool.front()->size();

  Vec pooled_mean(dim, 0.0), pooled_var(dim, 0.0);
  for (const Vec* x : pool) axpy(1.0, *x, pooled_mean);
  for (double& v : pooled_mean) v /= static_cast<double>(pool.size());
  for (const Vec* x : pool)
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = (*x)[d] - pooled_mean[d];
      pooled_var[d] += diff * diff;
    }
  for (double& v : pooled_var)
    v = std::max(v / static_cast<double>(pool.size()), var_floor);

  Rng rng(seed);
  GaussianHmm hmm;
  hmm.num_states = num_states;
  hmm.obs_dim = dim;
  hmm.emission_variances.assign(num_states, pooled_var);

  // k-means++-style seeding: spread the initial means across the pool
  std::vector<double> min_dist(pool.size(), std::numeric_limits<double>::infinity());
  hmm.emission_means.push_back(*pool[rng.index(pool.size())]);
  while (hmm.emission_means.size() < num_states) {
    const Vec& last = hmm.emission_means.back();
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = (*pool[i])[d] - last[d];
        d2 += diff * diff;
      }
      min_dist[i] = std::min(min_dist[i], d2);
      total += min_dist[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform(0.0, total);
      double acc = 0.0;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += min_dist[i];
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(pool.size());
    }
    hmm.emission_means.push_back(*pool[pick]);
  }

  hmm.initial_log_probs.assign(num_states,
                               -std::log(static_cast<double>(num_states)));
  hmm.transition_log_probs = Mat(num_states, num_states);
  for (std::size_t r = 0; r < num_states; ++r) {
    double row_sum = 0.0;
    for (std::size_t s = 0; s < num_states; ++s) {
      const double w = 1.0 + 0.01 * rng.uniform(-1.0, 1.0);
      hmm.transition_log_probs.at(r, s) = w;
      row_sum += w;
    }
    for (std::size_t s = 0; s < num_states; ++s)
      hmm.transition_log_probs.at(r, s) =
          std::log(hmm.transition_log_probs.at(r, s) / row_sum);
  }
  return hmm;
}

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

double macro_f1(const std::vector<Maneuver>& truth,
                const std::vector<Maneuver>& pred) {
  std::array<ClassCounts, kNumClasses> counts;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      counts[static_cast<std::size_t>(truth[i])].tp += 1;
    } else {
      counts[static_cast<std::size_t>(pred[i])].fp += 1;
      counts[static_cast<std::size_t>(truth[i])].fn += 1;
    }
  }
  double sum = 0.0;
  for (const ClassCounts& c : counts) {
    const double p_den = static_cast<double>(c.tp + c.fp);
    const double r_den = static_cast<double>(c.tp + c.fn);
    const double p = p_den > 0.0 ? static_cast<double>(c.tp) / p_den : 0.0;
    const double r = r_den > 0.0 ? static_cast<double>(c.tp) / r_den : 0.0;
    sum += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return sum / static_cast<double>(kNumClasses);
}

}  // namespace

double hmm_log_likelihood(const GaussianHmm& hmm, std::span<const Vec> observations) {
  check_observations(hmm, observations);
  const std::size_t K = hmm.num_states, T = observations.size();
  const auto alpha = forward_table(hmm, observations);
  return logsumexp(std::span<const double>(alpha).subspan((T - 1) * K, K));
}

BaumWelchResult baum_welch(std::span<const ObsSequence> sequences,
                           std::size_t num_states, std::uint64_t seed,
                           const BaumWelchConfig& config) {
  if (sequences.empty()) throw std::invalid_argument("baum_welch: no sequences");
  if (num_states < 1) throw std::invalid_argument("baum_welch: num_states");
  std::size_t total_obs = 0;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("baum_welch: empty sequence");
    total_obs += seq.size();
    for (const Vec& x : seq)
      if (x.size() != sequences.front().front().size())
        throw std::invalid_argument("baum_welch: observation dimension mismatch");
  }
  if (num_states > total_obs)
    throw std::invalid_argument("baum_welch: more states than observations");

  const std::size_t K = num_states;
  const std::size_t dim = sequences.front().front().size();
  BaumWelchResult result;
  result.hmm = init_hmm(sequences, K, config.var_floor, seed);
  GaussianHmm& hmm = result.hmm;

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    Vec init_acc(K, 0.0);
    Mat trans_acc(K, K);
    Vec trans_row_acc(K, 0.0);
    Vec gamma_acc(K, 0.0);
    std::vector<Vec> mean_acc(K, Vec(dim, 0.0));
    std::vector<Vec> sq_acc(K, Vec(dim, 0.0));
    double total_ll = 0.0;

    for (const auto& seq : sequences) {
      const std::size_t T = seq.size();
      const auto alpha = forward_table(hmm, seq);
      const auto beta = backward_table(hmm, seq);
      const double ll =
          logsumexp(std::span<const double>(alpha).subspan((T - 1) * K, K));
      total_ll += ll;

      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < K; ++s) {
          const double g = std::exp(alpha[t * K + s] + beta[t * K + s] - ll);
          if (t == 0) init_acc[s] += g;
          gamma_acc[s] += g;
          if (t + 1 < T) trans_row_acc[s] += g;
          axpy(g, seq[t], mean_acc[s]);
          for (std::size_t d = 0; d < dim; ++d)
            sq_acc[s][d] += g * seq[t][d] * seq[t][d];
        }

      for (std::size_t t = 0; t + 1 < T; ++t)
        for (std::size_t r = 0; r < K; ++r)
          for (std::size_t s = 0; s < K; ++s) {
            const double x = alpha[t * K + r] + hmm.transition_log_probs.at(r, s) +
                             emission_log_density(hmm, s, seq[t + 1]) +
                             beta[(t + 1) * K + s] - ll;
            trans_acc.at(r, s) += std::exp(x);
          }
    }
    result.log_likelihoods.push_back(total_ll);

    // M-step; states with no responsibility keep their parameters
    for (std::size_t s = 0; s < K; ++s)
      hmm.initial_log_probs[s] = std::log(
          std::max(init_acc[s] / static_cast<double>(sequences.size()), 1e-300));
    for (std::size_t r = 0; r < K; ++r) {
      if (trans_row_acc[r] <= 1e-12) continue;
      for (std::size_t s = 0; s < K; ++s)
        hmm.transition_log_probs.at(r, s) =
            std::log(std::max(trans_acc.at(r, s) / trans_row_acc[r], 1e-300));
    }
    for (std::size_t s = 0; s < K; ++s) {
      if (gamma_acc[s] <= 1e-12) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        const double mu = mean_acc[s][d] / gamma_acc[s];
        hmm.emission_means[s][d] = mu;
        const double var = sq_acc[s][d] / gamma_acc[s] - mu * mu;
        hmm.emission_variances[s][d] = std::max(var, config.var_floor);
      }
    }

    if (result.log_likelihoods.size() >= 2) {
      const double prev = result.log_likelihoods[result.log_likelihoods.size() - 2];
      const double gain = total_ll - prev;
      if (gain < config.rel_tol * std::max(std::abs(prev), 1.0)) break;
    }
  }
  return result;
}

HmmClassification hmm_classify(const HmmClassifier& classifier,
                               std::span<const Vec> observations) {
  Vec log_liks(kNumClasses);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    log_liks[c] = hmm_log_likelihood(classifier.per_class[c], observations);
  HmmClassification out;
  out.probabilities = softmax(log_liks);
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (out.probabilities[c] > out.probabilities[best]) best = c;
  out.label = static_cast<Maneuver>(best);
  return out;
}

std::size_t select_num_states(
    const std::array<std::vector<ObsSequence>, kNumClasses>& sequences_by_class,
    std::span<const std::size_t> candidate_counts, std::uint64_t seed) {
  if (candidate_counts.empty())
    throw std::invalid_argument("select_num_states: no candidates");

  std::array<std::vector<ObsSequence>, kNumClasses> train;
  std::vector<ObsSequence> val_seqs;
  std::vector<Maneuver> val_truth;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& seqs = sequences_by_class[c];
    std::vector<std::size_t> idx(seqs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x5E1, c));
    rng.shuffle(idx);
    const auto val_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(seqs.size()) * 0.2));
    if (val_count == 0 || val_count == seqs.size())
      throw std::runtime_error("select_num_states: validation split empty");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i < idx.size() - val_count) {
        train[c].push_back(seqs[idx[i]]);
      } else {
        val_seqs.push_back(seqs[idx[i]]);
        val_truth.push_back(static_cast<Maneuver>(c));
      }
    }
  }

  double best_f1 = -1.0;
  std::size_t best_count = candidate_counts.front();
  for (std::size_t count : candidate_counts) {
    HmmClassifier clf;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      clf.per_class[c] =
          baum_welch(train[c], count, derive_seed(seed, 10 + c, count)).hmm;
    std::vector<Maneuver> pred;
    pred.reserve(val_seqs.size());
    for (const auto& seq : val_seqs) pred.push_back(hmm_classify(clf, seq).label);
    const double f1 = macro_f1(val_truth, pred);
    if (f1 > best_f1 + 1e-12 || (std::abs(f1 - best_f1) <= 1e-12 && count < best_count)) {
      best_f1 = f1;
      best_count = count;
    }
  }
  return best_count;
}

HmmClassifier train_hmm_classifier(std::span<const Sample> training_samples,
                                   const HmmTrainConfig& config) {
  std::array<std::vector<ObsSequence>, kNumClasses> by_class;
  for (const Sample& s : training_samples)
    by_class[static_cast<std::size_t>(s.label)].push_back(concat_features(s));
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (by_class[c].empty())
      throw std::runtime_error("train_hmm_classifier: class without samples");

  const std::size_t count =
      config.candidate_counts.size() == 1
          ? config.candidate_counts.front()
          : select_num_states(by_class, config.candidate_counts, config.seed);

  HmmClassifier clf;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    clf.per_class[c] = baum_welch(by_class[c], count,
                                  derive_seed(config.seed, 20 + c), config.em)
                           .hmm;
  clf.horizon = training_samples.empty() ? HorizonConfig{} : training_samples[0].horizon;
  return clf;
}

Maneuver predict_maneuver(const HmmClassifier& classifier, const Sample& sample) {
  const auto obs = concat_features(sample);
  return hmm_classify(classifier, obs).label;
}

}  // namespace lcpred
