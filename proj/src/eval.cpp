#include "lcpred/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "lcpred/rng.hpp"

namespace lcpred {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void append_metric(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  out += buf;
}

void append_seconds(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  out += buf;
}

enum class ModelKind { kHmm, kSingleLstm, kSingleFactorSrnn, kLaneSrnn };

ModelKind model_kind(const std::string& name) {
  if (name == "hmm") return ModelKind::kHmm;
  if (name == "single_lstm") return ModelKind::kSingleLstm;
  if (name == "single_factor_srnn") return ModelKind::kSingleFactorSrnn;
  if (name == "lane_srnn") return ModelKind::kLaneSrnn;
  throw std::invalid_argument("run_grid: unknown model " + name);
}

double nan_skipping_mean(std::span<const double> values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    n += 1;
  }
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

}  // namespace

std::uint64_t ConfusionCounts::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (std::uint64_t v : row) t += v;
  return t;
}

std::uint64_t ConfusionCounts::row_sum(std::size_t true_class) const {
  std::uint64_t t = 0;
  for (std::uint64_t v : counts[true_class]) t += v;
  return t;
}

std::uint64_t ConfusionCounts::col_sum(std::size_t pred_class) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row[pred_class];
  return t;
}

std::pair<double, double> precision_recall(const ConfusionCounts& c, Maneuver m) {
  const auto k = static_cast<std::size_t>(m);
  const double tp = static_cast<double>(c.counts[k][k]);
  const double col = static_cast<double>(c.col_sum(k));
  const double row = static_cast<double>(c.row_sum(k));
  const double precision = col > 0.0 ? tp / col : kNaN;
  const double recall = row > 0.0 ? tp / row : kNaN;
  return {precision, recall};
}

double balanced_accuracy(const ConfusionCounts& c) {
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const std::uint64_t row = c.row_sum(k);
    if (row == 0)
      throw std::runtime_error("balanced_accuracy: class " +
                               std::string(maneuver_name(static_cast<Maneuver>(k))) +
                               " has no true samples");
    sum += static_cast<double>(c.counts[k][k]) / static_cast<double>(row);
  }
  return sum / static_cast<double>(kNumClasses);
}

double positive_lane_change_accuracy(const ConfusionCounts& c) {
  const auto left = static_cast<std::size_t>(Maneuver::kLeft);
  const auto right = static_cast<std::size_t>(Maneuver::kRight);
  const std::uint64_t positives = c.row_sum(left) + c.row_sum(right);
  if (positives == 0)
    throw std::runtime_error("positive_lane_change_accuracy: no lane-change samples");
  const std::uint64_t correct = c.counts[left][left] + c.counts[right][right];
  return static_cast<double>(correct) / static_cast<double>(positives);
}

double overall_accuracy(const ConfusionCounts& c) {
  const std::uint64_t t = c.total();
  if (t == 0) throw std::runtime_error("overall_accuracy: empty counts");
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) diag += c.counts[k][k];
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::vector<MetricsReport> run_grid(std::span<const Sample> corpus,
                                    const GridConfig& config) {
  struct Setting {
    double th, tf;
  };
  std::vector<Setting> settings;
  for (double th : config.history_seconds)
    for (double tf : config.future_seconds) settings.push_back({th, tf});

  // rows[model][setting]
  std::vector<std::vector<MetricsReport>> rows(
      config.models.size(), std::vector<MetricsReport>(settings.size()));

  for (std::size_t si = 0; si < settings.size(); ++si) {
    const auto [th, tf] = settings[si];
    std::vector<Sample> setting_samples;
    for (const Sample& s : corpus)
      if (s.horizon.history_seconds == th && s.horizon.future_seconds == tf)
        setting_samples.push_back(s);
    if (setting_samples.empty())
      throw std::runtime_error("run_grid: no samples for setting t_h=" +
                               std::to_string(th) + " t_f=" + std::to_string(tf));

    auto split = split_train_eval(setting_samples, derive_seed(config.seed, 0x5711, si));
    auto train = balance_classes(split.train, derive_seed(config.seed, 0xBA1A, si));
    const Standardizer st = fit_standardizer(train);
    for (Sample& s : train) apply_standardizer(st, s);
    for (Sample& s : split.eval) apply_standardizer(st, s);

    for (std::size_t mi = 0; mi < config.models.size(); ++mi) {
      const ModelKind kind = model_kind(config.models[mi]);
      const std::uint64_t init_seed = derive_seed(config.seed, 0x111, mi, si);
      TrainConfig tc = config.train;
      tc.seed = derive_seed(config.seed, 0x17A, mi, si);

      std::vector<Maneuver> pred;
      pred.reserve(split.eval.size());
      switch (kind) {
        case ModelKind::kHmm: {
          HmmTrainConfig hc = config.hmm;
          hc.seed = tc.seed;
          HmmClassifier clf = train_hmm_classifier(train, hc);
          clf.standardizer = st;
          for (const Sample& s : split.eval) pred.push_back(predict_maneuver(clf, s));
          break;
        }
        case ModelKind::kSingleLstm: {
          SingleLstmModel m(config.hidden_size, config.use_layer_norm, init_seed);
          m.standardizer = st;
          train_model(m, train, tc);
          for (const Sample& s : split.eval) pred.push_back(predict_maneuver(m, s));
          break;
        }
        case ModelKind::kSingleFactorSrnn: {
          SingleFactorSrnnModel m(config.hidden_size, config.use_layer_norm, init_seed);
          m.standardizer = st;
          train_model(m, train, tc);
          for (const Sample& s : split.eval) pred.push_back(predict_maneuver(m, s));
          break;
        }
        case ModelKind::kLaneSrnn: {
          LaneSrnnModel m(config.hidden_size, config.use_layer_norm, init_seed);
          m.standardizer = st;
          train_model(m, train, tc);
          for (const Sample& s : split.eval) pred.push_back(predict_maneuver(m, s));
          break;
        }
      }

      ConfusionCounts counts;
      for (std::size_t i = 0; i < split.eval.size(); ++i)
        counts.add(split.eval[i].label, pred[i]);

      MetricsReport& r = rows[mi][si];
      r.model = config.models[mi];
      r.t_h_seconds = th;
      r.t_f_seconds = tf;
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        auto [p, rec] = precision_recall(counts, static_cast<Maneuver>(k));
        r.precision[k] = p;
        r.recall[k] = rec;
      }
      r.accuracy = overall_accuracy(counts);
      r.balanced_accuracy = balanced_accuracy(counts);
      r.plc_accuracy = positive_lane_change_accuracy(counts);
    }
  }

  std::vector<MetricsReport> out;
  out.reserve(config.models.size() * (settings.size() + 1));
  for (std::size_t mi = 0; mi < config.models.size(); ++mi)
    for (const MetricsReport& r : rows[mi]) out.push_back(r);

  for (std::size_t mi = 0; mi < config.models.size(); ++mi) {
    MetricsReport avg;
    avg.model = config.models[mi];
    avg.average_row = true;
    std::vector<double> col(settings.size());
    auto average = [&](auto getter) {
      for (std::size_t si = 0; si < settings.size(); ++si)
        col[si] = getter(rows[mi][si]);
      return nan_skipping_mean(col);
    };
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      avg.precision[k] = average([&](const MetricsReport& r) { return r.precision[k]; });
      avg.recall[k] = average([&](const MetricsReport& r) { return r.recall[k]; });
    }
    avg.accuracy = average([](const MetricsReport& r) { return r.accuracy; });
    avg.balanced_accuracy =
        average([](const MetricsReport& r) { return r.balanced_accuracy; });
    avg.plc_accuracy = average([](const MetricsReport& r) { return r.plc_accuracy; });
    out.push_back(avg);
  }
  return out;
}

std::string report_to_csv(std::span<const MetricsReport> rows) {
  std::string out =
      "model,t_h_seconds,t_f_seconds,precision_left,recall_left,precision_right,"
      "recall_right,precision_none,recall_none,accuracy,balanced_accuracy,"
      "plc_accuracy\n";
  for (const MetricsReport& r : rows) {
    out += r.model;
    out.push_back(',');
    if (r.average_row) {
      out += "all,all";
    } else {
      append_seconds(out, r.t_h_seconds);
      out.push_back(',');
      append_seconds(out, r.t_f_seconds);
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      out.push_back(',');
      append_metric(out, r.precision[k]);
      out.push_back(',');
      append_metric(out, r.recall[k]);
    }
    out.push_back(',');
    append_metric(out, r.accuracy);
    out.push_back(',');
    append_metric(out, r.balanced_accuracy);
    out.push_back(',');
    append_metric(out, r.plc_accuracy);
    out.push_back('\n');
  }
  return out;
}

}  // namespace lcpred
