#include "lcpred/cli.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lcpred/checkpoint.hpp"
#include "lcpred/data.hpp"
#include "lcpred/eval.hpp"
#include "lcpred/hmm.hpp"
#include "lcpred/models.hpp"
#include "lcpred/parallel.hpp"
#include "lcpred/rng.hpp"

namespace lcpred {

namespace {

const std::vector<double> kSupportedHistory = {1.0, 3.0, 5.0};
const std::vector<double> kSupportedFuture = {1.0, 2.0, 3.0};

void check_horizons(const std::vector<double>& th, const std::vector<double>& tf,
                    bool allow_any) {
  if (allow_any) return;
  for (double v : th)
    if (std::find(kSupportedHistory.begin(), kSupportedHistory.end(), v) ==
        kSupportedHistory.end())
      throw std::runtime_error(
          "t_h " + std::to_string(v) +
          " outside the supported set {1,3,5}; pass --allow-any-horizon to override");
  for (double v : tf)
    if (std::find(kSupportedFuture.begin(), kSupportedFuture.end(), v) ==
        kSupportedFuture.end())
      throw std::runtime_error(
          "t_f " + std::to_string(v) +
          " outside the supported set {1,2,3}; pass --allow-any-horizon to override");
}

struct GenerateArgs {
  std::string out;
  std::uint64_t seed = 0;
  int scenes = 1;
  int lanes = 3;
  int vehicles = 20;
  double duration = 120.0;
  double rate = 1.0;
  double road_length = 600.0;
  std::vector<double> t_h = kSupportedHistory;
  std::vector<double> t_f = kSupportedFuture;
  std::size_t stride = 1;
  double none_keep = 1.0;
  bool allow_any = false;
};

int cmd_generate(const GenerateArgs& a) {
  check_horizons(a.t_h, a.t_f, a.allow_any);

  std::vector<TrafficScene> scenes;
  scenes.reserve(static_cast<std::size_t>(a.scenes));
  for (int sc = 0; sc < a.scenes; ++sc) {
    SceneConfig cfg;
    cfg.num_lanes = a.lanes;
    cfg.num_vehicles = a.vehicles;
    cfg.duration_seconds = a.duration;
    cfg.lane_change_rate_per_vehicle_per_minute = a.rate;
    cfg.road_length_m = a.road_length;
    cfg.seed = derive_seed(a.seed, 0x5CE, static_cast<std::uint64_t>(sc));
    TrafficScene scene = generate_scene(cfg);
    // keep track ids unique across scenes
    for (auto& track : scene.tracks)
      track.id += static_cast<std::uint64_t>(sc) *
                  static_cast<std::uint64_t>(a.vehicles);
    scenes.push_back(std::move(scene));
    std::cerr << "generated scene " << sc + 1 << "/" << a.scenes << "\n";
  }

  std::vector<Sample> corpus;
  std::size_t setting_idx = 0;
  for (double th : a.t_h)
    for (double tf : a.t_f) {
      const HorizonConfig horizon = make_horizon(th, tf);
      std::array<std::size_t, kNumClasses> counts{};
      for (std::size_t sc = 0; sc < scenes.size(); ++sc) {
        ExtractionConfig ec;
        ec.stride = a.stride;
        ec.none_keep_fraction = a.none_keep;
        ec.seed = derive_seed(a.seed, 0xE87, sc, setting_idx);
        auto samples = extract_samples(scenes[sc], horizon, ec);
        for (Sample& s : samples) {
          counts[static_cast<std::size_t>(s.label)] += 1;
          corpus.push_back(std::move(s));
        }
      }
      std::printf("setting t_h=%g t_f=%g: left=%zu right=%zu none=%zu total=%zu\n",
                  th, tf, counts[0], counts[1], counts[2],
                  counts[0] + counts[1] + counts[2]);
      setting_idx += 1;
    }

  write_corpus(a.out, corpus);
  std::printf("wrote %zu samples to %s\n", corpus.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string corpus;
  std::string model = "lane_srnn";
  std::string out;
  double t_h = 1.0;
  double t_f = 1.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::size_t hidden = kDefaultHiddenSize;
  double val_fraction = 0.2;
  std::size_t patience = 6;
  double dropout_keep = kDefaultDropoutKeep;
  std::size_t threads = 0;
  std::size_t max_per_class = 0;
  std::vector<std::size_t> hmm_states = {2, 3, 4, 5, 6, 8, 10};
  bool allow_any = false;
  bool no_layer_norm = false;
};

std::vector<Sample> load_setting(const std::string& path, double th, double tf) {
  auto corpus = read_corpus(path);
  std::vector<Sample> out;
  for (Sample& s : corpus)
    if (s.horizon.history_seconds == th && s.horizon.future_seconds == tf)
      out.push_back(std::move(s));
  if (out.empty())
    throw std::runtime_error("corpus has no samples for t_h=" + std::to_string(th) +
                             " t_f=" + std::to_string(tf));
  return out;
}

struct PreparedData {
  std::vector<Sample> train;
  std::vector<Sample> eval;
  Standardizer standardizer;
};

PreparedData prepare_split(std::vector<Sample> samples, std::uint64_t seed) {
  PreparedData d;
  auto split = split_train_eval(samples, derive_seed(seed, 0x5711));
  d.train = balance_classes(split.train, derive_seed(seed, 0xBA1A));
  d.standardizer = fit_standardizer(d.train);
  for (Sample& s : d.train) apply_standardizer(d.standardizer, s);
  for (Sample& s : split.eval) apply_standardizer(d.standardizer, s);
  d.eval = std::move(split.eval);
  return d;
}

void log_training(const TrainReport& report) {
  for (std::size_t e = 0; e < report.epochs.size(); ++e)
    std::fprintf(stderr, "epoch %zu loss %.6f val_balanced_accuracy %.6f\n", e,
                 report.epochs[e].train_loss, report.epochs[e].val_balanced_accuracy);
  std::fprintf(stderr, "best epoch %zu%s\n", report.best_epoch,
               report.stopped_early ? " (stopped early)" : "");
}

int cmd_train(const TrainArgs& a) {
  check_horizons({a.t_h}, {a.t_f}, a.allow_any);
  auto samples = load_setting(a.corpus, a.t_h, a.t_f);
  PreparedData data = prepare_split(std::move(samples), a.seed);
  std::fprintf(stderr, "train %zu (balanced), eval %zu (unbalanced)\n",
               data.train.size(), data.eval.size());

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = derive_seed(a.seed, 0x17A);
  tc.validation_fraction = a.val_fraction;
  tc.patience = a.patience;
  tc.dropout_keep = a.dropout_keep;
  tc.threads = a.threads == 0 ? static_cast<std::size_t>(default_thread_count())
                              : a.threads;
  tc.max_per_class = a.max_per_class;

  const std::uint64_t init_seed = derive_seed(a.seed, 0x111);
  const bool layer_norm = !a.no_layer_norm;

  if (a.model == "hmm") {
    HmmTrainConfig hc;
    hc.candidate_counts = a.hmm_states;
    hc.seed = tc.seed;
    HmmClassifier clf = train_hmm_classifier(data.train, hc);
    clf.standardizer = data.standardizer;
    save_checkpoint(a.out, clf);
  } else if (a.model == "single_lstm") {
    SingleLstmModel m(a.hidden, layer_norm, init_seed);
    m.standardizer = data.standardizer;
    log_training(train_model(m, data.train, tc));
    save_checkpoint(a.out, m);
  } else if (a.model == "single_factor_srnn") {
    SingleFactorSrnnModel m(a.hidden, layer_norm, init_seed);
    m.standardizer = data.standardizer;
    log_training(train_model(m, data.train, tc));
    save_checkpoint(a.out, m);
  } else if (a.model == "lane_srnn") {
    LaneSrnnModel m(a.hidden, layer_norm, init_seed);
    m.standardizer = data.standardizer;
    log_training(train_model(m, data.train, tc));
    save_checkpoint(a.out, m);
  } else {
    throw std::runtime_error("unknown model kind " + a.model);
  }
  std::printf("wrote checkpoint %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::uint64_t seed = 0;  // must match the training seed to rebuild its split
  double t_h = 0.0;        // 0 accepts the checkpoint's horizon
  double t_f = 0.0;
};

int cmd_eval(const EvalArgs& a) {
  AnyModel model = load_checkpoint(a.checkpoint);
  const HorizonConfig& horizon = model_horizon(model);
  if (horizon.history_steps == 0)
    throw std::runtime_error("checkpoint carries no horizon");
  if ((a.t_h != 0.0 && a.t_h != horizon.history_seconds) ||
      (a.t_f != 0.0 && a.t_f != horizon.future_seconds))
    throw std::runtime_error("requested horizon does not match the checkpoint");

  auto samples =
      load_setting(a.corpus, horizon.history_seconds, horizon.future_seconds);
  auto split = split_train_eval(samples, derive_seed(a.seed, 0x5711));
  const Standardizer& st = model_standardizer(model);
  for (Sample& s : split.eval) apply_standardizer(st, s);

  ConfusionCounts counts;
  for (const Sample& s : split.eval) counts.add(s.label, predict_maneuver(model, s));

  MetricsReport row;
  row.model = checkpoint_kind(model);
  row.t_h_seconds = horizon.history_seconds;
  row.t_f_seconds = horizon.future_seconds;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    auto [p, r] = precision_recall(counts, static_cast<Maneuver>(k));
    row.precision[k] = p;
    row.recall[k] = r;
  }
  row.accuracy = overall_accuracy(counts);
  row.balanced_accuracy = balanced_accuracy(counts);
  row.plc_accuracy = positive_lane_change_accuracy(counts);

  const std::string csv = report_to_csv({&row, 1});
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + a.out);
    f << csv;
  }
  return 0;
}

struct GridArgs {
  std::string corpus;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::size_t hidden = kDefaultHiddenSize;
  double val_fraction = 0.2;
  std::size_t patience = 6;
  std::size_t threads = 0;
  std::size_t max_per_class = 0;
  std::vector<std::size_t> hmm_states = {2, 3, 4, 5, 6, 8, 10};
  std::vector<std::string> models = {"hmm", "single_lstm", "single_factor_srnn",
                                     "lane_srnn"};
};

int cmd_grid(const GridArgs& a) {
  auto corpus = read_corpus(a.corpus);
  GridConfig cfg;
  cfg.models = a.models;
  cfg.seed = a.seed;
  cfg.hidden_size = a.hidden;
  cfg.train.epochs = a.epochs;
  cfg.train.batch_size = a.batch;
  cfg.train.learning_rate = a.lr;
  cfg.train.validation_fraction = a.val_fraction;
  cfg.train.patience = a.patience;
  cfg.train.threads = a.threads == 0
                          ? static_cast<std::size_t>(default_thread_count())
                          : a.threads;
  cfg.train.max_per_class = a.max_per_class;
  cfg.hmm.candidate_counts = a.hmm_states;

  auto rows = run_grid(corpus, cfg);
  const std::string csv = report_to_csv(rows);
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + a.out);
    f << csv;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"lane-change maneuver prediction toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override it");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "simulate traffic and write a corpus");
  g->add_option("--out", gen.out, "corpus output path")->required();
  g->add_option("--seed", gen.seed, "master seed");
  g->add_option("--scenes", gen.scenes, "number of scenes")->check(CLI::PositiveNumber);
  g->add_option("--lanes", gen.lanes, "lanes per scene");
  g->add_option("--vehicles", gen.vehicles, "vehicles per scene");
  g->add_option("--duration", gen.duration, "scene length in seconds");
  g->add_option("--rate", gen.rate, "lane changes per vehicle per minute");
  g->add_option("--road-length", gen.road_length, "initial placement span in meters");
  g->add_option("--t-h", gen.t_h, "history horizons in seconds");
  g->add_option("--t-f", gen.t_f, "future horizons in seconds");
  g->add_option("--stride", gen.stride, "steps between extracted samples");
  g->add_option("--none-keep", gen.none_keep,
                "fraction of no-change samples kept at extraction");
  g->add_flag("--allow-any-horizon", gen.allow_any, "lift the horizon restriction");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model on one horizon setting");
  t->add_option("--corpus", tr.corpus, "corpus path")->required();
  t->add_option("--model", tr.model,
                "hmm | single_lstm | single_factor_srnn | lane_srnn");
  t->add_option("--out", tr.out, "checkpoint output path")->required();
  t->add_option("--t-h", tr.t_h, "history horizon in seconds");
  t->add_option("--t-f", tr.t_f, "future horizon in seconds");
  t->add_option("--seed", tr.seed, "master seed");
  t->add_option("--epochs", tr.epochs, "training epochs");
  t->add_option("--batch", tr.batch, "mini-batch size");
  t->add_option("--lr", tr.lr, "learning rate");
  t->add_option("--hidden", tr.hidden, "LSTM hidden size");
  t->add_option("--val-fraction", tr.val_fraction, "validation share of train");
  t->add_option("--patience", tr.patience, "early-stop patience (0 disables)");
  t->add_option("--dropout-keep", tr.dropout_keep, "recurrent dropout keep prob");
  t->add_option("--threads", tr.threads, "worker threads (0 = all cores)");
  t->add_option("--max-per-class", tr.max_per_class,
                "cap training samples per class (0 = all)");
  t->add_option("--hmm-states", tr.hmm_states, "candidate HMM state counts");
  t->add_flag("--allow-any-horizon", tr.allow_any, "lift the horizon restriction");
  t->add_flag("--no-layer-norm", tr.no_layer_norm, "disable layer normalization");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on the held-out split");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  e->add_option("--corpus", ev.corpus, "corpus path")->required();
  e->add_option("--out", ev.out, "write the row here instead of stdout");
  e->add_option("--seed", ev.seed, "seed used when the model was trained");
  e->add_option("--t-h", ev.t_h, "expected history horizon (checked)");
  e->add_option("--t-f", ev.t_f, "expected future horizon (checked)");

  GridArgs gr;
  auto* r = app.add_subcommand("grid", "train and score all models on all settings");
  r->add_option("--corpus", gr.corpus, "corpus path")->required();
  r->add_option("--out", gr.out, "write the report here instead of stdout");
  r->add_option("--seed", gr.seed, "master seed");
  r->add_option("--epochs", gr.epochs, "training epochs");
  r->add_option("--batch", gr.batch, "mini-batch size");
  r->add_option("--lr", gr.lr, "learning rate");
  r->add_option("--hidden", gr.hidden, "LSTM hidden size");
  r->add_option("--val-fraction", gr.val_fraction, "validation share of train");
  r->add_option("--patience", gr.patience, "early-stop patience (0 disables)");
  r->add_option("--threads", gr.threads, "worker threads (0 = all cores)");
  r->add_option("--max-per-class", gr.max_per_class,
                "cap training samples per class (0 = all)");
  r->add_option("--hmm-states", gr.hmm_states, "candidate HMM state counts");
  r->add_option("--models", gr.models, "models to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (r->parsed()) return cmd_grid(gr);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}

}  // namespace lcpred
