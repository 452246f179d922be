#include "lcpred/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lcpred {

namespace {

using json = nlohmann::json;

constexpr const char* kFormatTag = "lcpred-checkpoint";
constexpr int kFormatVersion = 1;

json vec_to_json(const Vec& v) {
  if (!all_finite(v)) throw std::runtime_error("checkpoint: non-finite parameter");
  return json(v);
}

Vec vec_from_json(const json& j, std::size_t expected, const char* what) {
  if (!j.is_array() || j.size() != expected)
    throw std::runtime_error(std::string("checkpoint: bad size for ") + what);
  Vec v = j.get<Vec>();
  if (!all_finite(v))
    throw std::runtime_error(std::string("checkpoint: non-finite ") + what);
  return v;
}

json mat_to_json(const Mat& m) { return vec_to_json(m.a); }

Mat mat_from_json(const json& j, std::size_t rows, std::size_t cols,
                  const char* what) {
  Mat m(rows, cols);
  m.a = vec_from_json(j, rows * cols, what);
  return m;
}

json cell_to_json(const LstmCell& c) {
  json j;
  j["input_size"] = c.input_size;
  j["hidden_size"] = c.hidden_size;
  j["use_layer_norm"] = c.use_layer_norm;
  j["wx_i"] = mat_to_json(c.wx_i);
  j["wx_f"] = mat_to_json(c.wx_f);
  j["wx_g"] = mat_to_json(c.wx_g);
  j["wx_o"] = mat_to_json(c.wx_o);
  j["wh_i"] = mat_to_json(c.wh_i);
  j["wh_f"] = mat_to_json(c.wh_f);
  j["wh_g"] = mat_to_json(c.wh_g);
  j["wh_o"] = mat_to_json(c.wh_o);
  j["wc_i"] = mat_to_json(c.wc_i);
  j["wc_f"] = mat_to_json(c.wc_f);
  j["wc_o"] = mat_to_json(c.wc_o);
  j["b_i"] = vec_to_json(c.b_i);
  j["b_f"] = vec_to_json(c.b_f);
  j["b_g"] = vec_to_json(c.b_g);
  j["b_o"] = vec_to_json(c.b_o);
  if (c.use_layer_norm) {
    json blocks = json::array();
    for (const auto& blk : c.ln_blocks)
      blocks.push_back({{"gain", vec_to_json(blk.gain)}, {"bias", vec_to_json(blk.bias)}});
    j["ln_blocks"] = std::move(blocks);
    j["ln_cell"] = {{"gain", vec_to_json(c.ln_cell.gain)},
                    {"bias", vec_to_json(c.ln_cell.bias)}};
  }
  return j;
}

LstmCell cell_from_json(const json& j) {
  const auto input = j.at("input_size").get<std::size_t>();
  const auto hidden = j.at("hidden_size").get<std::size_t>();
  const bool ln = j.at("use_layer_norm").get<bool>();
  LstmCell c(input, hidden, ln);
  c.wx_i = mat_from_json(j.at("wx_i"), hidden, input, "wx_i");
  c.wx_f = mat_from_json(j.at("wx_f"), hidden, input, "wx_f");
  c.wx_g = mat_from_json(j.at("wx_g"), hidden, input, "wx_g");
  c.wx_o = mat_from_json(j.at("wx_o"), hidden, input, "wx_o");
  c.wh_i = mat_from_json(j.at("wh_i"), hidden, hidden, "wh_i");
  c.wh_f = mat_from_json(j.at("wh_f"), hidden, hidden, "wh_f");
  c.wh_g = mat_from_json(j.at("wh_g"), hidden, hidden, "wh_g");
  c.wh_o = mat_from_json(j.at("wh_o"), hidden, hidden, "wh_o");
  c.wc_i = mat_from_json(j.at("wc_i"), hidden, hidden, "wc_i");
  c.wc_f = mat_from_json(j.at("wc_f"), hidden, hidden, "wc_f");
  c.wc_o = mat_from_json(j.at("wc_o"), hidden, hidden, "wc_o");
  c.b_i = vec_from_json(j.at("b_i"), hidden, "b_i");
  c.b_f = vec_from_json(j.at("b_f"), hidden, "b_f");
  c.b_g = vec_from_json(j.at("b_g"), hidden, "b_g");
  c.b_o = vec_from_json(j.at("b_o"), hidden, "b_o");
  if (ln) {
    const json& blocks = j.at("ln_blocks");
    if (!blocks.is_array() || blocks.size() != c.ln_blocks.size())
      throw std::runtime_error("checkpoint: bad ln_blocks");
    for (std::size_t i = 0; i < c.ln_blocks.size(); ++i) {
      c.ln_blocks[i].gain = vec_from_json(blocks[i].at("gain"), hidden, "ln gain");
      c.ln_blocks[i].bias = vec_from_json(blocks[i].at("bias"), hidden, "ln bias");
    }
    c.ln_cell.gain = vec_from_json(j.at("ln_cell").at("gain"), hidden, "ln gain");
    c.ln_cell.bias = vec_from_json(j.at("ln_cell").at("bias"), hidden, "ln bias");
  }
  return c;
}

json head_to_json(const LinearHead& h) {
  return {{"w", mat_to_json(h.w)}, {"b", vec_to_json(h.b)}};
}

LinearHead head_from_json(const json& j, std::size_t hidden) {
  LinearHead h(kNumClasses, hidden);
  h.w = mat_from_json(j.at("w"), kNumClasses, hidden, "head w");
  h.b = vec_from_json(j.at("b"), kNumClasses, "head b");
  return h;
}

json standardizer_to_json(const Standardizer& s) {
  return {{"mean", json(std::vector<double>(s.mean.begin(), s.mean.end()))},
          {"scale", json(std::vector<double>(s.scale.begin(), s.scale.end()))}};
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer s;
  const Vec mean = vec_from_json(j.at("mean"), 8, "standardizer mean");
  const Vec scale = vec_from_json(j.at("scale"), 8, "standardizer scale");
  std::copy(mean.begin(), mean.end(), s.mean.begin());
  std::copy(scale.begin(), scale.end(), s.scale.begin());
  return s;
}

json horizon_to_json(const HorizonConfig& h) {
  return {{"history_seconds", h.history_seconds},
          {"future_seconds", h.future_seconds}};
}

HorizonConfig horizon_from_json(const json& j) {
  const double th = j.at("history_seconds").get<double>();
  const double tf = j.at("future_seconds").get<double>();
  if (th <= 0.0 || tf <= 0.0) return {};
  return make_horizon(th, tf);
}

json hmm_to_json(const GaussianHmm& h) {
  json j;
  j["num_states"] = h.num_states;
  j["obs_dim"] = h.obs_dim;
  j["initial_log_probs"] = vec_to_json(h.initial_log_probs);
  j["transition_log_probs"] = mat_to_json(h.transition_log_probs);
  json means = json::array(), vars = json::array();
  for (const Vec& m : h.emission_means) means.push_back(vec_to_json(m));
  for (const Vec& v : h.emission_variances) vars.push_back(vec_to_json(v));
  j["emission_means"] = std::move(means);
  j["emission_variances"] = std::move(vars);
  return j;
}

GaussianHmm hmm_from_json(const json& j) {
  GaussianHmm h;
  h.num_states = j.at("num_states").get<std::size_t>();
  h.obs_dim = j.at("obs_dim").get<std::size_t>();
  h.initial_log_probs =
      vec_from_json(j.at("initial_log_probs"), h.num_states, "initial_log_probs");
  h.transition_log_probs = mat_from_json(j.at("transition_log_probs"), h.num_states,
                                         h.num_states, "transition_log_probs");
  const json& means = j.at("emission_means");
  const json& vars = j.at("emission_variances");
  if (!means.is_array() || means.size() != h.num_states || !vars.is_array() ||
      vars.size() != h.num_states)
    throw std::runtime_error("checkpoint: bad emission arrays");
  for (std::size_t s = 0; s < h.num_states; ++s) {
    h.emission_means.push_back(vec_from_json(means[s], h.obs_dim, "emission mean"));
    h.emission_variances.push_back(
        vec_from_json(vars[s], h.obs_dim, "emission variance"));
  }
  return h;
}

json make_envelope(const std::string& kind) {
  json j;
  j["format"] = kFormatTag;
  j["version"] = kFormatVersion;
  j["kind"] = kind;
  return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const std::string text = j.dump();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.put('\n');
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: parse error in " + path.string() + ": " +
                             e.what());
  }
  if (j.value("format", "") != kFormatTag)
    throw std::runtime_error("checkpoint: unrecognized format tag");
  if (j.value("version", -1) != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const LaneSrnnModel& model) {
  json j = make_envelope("lane_srnn");
  j["hidden_size"] = model.hidden_size;
  j["use_layer_norm"] = model.use_layer_norm;
  j["init_seed"] = model.init_seed;
  j["horizon"] = horizon_to_json(model.horizon);
  j["standardizer"] = standardizer_to_json(model.standardizer);
  j["lstm_left"] = cell_to_json(model.lstm_left);
  j["lstm_same"] = cell_to_json(model.lstm_same);
  j["lstm_right"] = cell_to_json(model.lstm_right);
  j["lstm_node"] = cell_to_json(model.lstm_node);
  j["head"] = head_to_json(model.head);
  write_json(path, j);
}

void save_checkpoint(const std::filesystem::path& path, const SingleLstmModel& model) {
  json j = make_envelope("single_lstm");
  j["hidden_size"] = model.hidden_size;
  j["use_layer_norm"] = model.use_layer_norm;
  j["init_seed"] = model.init_seed;
  j["horizon"] = horizon_to_json(model.horizon);
  j["standardizer"] = standardizer_to_json(model.standardizer);
  j["lstm"] = cell_to_json(model.lstm);
  j["head"] = head_to_json(model.head);
  write_json(path, j);
}

void save_checkpoint(const std::filesystem::path& path,
                     const SingleFactorSrnnModel& model) {
  json j = make_envelope("single_factor_srnn");
  j["hidden_size"] = model.hidden_size;
  j["use_layer_norm"] = model.use_layer_norm;
  j["init_seed"] = model.init_seed;
  j["horizon"] = horizon_to_json(model.horizon);
  j["standardizer"] = standardizer_to_json(model.standardizer);
  j["lstm_factor"] = cell_to_json(model.lstm_factor);
  j["lstm_node"] = cell_to_json(model.lstm_node);
  j["head"] = head_to_json(model.head);
  write_json(path, j);
}

void save_checkpoint(const std::filesystem::path& path, const HmmClassifier& model) {
  json j = make_envelope("hmm");
  j["horizon"] = horizon_to_json(model.horizon);
  j["standardizer"] = standardizer_to_json(model.standardizer);
  json per_class = json::array();
  for (const GaussianHmm& h : model.per_class) per_class.push_back(hmm_to_json(h));
  j["per_class"] = std::move(per_class);
  write_json(path, j);
}

AnyModel load_checkpoint(const std::filesystem::path& path) {
  const json j = read_json(path);
  const std::string kind = j.at("kind").get<std::string>();

  if (kind == "hmm") {
    HmmClassifier clf;
    const json& per_class = j.at("per_class");
    if (!per_class.is_array() || per_class.size() != kNumClasses)
      throw std::runtime_error("checkpoint: bad per_class array");
    for (std::size_t c = 0; c < kNumClasses; ++c)
      clf.per_class[c] = hmm_from_json(per_class[c]);
    clf.standardizer = standardizer_from_json(j.at("standardizer"));
    clf.horizon = horizon_from_json(j.at("horizon"));
    return clf;
  }

  const auto hidden = j.at("hidden_size").get<std::size_t>();
  const bool ln = j.at("use_layer_norm").get<bool>();

  if (kind == "lane_srnn") {
    LaneSrnnModel m;
    m.hidden_size = hidden;
    m.use_layer_norm = ln;
    m.init_seed = j.value("init_seed", 0ull);
    m.lstm_left = cell_from_json(j.at("lstm_left"));
    m.lstm_same = cell_from_json(j.at("lstm_same"));
    m.lstm_right = cell_from_json(j.at("lstm_right"));
    m.lstm_node = cell_from_json(j.at("lstm_node"));
    m.head = head_from_json(j.at("head"), hidden);
    m.standardizer = standardizer_from_json(j.at("standardizer"));
    m.horizon = horizon_from_json(j.at("horizon"));
    return m;
  }
  if (kind == "single_lstm") {
    SingleLstmModel m;
    m.hidden_size = hidden;
    m.use_layer_norm = ln;
    m.init_seed = j.value("init_seed", 0ull);
    m.lstm = cell_from_json(j.at("lstm"));
    m.head = head_from_json(j.at("head"), hidden);
    m.standardizer = standardizer_from_json(j.at("standardizer"));
    m.horizon = horizon_from_json(j.at("horizon"));
    return m;
  }
  if (kind == "single_factor_srnn") {
    SingleFactorSrnnModel m;
    m.hidden_size = hidden;
    m.use_layer_norm = ln;
    m.init_seed = j.value("init_seed", 0ull);
    m.lstm_factor = cell_from_json(j.at("lstm_factor"));
    m.lstm_node = cell_from_json(j.at("lstm_node"));
    m.head = head_from_json(j.at("head"), hidden);
    m.standardizer = standardizer_from_json(j.at("standardizer"));
    m.horizon = horizon_from_json(j.at("horizon"));
    return m;
  }
  throw std::runtime_error("checkpoint: unknown kind " + kind);
}

std::string checkpoint_kind(const AnyModel& model) {
  struct Visitor {
    std::string operator()(const LaneSrnnModel&) const { return "lane_srnn"; }
    std::string operator()(const SingleLstmModel&) const { return "single_lstm"; }
    std::string operator()(const SingleFactorSrnnModel&) const {
      return "single_factor_srnn";
    }
    std::string operator()(const HmmClassifier&) const { return "hmm"; }
  };
  return std::visit(Visitor{}, model);
}

Maneuver predict_maneuver(const AnyModel& model, const Sample& sample) {
  return std::visit([&](const auto& m) { return predict_maneuver(m, sample); }, model);
}

const Standardizer& model_standardizer(const AnyModel& model) {
  return std::visit([](const auto& m) -> const Standardizer& { return m.standardizer; },
                    model);
}

const HorizonConfig& model_horizon(const AnyModel& model) {
  return std::visit([](const auto& m) -> const HorizonConfig& { return m.horizon; },
                    model);
}

}  // namespace lcpred
