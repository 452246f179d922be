#include "lcpred/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lcpred/rng.hpp"

namespace lcpred {

namespace {

constexpr double kVehicleLength = 4.5;
constexpr double kMinGap = 2.0;
constexpr double kHeadwaySeconds = 1.5;
constexpr double kMaxAccel = 1.4;
constexpr double kComfortDecel = 2.0;
constexpr double kChangeDurationSeconds = 4.0;
constexpr double kChangeCooldownSeconds = 6.0;
constexpr double kChangeGateMeters = 20.0;
constexpr double kLateralOverlapFraction = 0.75;
constexpr double kMinPlacementSpacing = 10.0;

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  double w = std::fmod(a + pi, 2.0 * pi);
  if (w <= 0.0) w += 2.0 * pi;
  return w - pi;
}

// quintic smoothstep: C2, flat at both ends
double smooth5(double u) { return ((6.0 * u - 15.0) * u + 10.0) * u * u * u; }
double smooth5_d1(double u) { return ((30.0 * u - 60.0) * u + 30.0) * u * u; }
double smooth5_d2(double u) { return ((120.0 * u - 180.0) * u + 60.0) * u; }

double lane_center_y(int lane) { return -static_cast<double>(lane) * kLaneWidth; }

struct SimVehicle {
  double x = 0.0, y = 0.0;
  double v = 0.0, a = 0.0;
  int lane = 0;
  double desired_speed = 30.0;
  bool changing = false;
  double change_elapsed = 0.0;
  double y_from = 0.0, y_to = 0.0;
  int lane_to = 0;
  double cooldown = 0.0;
  double lat_v = 0.0, lat_a = 0.0;
};

// nearest vehicle ahead whose lateral center overlaps ours
int find_leader(const std::vector<SimVehicle>& vs, std::size_t i) {
  const double overlap = kLateralOverlapFraction * kLaneWidth;
  int best = -1;
  double best_dx = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < vs.size(); ++j) {
    if (j == i) continue;
    const double dx = vs[j].x - vs[i].x;
    if (dx <= 0.0 || dx >= best_dx) continue;
    if (std::abs(vs[j].y - vs[i].y) >= overlap) continue;
    best = static_cast<int>(j);
    best_dx = dx;
  }
  return best;
}

double idm_accel(const SimVehicle& me, const SimVehicle* leader) {
  const double free_term = std::pow(me.v / me.desired_speed, 4.0);
  if (!leader) return kMaxAccel * (1.0 - free_term);
  const double gap = leader->x - me.x - kVehicleLength;
  const double dv = me.v - leader->v;
  double s_star = kMinGap + me.v * kHeadwaySeconds +
                  me.v * dv / (2.0 * std::sqrt(kMaxAccel * kComfortDecel));
  s_star = std::max(s_star, kMinGap);
  const double ratio = s_star / std::max(gap, 0.1);
  return kMaxAccel * (1.0 - free_term - ratio * ratio);
}

bool lane_clear_for_change(const std::vector<SimVehicle>& vs, std::size_t i,
                           int target_lane) {
  const double target_y = lane_center_y(target_lane);
  const double overlap = kLateralOverlapFraction * kLaneWidth;
  for (std::size_t j = 0; j < vs.size(); ++j) {
    if (j == i) continue;
    if (std::abs(vs[j].y - target_y) >= overlap) continue;
    if (std::abs(vs[j].x - vs[i].x) < kChangeGateMeters) return false;
  }
  return true;
}

void append_double_token(std::string& line, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  line.append(buf, res.ptr);
}

struct LineCursor {
  const char* p;
  const char* end;
  std::size_t line_no;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + what);
  }

  void skip_spaces() {
    while (p != end && *p == ' ') ++p;
  }

  bool at_end() {
    skip_spaces();
    return p == end;
  }

  double next_double() {
    skip_spaces();
    double v = 0.0;
    auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc{}) fail("expected number");
    if (!std::isfinite(v)) fail("non-finite number");
    p = res.ptr;
    return v;
  }

  std::uint64_t next_u64() {
    skip_spaces();
    std::uint64_t v = 0;
    auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc{}) fail("expected integer");
    p = res.ptr;
    return v;
  }

  std::string_view next_word() {
    skip_spaces();
    const char* start = p;
    while (p != end && *p != ' ') ++p;
    if (p == start) fail("expected token");
    return {start, static_cast<std::size_t>(p - start)};
  }
};

void append_state_tokens(std::string& line, const VehicleState& s) {
  for (double v : {s.px, s.py, s.psi, s.vx, s.vy, s.psi_dot, s.n_left, s.n_right}) {
    line.push_back(' ');
    append_double_token(line, v);
  }
}

VehicleState read_state_tokens(LineCursor& cur) {
  VehicleState s;
  s.px = cur.next_double();
  s.py = cur.next_double();
  s.psi = cur.next_double();
  s.vx = cur.next_double();
  s.vy = cur.next_double();
  s.psi_dot = cur.next_double();
  s.n_left = cur.next_double();
  s.n_right = cur.next_double();
  return s;
}

bool state_is_zero(const VehicleState& s) {
  return s.px == 0.0 && s.py == 0.0 && s.psi == 0.0 && s.vx == 0.0 &&
         s.vy == 0.0 && s.psi_dot == 0.0 && s.n_left == 0.0 && s.n_right == 0.0;
}

}  // namespace

std::string_view maneuver_name(Maneuver m) {
  switch (m) {
    case Maneuver::kLeft: return "left";
    case Maneuver::kRight: return "right";
    case Maneuver::kNone: return "none";
  }
  throw std::invalid_argument("maneuver_name: bad value");
}

std::optional<Maneuver> maneuver_from_name(std::string_view name) {
  if (name == "left") return Maneuver::kLeft;
  if (name == "right") return Maneuver::kRight;
  if (name == "none") return Maneuver::kNone;
  return std::nullopt;
}

std::size_t seconds_to_steps(double seconds) {
  if (!(seconds > 0.0)) throw std::invalid_argument("seconds_to_steps: nonpositive");
  return static_cast<std::size_t>(std::ceil(seconds * kSampleRateHz));
}

HorizonConfig make_horizon(double history_seconds, double future_seconds) {
  HorizonConfig h;
  h.history_seconds = history_seconds;
  h.future_seconds = future_seconds;
  h.history_steps = seconds_to_steps(history_seconds);
  h.future_steps = seconds_to_steps(future_seconds);
  return h;
}

TrafficScene generate_scene(const SceneConfig& config) {
  if (config.num_lanes < 2) throw std::invalid_argument("generate_scene: num_lanes");
  if (config.duration_seconds < 20.0)
    throw std::invalid_argument("generate_scene: duration too short");
  if (config.num_vehicles < 1)
    throw std::invalid_argument("generate_scene: num_vehicles");
  if (config.lane_change_rate_per_vehicle_per_minute < 0.0)
    throw std::invalid_argument("generate_scene: negative change rate");
  if (static_cast<double>(config.num_vehicles) * kMinPlacementSpacing >
      static_cast<double>(config.num_lanes) * config.road_length_m)
    throw std::runtime_error("generate_scene: infeasible vehicle density");

  Rng rng(config.seed);
  const int n = config.num_vehicles;
  std::vector<SimVehicle> vs(static_cast<std::size_t>(n));
  const int per_lane = (n + config.num_lanes - 1) / config.num_lanes;
  const double spacing = config.road_length_m / static_cast<double>(per_lane);
  for (int i = 0; i < n; ++i) {
    SimVehicle& v = vs[static_cast<std::size_t>(i)];
    v.lane = i % config.num_lanes;
    const int slot = i / config.num_lanes;
    v.desired_speed = rng.uniform(25.0, 35.0);
    v.x = slot * spacing + rng.uniform(0.0, 0.3 * spacing);
    v.y = lane_center_y(v.lane);
    v.v = v.desired_speed + rng.uniform(-3.0, 0.0);
  }

  const std::size_t num_steps = seconds_to_steps(config.duration_seconds);
  const double dt = kDtSeconds;
  const double change_prob =
      config.lane_change_rate_per_vehicle_per_minute * dt / 60.0;

  TrafficScene scene;
  scene.num_lanes = config.num_lanes;
  scene.tracks.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    scene.tracks[static_cast<std::size_t>(i)].id = static_cast<std::uint64_t>(i);
    scene.tracks[static_cast<std::size_t>(i)].points.reserve(num_steps);
  }

  for (std::size_t step = 0; step < num_steps; ++step) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const SimVehicle& v = vs[i];
      TrackPoint pt;
      pt.lane = v.lane;
      pt.state.px = v.x;
      pt.state.py = v.y;
      pt.state.vx = v.v;
      pt.state.vy = v.lat_v;
      pt.state.psi = std::atan2(v.lat_v, v.v);
      const double speed_sq = v.v * v.v + v.lat_v * v.lat_v;
      pt.state.psi_dot =
          speed_sq > 1e-12 ? (v.lat_a * v.v - v.lat_v * v.a) / speed_sq : 0.0;
      pt.state.n_left = static_cast<double>(v.lane);
      pt.state.n_right = static_cast<double>(config.num_lanes - 1 - v.lane);
      scene.tracks[i].points.push_back(pt);
    }
    if (step + 1 == num_steps) break;

    for (std::size_t i = 0; i < vs.size(); ++i) {
      const int leader = find_leader(vs, i);
      vs[i].a = idm_accel(vs[i], leader >= 0 ? &vs[static_cast<std::size_t>(leader)]
                                             : nullptr);
    }

    for (std::size_t i = 0; i < vs.size(); ++i) {
      SimVehicle& v = vs[i];
      if (v.changing || v.cooldown > 0.0 || change_prob <= 0.0) continue;
      if (!rng.bernoulli(change_prob)) continue;
      const bool can_left = v.lane > 0;
      const bool can_right = v.lane < config.num_lanes - 1;
      if (!can_left && !can_right) continue;
      int target = can_left && can_right ? (rng.bernoulli(0.5) ? v.lane - 1 : v.lane + 1)
                   : can_left            ? v.lane - 1
                                         : v.lane + 1;
      if (!lane_clear_for_change(vs, i, target)) continue;
      v.changing = true;
      v.change_elapsed = 0.0;
      v.y_from = v.y;
      v.y_to = lane_center_y(target);
      v.lane_to = target;
    }

    for (SimVehicle& v : vs) {
      v.v = std::max(0.0, v.v + v.a * dt);
      v.x += v.v * dt;
      if (v.changing) {
        v.change_elapsed += dt;
        const double u = std::min(1.0, v.change_elapsed / kChangeDurationSeconds);
        const double dy = v.y_to - v.y_from;
        v.y = v.y_from + dy * smooth5(u);
        v.lat_v = dy * smooth5_d1(u) / kChangeDurationSeconds;
        v.lat_a = dy * smooth5_d2(u) /
                  (kChangeDurationSeconds * kChangeDurationSeconds);
        v.lane = u >= 0.5 ? v.lane_to : v.lane;
        if (u >= 1.0) {
          v.changing = false;
          v.y = v.y_to;
          v.lat_v = 0.0;
          v.lat_a = 0.0;
          v.lane = v.lane_to;
          v.cooldown = kChangeCooldownSeconds;
        }
      } else {
        v.lat_v = 0.0;
        v.lat_a = 0.0;
        if (v.cooldown > 0.0) v.cooldown -= dt;
      }
    }

    // hard no-collision projection, processed front to back
    std::vector<std::size_t> order(vs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return vs[a].x > vs[b].x; });
    for (std::size_t i : order) {
      const int leader = find_leader(vs, i);
      if (leader < 0) continue;
      const SimVehicle& lead = vs[static_cast<std::size_t>(leader)];
      const double limit = lead.x - kVehicleLength - kMinGap - 0.01;
      if (vs[i].x > limit) {
        vs[i].x = limit;
        vs[i].v = std::min(vs[i].v, lead.v);
      }
    }
  }
  return scene;
}

std::array<NeighborObservation, 6> extract_neighborhood(const TrafficScene& scene,
                                                        std::size_t target_index,
                                                        std::size_t t) {
  if (target_index >= scene.tracks.size())
    throw std::invalid_argument("extract_neighborhood: target index");
  const VehicleTrack& target = scene.tracks[target_index];
  if (t >= target.points.size())
    throw std::invalid_argument("extract_neighborhood: time out of range");

  const int target_lane = target.points[t].lane;
  const double target_x = target.points[t].state.px;

  std::array<NeighborObservation, 6> out{};
  std::array<double, 6> best_dist;
  best_dist.fill(std::numeric_limits<double>::infinity());

  for (std::size_t j = 0; j < scene.tracks.size(); ++j) {
    if (j == target_index) continue;
    const VehicleTrack& other = scene.tracks[j];
    if (t >= other.points.size()) continue;
    const TrackPoint& pt = other.points[t];
    const int rel = pt.lane - target_lane;
    if (rel < -1 || rel > 1) continue;
    const double dx = pt.state.px - target_x;
    const double dist = std::abs(dx);
    if (dist > kNeighborRangeMeters) continue;
    // slots: (left, same, right) x (ahead, behind)
    const std::size_t slot =
        static_cast<std::size_t>(rel + 1) * 2 + (dx > 0.0 ? 0 : 1);
    if (dist < best_dist[slot]) {
      best_dist[slot] = dist;
      out[slot].state = pt.state;
      out[slot].present = 1.0;
    }
  }
  return out;
}

std::optional<Maneuver> label_maneuver(const VehicleTrack& track, std::size_t t,
                                       const HorizonConfig& horizon) {
  const std::size_t center = t + horizon.future_steps;
  if (center < horizon.label_halfwidth_steps) return std::nullopt;
  const std::size_t lo = center - horizon.label_halfwidth_steps;
  const std::size_t hi = center + horizon.label_halfwidth_steps;
  if (hi >= track.points.size()) return std::nullopt;
  const int before = track.points[lo].lane;
  const int after = track.points[hi].lane;
  if (after < before) return Maneuver::kLeft;
  if (after > before) return Maneuver::kRight;
  return Maneuver::kNone;
}

void frame_normalize(Sample& sample) {
  if (sample.target_history.empty())
    throw std::invalid_argument("frame_normalize: empty history");
  const double px0 = sample.target_history[0].px;
  const double py0 = sample.target_history[0].py;
  const double psi0 = sample.target_history[0].psi;
  const double c = std::cos(psi0), s = std::sin(psi0);

  auto transform = [&](VehicleState& v) {
    const double tx = v.px - px0, ty = v.py - py0;
    v.px = c * tx + s * ty;
    v.py = -s * tx + c * ty;
    const double vx = v.vx, vy = v.vy;
    v.vx = c * vx + s * vy;
    v.vy = -s * vx + c * vy;
    v.psi = wrap_angle(v.psi - psi0);
  };

  for (VehicleState& v : sample.target_history) transform(v);
  for (auto& hist : sample.neighbor_histories)
    for (NeighborObservation& o : hist)
      if (o.present != 0.0) transform(o.state);
}

std::vector<Sample> extract_samples(const TrafficScene& scene,
                                    const HorizonConfig& horizon,
                                    const ExtractionConfig& config) {
  if (config.stride == 0) throw std::invalid_argument("extract_samples: stride");
  if (config.none_keep_fraction < 0.0 || config.none_keep_fraction > 1.0)
    throw std::invalid_argument("extract_samples: keep fraction");
  Rng rng(config.seed);
  std::vector<Sample> out;
  const std::size_t h = horizon.history_steps;

  for (std::size_t ti = 0; ti < scene.tracks.size(); ++ti) {
    const VehicleTrack& track = scene.tracks[ti];
    if (track.points.size() < h) continue;
    for (std::size_t t = h - 1; t < track.points.size(); t += config.stride) {
      auto label = label_maneuver(track, t, horizon);
      if (!label) continue;
      if (*label == Maneuver::kNone && config.none_keep_fraction < 1.0 &&
          !rng.bernoulli(config.none_keep_fraction))
        continue;
      Sample s;
      s.label = *label;
      s.horizon = horizon;
      s.source_track_id = track.id;
      s.source_time = t;
      s.target_history.reserve(h);
      for (auto& hist : s.neighbor_histories) hist.reserve(h);
      for (std::size_t k = t + 1 - h; k <= t; ++k) {
        s.target_history.push_back(track.points[k].state);
        auto nb = extract_neighborhood(scene, ti, k);
        for (std::size_t slot = 0; slot < 6; ++slot)
          s.neighbor_histories[slot].push_back(nb[slot]);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

Standardizer fit_standardizer(std::span<const Sample> training_samples) {
  std::array<double, 8> mean{}, m2{};
  std::uint64_t count = 0;

  auto accumulate = [&](const VehicleState& v) {
    const double f[8] = {v.px, v.py, v.psi, v.vx, v.vy, v.psi_dot, v.n_left, v.n_right};
    count += 1;
    for (int d = 0; d < 8; ++d) {
      const double delta = f[d] - mean[d];
      mean[d] += delta / static_cast<double>(count);
      m2[d] += delta * (f[d] - mean[d]);
    }
  };

  for (const Sample& s : training_samples) {
    for (const VehicleState& v : s.target_history) accumulate(v);
    for (const auto& hist : s.neighbor_histories)
      for (const NeighborObservation& o : hist)
        if (o.present != 0.0) accumulate(o.state);
  }
  if (count == 0) throw std::runtime_error("fit_standardizer: no present states");

  Standardizer st;
  for (int d = 0; d < 8; ++d) {
    st.mean[d] = mean[d];
    st.scale[d] = std::max(std::sqrt(m2[d] / static_cast<double>(count)), 1e-8);
  }
  return st;
}

void apply_standardizer(const Standardizer& st, Sample& sample) {
  auto transform = [&](VehicleState& v) {
    double f[8] = {v.px, v.py, v.psi, v.vx, v.vy, v.psi_dot, v.n_left, v.n_right};
    for (int d = 0; d < 8; ++d) f[d] = (f[d] - st.mean[d]) / st.scale[d];
    v = {f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7]};
  };
  for (VehicleState& v : sample.target_history) transform(v);
  for (auto& hist : sample.neighbor_histories)
    for (NeighborObservation& o : hist)
      if (o.present != 0.0) transform(o.state);
}

std::vector<Sample> balance_classes(std::span<const Sample> samples,
                                    std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);

  std::size_t min_count = std::numeric_limits<std::size_t>::max();
  for (const auto& cls : by_class) min_count = std::min(min_count, cls.size());
  if (min_count == 0) throw std::runtime_error("balance_classes: empty class");

  Rng rng(seed);
  std::vector<std::size_t> keep;
  keep.reserve(min_count * kNumClasses);
  for (auto& cls : by_class) {
    rng.shuffle(cls);
    keep.insert(keep.end(), cls.begin(), cls.begin() + static_cast<long>(min_count));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Sample> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(samples[i]);
  return out;
}

SplitResult split_train_eval(std::span<const Sample> samples, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split_train_eval: empty");
  std::map<std::uint64_t, std::vector<std::size_t>> by_track;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_track[samples[i].source_track_id].push_back(i);
  if (by_track.size() < 2)
    throw std::runtime_error("split_train_eval: needs at least 2 tracks");

  std::vector<std::pair<std::uint64_t, const std::vector<std::size_t>*>> groups;
  groups.reserve(by_track.size());
  for (const auto& [id, idx] : by_track) groups.emplace_back(id, &idx);
  Rng rng(seed);
  rng.shuffle(groups);
  std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    return a.second->size() > b.second->size();
  });

  const double total = static_cast<double>(samples.size());
  std::vector<std::size_t> train_idx, eval_idx;
  for (const auto& [id, idx] : groups) {
    const double train_deficit =
        0.6 * total - static_cast<double>(train_idx.size());
    const double eval_deficit = 0.4 * total - static_cast<double>(eval_idx.size());
    auto& side = train_deficit >= eval_deficit ? train_idx : eval_idx;
    side.insert(side.end(), idx->begin(), idx->end());
  }

  const double train_frac = static_cast<double>(train_idx.size()) / total;
  if (std::abs(train_frac - 0.6) > 0.02 + 1e-12)
    throw std::runtime_error("split_train_eval: proportions unattainable");

  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  SplitResult res;
  res.train.reserve(train_idx.size());
  res.eval.reserve(eval_idx.size());
  for (std::size_t i : train_idx) res.train.push_back(samples[i]);
  for (std::size_t i : eval_idx) res.eval.push_back(samples[i]);
  return res;
}

void write_corpus(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_corpus: cannot open " + path.string());
  std::string line;
  for (const Sample& s : samples) {
    line.clear();
    append_double_token(line, s.horizon.history_seconds);
    line.push_back(' ');
    append_double_token(line, s.horizon.future_seconds);
    line.push_back(' ');
    line.append(maneuver_name(s.label));
    line.push_back(' ');
    line.append(std::to_string(s.source_track_id));
    line.push_back(' ');
    line.append(std::to_string(s.source_time));
    line.push_back(' ');
    line.append(std::to_string(s.target_history.size()));
    for (const VehicleState& v : s.target_history) append_state_tokens(line, v);
    for (const auto& hist : s.neighbor_histories) {
      if (hist.size() != s.target_history.size())
        throw std::runtime_error("write_corpus: ragged sample");
      for (const NeighborObservation& o : hist) {
        line.push_back(' ');
        line.push_back(o.present != 0.0 ? '1' : '0');
      }
      for (const NeighborObservation& o : hist) append_state_tokens(line, o.state);
    }
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  if (!out) throw std::runtime_error("write_corpus: write failed");
}

std::vector<Sample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_corpus: cannot open " + path.string());
  std::vector<Sample> out;
  std::string buf;
  std::size_t line_no = 0;
  while (std::getline(in, buf)) {
    line_no += 1;
    if (buf.empty()) continue;
    LineCursor cur{buf.data(), buf.data() + buf.size(), line_no};

    Sample s;
    const double th = cur.next_double();
    const double tf = cur.next_double();
    const auto label = maneuver_from_name(cur.next_word());
    if (!label) cur.fail("unknown label");
    s.label = *label;
    s.source_track_id = cur.next_u64();
    s.source_time = cur.next_u64();
    const std::uint64_t h = cur.next_u64();
    s.horizon = make_horizon(th, tf);
    if (h != s.horizon.history_steps) cur.fail("history length mismatch");

    s.target_history.resize(h);
    for (auto& v : s.target_history) v = read_state_tokens(cur);
    for (auto& hist : s.neighbor_histories) {
      hist.resize(h);
      for (auto& o : hist) {
        const double ind = cur.next_double();
        if (ind != 0.0 && ind != 1.0) cur.fail("indicator not 0/1");
        o.present = ind;
      }
      for (auto& o : hist) {
        o.state = read_state_tokens(cur);
        if (o.present == 0.0 && !state_is_zero(o.state))
          cur.fail("nonzero state with zero indicator");
      }
    }
    if (!cur.at_end()) cur.fail("trailing data");
    out.push_back(std::move(s));
  }
  return out;
}

void append_state_features(const VehicleState& s, Vec& out) {
  out.insert(out.end(), {s.px, s.py, s.psi, s.vx, s.vy, s.psi_dot, s.n_left, s.n_right});
}

void append_neighbor_features(const NeighborObservation& o, Vec& out) {
  append_state_features(o.state, out);
  out.push_back(o.present);
}

std::vector<Vec> concat_features(const Sample& sample) {
  const std::size_t h = sample.target_history.size();
  for (const auto& hist : sample.neighbor_histories)
    if (hist.size() != h)
      throw std::invalid_argument("concat_features: ragged histories");
  std::vector<Vec> out;
  out.reserve(h);
  for (std::size_t k = 0; k < h; ++k) {
    Vec f;
    f.reserve(kConcatDim);
    for (const auto& hist : sample.neighbor_histories)
      append_neighbor_features(hist[k], f);
    append_state_features(sample.target_history[k], f);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace lcpred
