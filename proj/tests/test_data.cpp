#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>

#include "lcpred/data.hpp"
#include "lcpred/rng.hpp"
#include "test_util.hpp"

using namespace lcpred;
using namespace lcpred::testutil;

namespace {

TrackPoint make_point(int lane, double px, double py, double psi = 0.0) {
  TrackPoint p;
  p.lane = lane;
  p.state.px = px;
  p.state.py = py;
  p.state.psi = psi;
  return p;
}

// one-step scene: a target plus neighbors at fixed offsets
TrafficScene tiny_scene(std::initializer_list<TrackPoint> points) {
  TrafficScene scene;
  scene.num_lanes = 3;
  std::uint64_t id = 0;
  for (const TrackPoint& p : points) {
    VehicleTrack t;
    t.id = id++;
    t.points.push_back(p);
    scene.tracks.push_back(std::move(t));
  }
  return scene;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

bool states_equal(const VehicleState& a, const VehicleState& b) {
  return a.px == b.px && a.py == b.py && a.psi == b.psi && a.vx == b.vx &&
         a.vy == b.vy && a.psi_dot == b.psi_dot && a.n_left == b.n_left &&
         a.n_right == b.n_right;
}

bool samples_equal(const Sample& a, const Sample& b) {
  if (a.label != b.label || a.source_track_id != b.source_track_id ||
      a.source_time != b.source_time)
    return false;
  if (a.horizon.history_seconds != b.horizon.history_seconds ||
      a.horizon.future_seconds != b.horizon.future_seconds)
    return false;
  if (a.target_history.size() != b.target_history.size()) return false;
  for (std::size_t t = 0; t < a.target_history.size(); ++t)
    if (!states_equal(a.target_history[t], b.target_history[t])) return false;
  for (std::size_t slot = 0; slot < 6; ++slot) {
    if (a.neighbor_histories[slot].size() != b.neighbor_histories[slot].size())
      return false;
    for (std::size_t t = 0; t < a.neighbor_histories[slot].size(); ++t) {
      const auto& oa = a.neighbor_histories[slot][t];
      const auto& ob = b.neighbor_histories[slot][t];
      if (oa.present != ob.present || !states_equal(oa.state, ob.state)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("seconds_to_steps published counts") {
  CHECK(seconds_to_steps(1.0) == 13);
  CHECK(seconds_to_steps(3.0) == 38);
  CHECK(seconds_to_steps(5.0) == 63);
  CHECK(seconds_to_steps(2.0) == 25);
  CHECK(seconds_to_steps(0.5) == 7);
  CHECK_THROWS(seconds_to_steps(0.0));
}

TEST_CASE("make_horizon derived fields") {
  const HorizonConfig h = make_horizon(3.0, 2.0);
  CHECK(h.history_steps == 38);
  CHECK(h.future_steps == 25);
  CHECK(h.label_halfwidth_steps == 7);
}

TEST_CASE("frame_normalize hand case") {
  Sample s;
  s.horizon = make_horizon(1.0, 1.0);
  VehicleState target;
  target.px = 100.0;
  target.py = 50.0;
  target.psi = std::numbers::pi / 2.0;
  target.vx = 0.0;
  target.vy = 20.0;  // moving along its heading
  s.target_history.push_back(target);
  for (auto& hist : s.neighbor_histories) hist.resize(1);
  auto& nb = s.neighbor_histories[2][0];
  nb.present = 1.0;
  nb.state = target;
  nb.state.py = 60.0;

  frame_normalize(s);
  CHECK(std::fabs(s.target_history[0].px) <= 1e-12);
  CHECK(std::fabs(s.target_history[0].py) <= 1e-12);
  CHECK(std::fabs(s.target_history[0].psi) <= 1e-12);
  CHECK(std::fabs(s.target_history[0].vx - 20.0) <= 1e-9);
  CHECK(std::fabs(s.target_history[0].vy) <= 1e-9);

  const VehicleState& n = s.neighbor_histories[2][0].state;
  CHECK(std::fabs(n.px - 10.0) <= 1e-9);
  CHECK(std::fabs(n.py) <= 1e-9);
  CHECK(std::fabs(n.psi) <= 1e-12);

  // absent slots untouched
  CHECK(s.neighbor_histories[0][0].present == 0.0);
  CHECK(s.neighbor_histories[0][0].state.px == 0.0);
}

TEST_CASE("frame_normalize is rigid and idempotent") {
  Rng rng(17);
  Sample s = random_sample(5, rng, 1.0);
  for (auto& st : s.target_history) {
    st.px += 50.0;
    st.py -= 20.0;
  }

  std::vector<double> dists;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t slot = 0; slot < 6; ++slot) {
      const auto& o = s.neighbor_histories[slot][t];
      dists.push_back(std::hypot(o.state.px - s.target_history[t].px,
                                 o.state.py - s.target_history[t].py));
    }

  frame_normalize(s);
  std::size_t k = 0;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t slot = 0; slot < 6; ++slot) {
      const auto& o = s.neighbor_histories[slot][t];
      const double d = std::hypot(o.state.px - s.target_history[t].px,
                                  o.state.py - s.target_history[t].py);
      CHECK(std::fabs(d - dists[k++]) <= 1e-9);
    }

  Sample again = s;
  frame_normalize(again);
  CHECK(std::fabs(again.target_history[0].px) <= 1e-12);
  CHECK(std::fabs(again.target_history[0].psi) <= 1e-12);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(std::fabs(again.target_history[t].px - s.target_history[t].px) <= 1e-12);
    CHECK(std::fabs(again.target_history[t].py - s.target_history[t].py) <= 1e-12);
  }
}

TEST_CASE("generator honors rate zero and track lengths") {
  SceneConfig cfg;
  cfg.num_lanes = 3;
  cfg.num_vehicles = 9;
  cfg.duration_seconds = 30.0;
  cfg.lane_change_rate_per_vehicle_per_minute = 0.0;
  cfg.seed = 5;
  const TrafficScene scene = generate_scene(cfg);
  CHECK(scene.tracks.size() == 9);
  for (const auto& track : scene.tracks) {
    CHECK(track.points.size() == seconds_to_steps(30.0));
    const int lane0 = track.points.front().lane;
    for (const auto& p : track.points) CHECK(p.lane == lane0);
  }
}

TEST_CASE("generator determinism and density guard") {
  SceneConfig cfg;
  cfg.num_vehicles = 6;
  cfg.duration_seconds = 20.0;
  cfg.seed = 77;
  const TrafficScene a = generate_scene(cfg);
  const TrafficScene b = generate_scene(cfg);
  REQUIRE(a.tracks.size() == b.tracks.size());
  for (std::size_t i = 0; i < a.tracks.size(); ++i)
    for (std::size_t t = 0; t < a.tracks[i].points.size(); ++t) {
      CHECK(a.tracks[i].points[t].state.px == b.tracks[i].points[t].state.px);
      CHECK(a.tracks[i].points[t].state.py == b.tracks[i].points[t].state.py);
    }

  SceneConfig dense;
  dense.num_vehicles = 500;
  dense.road_length_m = 100.0;
  CHECK_THROWS(generate_scene(dense));
}

TEST_CASE("generator produces clean lane changes") {
  SceneConfig cfg;
  cfg.num_lanes = 3;
  cfg.num_vehicles = 12;
  cfg.duration_seconds = 120.0;
  cfg.lane_change_rate_per_vehicle_per_minute = 4.0;
  cfg.seed = 11;
  const TrafficScene scene = generate_scene(cfg);

  // no collisions: laterally overlapping pairs keep a body-length buffer
  const std::size_t steps = scene.tracks[0].points.size();
  const double overlap = 0.75 * kLaneWidth;
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < scene.tracks.size(); ++i)
      for (std::size_t j = i + 1; j < scene.tracks.size(); ++j) {
        const auto& a = scene.tracks[i].points[t].state;
        const auto& b = scene.tracks[j].points[t].state;
        if (std::fabs(a.py - b.py) >= overlap) continue;
        CHECK(std::fabs(a.px - b.px) - 4.5 > 2.0 - 1e-9);
      }

  // lane changes exist, and the heading realigns afterwards
  std::size_t changes = 0;
  for (const auto& track : scene.tracks)
    for (std::size_t t = 1; t < track.points.size(); ++t)
      if (track.points[t].lane != track.points[t - 1].lane) {
        changes += 1;
        // by 2.5s after the mid-change lane flip the profile has finished
        const std::size_t settle = t + seconds_to_steps(2.5);
        if (settle < track.points.size())
          CHECK(std::fabs(track.points[settle].state.psi) < 0.01);
      }
  CHECK(changes > 0);

  // psi and psi_dot stay consistent with the lateral profile
  for (const auto& track : scene.tracks)
    for (const auto& p : track.points)
      CHECK(std::fabs(p.state.psi - std::atan2(p.state.vy, p.state.vx)) <= 1e-12);
}

TEST_CASE("generator covers all three labels in a long scene") {
  SceneConfig cfg;
  cfg.num_lanes = 3;
  cfg.num_vehicles = 30;
  cfg.duration_seconds = 600.0;
  cfg.lane_change_rate_per_vehicle_per_minute = 1.0;
  cfg.seed = 23;
  const TrafficScene scene = generate_scene(cfg);
  const HorizonConfig horizon = make_horizon(1.0, 1.0);

  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& track : scene.tracks)
    for (std::size_t t = 12; t + 1 < track.points.size(); t += 5)
      if (auto label = label_maneuver(track, t, horizon))
        counts[static_cast<std::size_t>(*label)] += 1;
  CHECK(counts[0] > 0);
  CHECK(counts[1] > 0);
  CHECK(counts[2] > 0);
}

TEST_CASE("neighborhood slot convention") {
  SUBCASE("empty road") {
    const TrafficScene scene = tiny_scene({make_point(1, 0.0, -kLaneWidth)});
    const auto nb = extract_neighborhood(scene, 0, 0);
    for (const auto& o : nb) CHECK(o.present == 0.0);
  }

  SUBCASE("one vehicle 50m ahead in the same lane") {
    const TrafficScene scene = tiny_scene(
        {make_point(1, 0.0, -kLaneWidth), make_point(1, 50.0, -kLaneWidth)});
    const auto nb = extract_neighborhood(scene, 0, 0);
    CHECK(nb[2].present == 1.0);
    CHECK(nb[2].state.px == 50.0);
    for (std::size_t slot : {0u, 1u, 3u, 4u, 5u}) CHECK(nb[slot].present == 0.0);
  }

  SUBCASE("vehicle beyond the 120m range is dropped") {
    const TrafficScene scene = tiny_scene(
        {make_point(1, 0.0, -kLaneWidth), make_point(1, 125.0, -kLaneWidth)});
    const auto nb = extract_neighborhood(scene, 0, 0);
    CHECK(nb[2].present == 0.0);
  }

  SUBCASE("all six slots fill with the nearest candidates") {
    const TrafficScene scene = tiny_scene({
        make_point(1, 0.0, -kLaneWidth),    // target
        make_point(0, 30.0, 0.0),           // left ahead
        make_point(0, 80.0, 0.0),           // further left ahead, loses
        make_point(0, -20.0, 0.0),          // left behind
        make_point(1, 50.0, -kLaneWidth),   // same ahead
        make_point(1, -10.0, -kLaneWidth),  // same behind
        make_point(2, 40.0, -2 * kLaneWidth),
        make_point(2, -5.0, -2 * kLaneWidth),
    });
    const auto nb = extract_neighborhood(scene, 0, 0);
    CHECK(nb[0].state.px == 30.0);
    CHECK(nb[1].state.px == -20.0);
    CHECK(nb[2].state.px == 50.0);
    CHECK(nb[3].state.px == -10.0);
    CHECK(nb[4].state.px == 40.0);
    CHECK(nb[5].state.px == -5.0);
    for (const auto& o : nb) CHECK(o.present == 1.0);
  }

  SUBCASE("no lane to the left of the leftmost lane") {
    const TrafficScene scene = tiny_scene(
        {make_point(0, 0.0, 0.0), make_point(1, 10.0, -kLaneWidth)});
    const auto nb = extract_neighborhood(scene, 0, 0);
    CHECK(nb[0].present == 0.0);
    CHECK(nb[1].present == 0.0);
    CHECK(nb[4].present == 1.0);  // the lane below is to the target's right
  }
}

TEST_CASE("labeling endpoint rule") {
  const HorizonConfig horizon = make_horizon(1.0, 1.0);  // future 13, halfwidth 7
  auto track_with_lanes = [](std::initializer_list<std::pair<int, int>> runs) {
    VehicleTrack t;
    for (auto [lane, count] : runs)
      for (int i = 0; i < count; ++i) t.points.push_back(make_point(lane, 0.0, 0.0));
    return t;
  };

  // label at t compares lanes at t+6 and t+20
  CHECK(*label_maneuver(track_with_lanes({{2, 40}}), 0, horizon) == Maneuver::kNone);
  CHECK(*label_maneuver(track_with_lanes({{2, 10}, {1, 30}}), 0, horizon) ==
        Maneuver::kLeft);
  CHECK(*label_maneuver(track_with_lanes({{2, 10}, {0, 30}}), 0, horizon) ==
        Maneuver::kLeft);
  CHECK(*label_maneuver(track_with_lanes({{1, 10}, {2, 30}}), 0, horizon) ==
        Maneuver::kRight);
  // double change inside the window resolves by endpoints only
  CHECK(*label_maneuver(track_with_lanes({{1, 8}, {2, 5}, {1, 30}}), 0, horizon) ==
        Maneuver::kNone);
  // too short around the comparison window
  CHECK(!label_maneuver(track_with_lanes({{1, 15}}), 0, horizon).has_value());
}

TEST_CASE("extract_samples shape and provenance") {
  SceneConfig cfg;
  cfg.num_vehicles = 8;
  cfg.duration_seconds = 40.0;
  cfg.lane_change_rate_per_vehicle_per_minute = 3.0;
  cfg.seed = 9;
  const TrafficScene scene = generate_scene(cfg);
  const HorizonConfig horizon = make_horizon(1.0, 1.0);
  ExtractionConfig ec;
  ec.stride = 3;
  const auto samples = extract_samples(scene, horizon, ec);
  REQUIRE(!samples.empty());
  for (const Sample& s : samples) {
    CHECK(s.target_history.size() == horizon.history_steps);
    for (const auto& hist : s.neighbor_histories) {
      CHECK(hist.size() == horizon.history_steps);
      for (const auto& o : hist) {
        CHECK((o.present == 0.0 || o.present == 1.0));
        if (o.present == 0.0) CHECK(states_equal(o.state, VehicleState{}));
      }
    }
    CHECK(s.source_track_id < 8);
    CHECK(s.source_time >= horizon.history_steps - 1);
  }

  ExtractionConfig none_off = ec;
  none_off.none_keep_fraction = 0.0;
  for (const Sample& s : extract_samples(scene, horizon, none_off))
    CHECK(s.label != Maneuver::kNone);
}

TEST_CASE("standardizer contract") {
  Rng rng(29);
  std::vector<Sample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(random_sample(4, rng, 0.7));
  // plant a constant feature: n_left identical everywhere
  for (Sample& s : samples) {
    for (auto& st : s.target_history) st.n_left = 2.0;
    for (auto& hist : s.neighbor_histories)
      for (auto& o : hist)
        if (o.present != 0.0) o.state.n_left = 2.0;
  }

  const Standardizer st = fit_standardizer(samples);
  CHECK(st.mean[6] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(st.scale[6] == 1e-8);

  std::vector<Sample> out = samples;
  for (Sample& s : out) apply_standardizer(st, s);

  std::array<double, 8> mean{};
  std::size_t count = 0;
  auto accumulate = [&](const VehicleState& v) {
    const double f[8] = {v.px, v.py,      v.psi,    v.vx,
                         v.vy, v.psi_dot, v.n_left, v.n_right};
    for (int d = 0; d < 8; ++d) mean[d] += f[d];
    count += 1;
  };
  for (const Sample& s : out) {
    for (const auto& v : s.target_history) accumulate(v);
    for (const auto& hist : s.neighbor_histories)
      for (const auto& o : hist) {
        if (o.present != 0.0)
          accumulate(o.state);
        else
          CHECK(states_equal(o.state, VehicleState{}));  // absent stays zero
      }
  }
  for (int d = 0; d < 8; ++d) {
    if (d == 6) continue;  // constant feature maps to 0/1e-8 of numerical noise
    CHECK(std::fabs(mean[d] / static_cast<double>(count)) <= 1e-8);
  }

  CHECK_THROWS(fit_standardizer(std::vector<Sample>{}));
}

TEST_CASE("class balancing") {
  Rng rng(31);
  std::vector<Sample> samples;
  auto add = [&](Maneuver label, int n) {
    for (int i = 0; i < n; ++i) {
      Sample s = random_sample(2, rng);
      s.label = label;
      samples.push_back(std::move(s));
    }
  };
  add(Maneuver::kLeft, 100);
  add(Maneuver::kRight, 50);
  add(Maneuver::kNone, 1000);

  const auto balanced = balance_classes(samples, 3);
  std::array<std::size_t, kNumClasses> counts{};
  for (const Sample& s : balanced) counts[static_cast<std::size_t>(s.label)] += 1;
  CHECK(counts[0] == 50);
  CHECK(counts[1] == 50);
  CHECK(counts[2] == 50);

  const auto again = balance_classes(samples, 3);
  REQUIRE(again.size() == balanced.size());
  for (std::size_t i = 0; i < again.size(); ++i)
    CHECK(samples_equal(again[i], balanced[i]));

  const auto rebalanced = balance_classes(balanced, 7);
  CHECK(rebalanced.size() == balanced.size());

  std::vector<Sample> missing;
  for (const Sample& s : samples)
    if (s.label != Maneuver::kRight) missing.push_back(s);
  CHECK_THROWS(balance_classes(missing, 3));
}

TEST_CASE("track-level split") {
  Rng rng(37);
  std::vector<Sample> samples;
  for (std::uint64_t track = 0; track < 40; ++track) {
    const int per_track = 5 + static_cast<int>(track % 7);
    for (int i = 0; i < per_track; ++i) {
      Sample s = random_sample(2, rng);
      s.source_track_id = track;
      samples.push_back(std::move(s));
    }
  }

  const SplitResult split = split_train_eval(samples, 13);
  CHECK(split.train.size() + split.eval.size() == samples.size());
  const double frac =
      static_cast<double>(split.train.size()) / static_cast<double>(samples.size());
  CHECK(frac >= 0.58);
  CHECK(frac <= 0.62);

  std::set<std::uint64_t> train_ids, eval_ids;
  for (const Sample& s : split.train) train_ids.insert(s.source_track_id);
  for (const Sample& s : split.eval) eval_ids.insert(s.source_track_id);
  for (std::uint64_t id : train_ids) CHECK(eval_ids.count(id) == 0);

  const SplitResult replay = split_train_eval(samples, 13);
  CHECK(replay.train.size() == split.train.size());
  const SplitResult other = split_train_eval(samples, 14);
  const bool moved = other.train.size() != split.train.size() ||
                     [&] {
                       std::set<std::uint64_t> o;
                       for (const Sample& s : other.train) o.insert(s.source_track_id);
                       return o != train_ids;
                     }();
  CHECK(moved);

  std::vector<Sample> one_track(samples.begin(), samples.begin() + 5);
  CHECK_THROWS(split_train_eval(one_track, 13));
}

TEST_CASE("corpus round trip") {
  SceneConfig cfg;
  cfg.num_vehicles = 6;
  cfg.duration_seconds = 25.0;
  cfg.lane_change_rate_per_vehicle_per_minute = 4.0;
  cfg.seed = 41;
  const TrafficScene scene = generate_scene(cfg);
  ExtractionConfig ec;
  ec.stride = 7;
  auto samples = extract_samples(scene, make_horizon(1.0, 1.0), ec);
  for (auto& s : samples) frame_normalize(s);
  REQUIRE(!samples.empty());

  const auto path = temp_path("lcpred_corpus_test.txt");
  write_corpus(path, samples);
  const auto loaded = read_corpus(path);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(samples_equal(loaded[i], samples[i]));

  // writing the loaded corpus again reproduces the file byte for byte
  const auto path2 = temp_path("lcpred_corpus_test2.txt");
  write_corpus(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("corpus edge cases") {
  const auto empty_path = temp_path("lcpred_corpus_empty.txt");
  write_corpus(empty_path, std::vector<Sample>{});
  CHECK(read_corpus(empty_path).empty());
  std::filesystem::remove(empty_path);

  Rng rng(43);
  // history length must match the declared one-second horizon
  const std::vector<Sample> samples = {random_sample(13, rng)};
  const auto path = temp_path("lcpred_corpus_broken.txt");
  write_corpus(path, samples);

  std::string text;
  {
    std::ifstream in(path, std::ios::binary);
    text.assign((std::istreambuf_iterator<char>(in)), {});
  }

  {
    std::ofstream out(path, std::ios::binary);
    out << text.substr(0, text.size() / 2);  // truncated record
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(read_corpus(path)),
                       doctest::Contains("line 1"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
    out << "\n" << text;  // blank lines are skipped, not errors
  }
  CHECK(read_corpus(path).size() == 1);

  {
    std::ofstream out(path, std::ios::binary);
    out << "bogus first line\n" << text;
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(read_corpus(path)),
                       doctest::Contains("line 1"), std::runtime_error);

  std::filesystem::remove(path);
  CHECK_THROWS(static_cast<void>(read_corpus(path)));
}
