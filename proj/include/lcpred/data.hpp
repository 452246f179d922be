#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lcpred/linalg.hpp"

namespace lcpred {

inline constexpr double kSampleRateHz = 12.5;
inline constexpr double kDtSeconds = 1.0 / kSampleRateHz;
inline constexpr double kLaneWidth = 3.7;
inline constexpr double kNeighborRangeMeters = 120.0;
inline constexpr std::size_t kLabelHalfwidthSteps = 7;

// class indices double as tie-break order
enum class Maneuver : int { kLeft = 0, kRight = 1, kNone = 2 };
inline constexpr std::size_t kNumClasses = 3;

std::string_view maneuver_name(Maneuver m);
std::optional<Maneuver> maneuver_from_name(std::string_view name);

struct VehicleState {
  double px = 0.0, py = 0.0;      // meters, world frame
  double psi = 0.0;               // heading, radians in (-pi, pi]
  double vx = 0.0, vy = 0.0;      // meters/second
  double psi_dot = 0.0;           // radians/second
  double n_left = 0.0, n_right = 0.0;  // lane counts to either side
};

struct NeighborObservation {
  VehicleState state;   // all-zero when absent
  double present = 0.0;  // 1 when occupied, 0 otherwise
};

std::size_t seconds_to_steps(double seconds);

struct HorizonConfig {
  double history_seconds = 0.0;
  double future_seconds = 0.0;
  std::size_t history_steps = 0;
  std::size_t future_steps = 0;
  std::size_t label_halfwidth_steps = kLabelHalfwidthSteps;
};

HorizonConfig make_horizon(double history_seconds, double future_seconds);

// slot convention: v0/v1 left lane ahead/behind, v2/v3 same lane,
// v4/v5 right lane
struct Sample {
  std::vector<VehicleState> target_history;
  std::array<std::vector<NeighborObservation>, 6> neighbor_histories;
  Maneuver label = Maneuver::kNone;
  HorizonConfig horizon;
  std::uint64_t source_track_id = 0;
  std::size_t source_time = 0;
};

struct TrackPoint {
  int lane = 0;
  VehicleState state;
};

// points are step-indexed from scene start at 12.5 Hz
struct VehicleTrack {
  std::uint64_t id = 0;
  std::vector<TrackPoint> points;
};

// lane 0 is the leftmost lane in the direction of travel; lane centers sit
// at y = -lane * lane_width with +y pointing left
struct TrafficScene {
  int num_lanes = 0;
  double lane_width = kLaneWidth;
  std::vector<VehicleTrack> tracks;
};

struct SceneConfig {
  int num_lanes = 3;
  int num_vehicles = 20;
  double duration_seconds = 120.0;
  double lane_change_rate_per_vehicle_per_minute = 1.0;
  double road_length_m = 600.0;
  std::uint64_t seed = 0;
};

TrafficScene generate_scene(const SceneConfig& config);

std::array<NeighborObservation, 6> extract_neighborhood(const TrafficScene& scene,
                                                        std::size_t target_index,
                                                        std::size_t t);

// compares lane index at t+future-7 vs t+future+7; nullopt when the track
// is too short around the comparison window
std::optional<Maneuver> label_maneuver(const VehicleTrack& track, std::size_t t,
                                       const HorizonConfig& horizon);

void frame_normalize(Sample& sample);

struct ExtractionConfig {
  std::size_t stride = 1;
  double none_keep_fraction = 1.0;  // subsample no-change windows at source
  std::uint64_t seed = 0;
};

std::vector<Sample> extract_samples(const TrafficScene& scene,
                                    const HorizonConfig& horizon,
                                    const ExtractionConfig& config);

// per-dimension affine transform fit over target states and present
// neighbors of the training split; indicators pass through untouched
struct Standardizer {
  std::array<double, 8> mean{};
  std::array<double, 8> scale{};  // stddev floored at 1e-8
};

Standardizer fit_standardizer(std::span<const Sample> training_samples);
void apply_standardizer(const Standardizer& s, Sample& sample);

std::vector<Sample> balance_classes(std::span<const Sample> samples,
                                    std::uint64_t seed);

struct SplitResult {
  std::vector<Sample> train, eval;
};

// groups by source track so no track straddles the split
SplitResult split_train_eval(std::span<const Sample> samples, std::uint64_t seed);

void write_corpus(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_corpus(const std::filesystem::path& path);

// feature assembly shared by every model
inline constexpr std::size_t kStateDim = 8;
inline constexpr std::size_t kNeighborDim = 9;  // state then indicator
inline constexpr std::size_t kConcatDim = 6 * kNeighborDim + kStateDim;

void append_state_features(const VehicleState& s, Vec& out);
void append_neighbor_features(const NeighborObservation& o, Vec& out);

// [v0..v5 neighbor features, target state], one vector per step
std::vector<Vec> concat_features(const Sample& sample);

}  // namespace lcpred
