#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "springtwin/model.hpp"

namespace springtwin {

struct CostWeights {
  double cd = 1.0;     // w_cd, on the chamfer term
  double track = 1.0;  // w_track, on the tracking term
};

// Frames [begin, end) of an observation sequence.
struct FrameWindow {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

struct CostBreakdown {
  double c_geometry = 0.0;  // m, mean single-direction chamfer over the window
  double c_motion = 0.0;    // m^2, mean of per-frame mean squared track error
  double total = 0.0;       // w_cd * c_geometry + w_track * c_motion
  std::vector<double> geometry_per_frame;
  std::vector<double> motion_per_frame;
  std::size_t empty_cloud_frames = 0;
  std::size_t empty_track_frames = 0;
};

// Mean over observed points of the distance to the nearest predicted point
// (observed -> predicted only). Empty `observed` gives 0 and a warning.
// Uses a k-d tree over `predicted`; throws if `predicted` is empty.
double chamfer_single_direction(std::span<const Vec3> observed, std::span<const Vec3> predicted);

// O(|observed| * |predicted|) reference for chamfer_single_direction.
double chamfer_single_direction_brute_force(std::span<const Vec3> observed,
                                            std::span<const Vec3> predicted);

// Index into `predicted` of the nearest point for every observed point.
std::vector<std::uint32_t> nearest_assignment(std::span<const Vec3> observed,
                                              std::span<const Vec3> predicted);

// Mean squared distance between tracked node predictions and observations.
// Empty track set gives 0 and a warning.
double tracking_error(std::span<const NodeIndex> track_ids, std::span<const Vec3> track_positions,
                      std::span<const Vec3> predicted_positions);

// Unsquared per-point mean, the reporting variant.
double tracking_error_abs(std::span<const NodeIndex> track_ids,
                          std::span<const Vec3> track_positions,
                          std::span<const Vec3> predicted_positions);

// Per-frame chamfer + tracking over `window`; states[t] is compared with
// obs.frames[t]. Throws if states do not cover the window.
CostBreakdown trajectory_cost(std::span<const SystemState> states, const ObservationSequence& obs,
                              const CostWeights& weights, FrameWindow window);
CostBreakdown trajectory_cost(std::span<const SystemState> states, const ObservationSequence& obs,
                              const CostWeights& weights);

// Reporting metrics: mean chamfer (m) and mean per-frame root-mean-square
// track error (m) over a window.
struct WindowMetrics {
  FrameWindow window;
  double mean_cd = 0.0;
  double mean_track_error = 0.0;
  std::vector<double> cd_per_frame;
  std::vector<double> track_error_per_frame;
};

WindowMetrics evaluate_window(std::span<const SystemState> states, const ObservationSequence& obs,
                              FrameWindow window);

}  // namespace springtwin
