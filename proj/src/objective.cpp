#include "springtwin/objective.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "springtwin/log.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

namespace {

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

// Chamfer without the empty-set warning; trajectory_cost counts those instead.
double chamfer_quiet(std::span<const Vec3> observed, std::span<const Vec3> predicted) {
  if (predicted.empty()) throw std::invalid_argument("chamfer: predicted set is empty");
  if (observed.empty()) return 0.0;
  const KdTree tree(predicted);
  std::vector<double> dist(observed.size());
  const auto n = static_cast<std::int64_t>(observed.size());
#pragma omp parallel for schedule(static) if (n >= 4096)
  for (std::int64_t k = 0; k < n; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    dist[idx] = std::sqrt(tree.nearest(observed[idx]).squared_distance);
  }
  return mean_of(dist);
}

double tracking_quiet(std::span<const NodeIndex> ids, std::span<const Vec3> positions,
                      std::span<const Vec3> predicted) {
  if (ids.size() != positions.size()) {
    throw std::invalid_argument("tracking_error: ids and positions differ in length");
  }
  if (ids.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= predicted.size()) throw std::out_of_range("tracking_error: track id out of range");
    sum += squared_distance(predicted[ids[k]], positions[k]);
  }
  return sum / static_cast<double>(ids.size());
}

void check_window(std::span<const SystemState> states, const ObservationSequence& obs,
                  FrameWindow window) {
  if (window.end > obs.frames.size() || window.begin > window.end) {
    throw std::invalid_argument("frame window [" + std::to_string(window.begin) + ", " +
                                std::to_string(window.end) + ") outside observation of " +
                                std::to_string(obs.frames.size()) + " frames");
  }
  if (states.size() < window.end) {
    throw std::invalid_argument("frame-count mismatch: " + std::to_string(states.size()) +
                                " states cannot cover window ending at frame " +
                                std::to_string(window.end));
  }
}

}  // namespace

double chamfer_single_direction(std::span<const Vec3> observed, std::span<const Vec3> predicted) {
  if (observed.empty()) logger()->warn("chamfer: empty observed cloud (occluded frame), cost 0");
  return chamfer_quiet(observed, predicted);
}

double chamfer_single_direction_brute_force(std::span<const Vec3> observed,
                                            std::span<const Vec3> predicted) {
  if (predicted.empty()) throw std::invalid_argument("chamfer: predicted set is empty");
  if (observed.empty()) return 0.0;
  double sum = 0.0;
  for (const Vec3& o : observed) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : predicted) best = std::min(best, squared_distance(o, p));
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(observed.size());
}

std::vector<std::uint32_t> nearest_assignment(std::span<const Vec3> observed,
                                              std::span<const Vec3> predicted) {
  std::vector<std::uint32_t> out(observed.size());
  if (observed.empty()) return out;
  if (predicted.empty()) throw std::invalid_argument("nearest_assignment: predicted set is empty");
  const KdTree tree(predicted);
  for (std::size_t k = 0; k < observed.size(); ++k) out[k] = tree.nearest(observed[k]).index;
  return out;
}

double tracking_error(std::span<const NodeIndex> track_ids, std::span<const Vec3> track_positions,
                      std::span<const Vec3> predicted_positions) {
  if (track_ids.empty()) logger()->warn("tracking_error: empty track set, cost 0");
  return tracking_quiet(track_ids, track_positions, predicted_positions);
}

double tracking_error_abs(std::span<const NodeIndex> track_ids,
                          std::span<const Vec3> track_positions,
                          std::span<const Vec3> predicted_positions) {
  if (track_ids.size() != track_positions.size()) {
    throw std::invalid_argument("tracking_error: ids and positions differ in length");
  }
  if (track_ids.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < track_ids.size(); ++k) {
    sum += distance(predicted_positions[track_ids[k]], track_positions[k]);
  }
  return sum / static_cast<double>(track_ids.size());
}

CostBreakdown trajectory_cost(std::span<const SystemState> states, const ObservationSequence& obs,
                              const CostWeights& weights, FrameWindow window) {
  check_window(states, obs, window);
  CostBreakdown out;
  out.geometry_per_frame.resize(window.size());
  out.motion_per_frame.resize(window.size());
  for (std::size_t t = window.begin; t < window.end; ++t) {
    const ObservationFrame& fr = obs.frames[t];
    const auto& predicted = states[t].positions;
    if (fr.partial_cloud.empty()) ++out.empty_cloud_frames;
    if (fr.track_ids.empty()) ++out.empty_track_frames;
    out.geometry_per_frame[t - window.begin] = chamfer_quiet(fr.partial_cloud, predicted);
    out.motion_per_frame[t - window.begin] = tracking_quiet(fr.track_ids, fr.track_positions, predicted);
  }
  out.c_geometry = mean_of(out.geometry_per_frame);
  out.c_motion = mean_of(out.motion_per_frame);
  out.total = weights.cd * out.c_geometry + weights.track * out.c_motion;
  if (out.empty_cloud_frames > 0 || out.empty_track_frames > 0) {
    logger()->debug("trajectory_cost: {} occluded frames, {} frames without tracks",
                    out.empty_cloud_frames, out.empty_track_frames);
  }
  return out;
}

CostBreakdown trajectory_cost(std::span<const SystemState> states, const ObservationSequence& obs,
                              const CostWeights& weights) {
  return trajectory_cost(states, obs, weights, FrameWindow{0, obs.frames.size()});
}

WindowMetrics evaluate_window(std::span<const SystemState> states, const ObservationSequence& obs,
                              FrameWindow window) {
  check_window(states, obs, window);
  WindowMetrics m;
  m.window = window;
  for (std::size_t t = window.begin; t < window.end; ++t) {
    const ObservationFrame& fr = obs.frames[t];
    m.cd_per_frame.push_back(chamfer_quiet(fr.partial_cloud, states[t].positions));
    m.track_error_per_frame.push_back(
        std::sqrt(tracking_quiet(fr.track_ids, fr.track_positions, states[t].positions)));
  }
  m.mean_cd = mean_of(m.cd_per_frame);
  m.mean_track_error = mean_of(m.track_error_per_frame);
  return m;
}

}  // namespace springtwin
