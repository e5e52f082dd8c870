#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "springtwin/adjoint.hpp"
#include "springtwin/cma_es.hpp"
#include "springtwin/dynamics.hpp"
#include "springtwin/objective.hpp"

namespace springtwin {

// Coordinates of the zero-order search, in the order they are stored.
enum class SparseCoord : std::size_t {
  log_k_hom,
  log_gamma,
  logit_delta,
  restitution,
  friction,
  collision_dist,
  topo_radius,
  topo_max_neighbors,  // rounded half-up
  ctrl_radius,
  ctrl_max_neighbors,  // rounded half-up
  log_k_ctrl,
  count
};
inline constexpr std::size_t kSparseDim = static_cast<std::size_t>(SparseCoord::count);
const char* to_string(SparseCoord c);

// Physical ranges of the sparse coordinates. CMA-ES searches the unit cube;
// each coordinate maps affinely onto [lower, upper] of its (log/logit) value.
struct SparseBounds {
  std::array<double, kSparseDim> lower{};
  std::array<double, kSparseDim> upper{};

  // Ranges scaled to the object: radii are multiples of the median
  // nearest-neighbour spacing of `canonical`; the control radius also covers
  // the farthest control point's nearest node.
  static SparseBounds for_geometry(const std::vector<Vec3>& canonical,
                                   const std::vector<Vec3>& ctrl_points);
};

// Decodes a unit-cube point; `base` supplies the fixed physics (mass,
// gravity, dt, substeps). Integers round half-up.
PhysParams decode_sparse(const std::array<double, kSparseDim>& unit, const SparseBounds& bounds,
                         const PhysParams& base);
// Inverse of decode_sparse, clamped to the cube.
std::array<double, kSparseDim> encode_sparse(const PhysParams& p, const SparseBounds& bounds);

struct SparseConfig {
  std::size_t generations = 30;
  std::size_t max_evaluations = 0;
  double sigma0 = 0.25;
  std::size_t lambda = 0;
  double penalty_weight = 1.0;
  std::optional<std::array<double, kSparseDim>> init;  // unit cube, default centre
  std::optional<SparseBounds> bounds;
};

struct DenseConfig {
  std::size_t iterations = 200;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Stop when the best cost improved by less than this fraction over `patience` iterations.
  double rel_tolerance = 1e-4;
  std::size_t patience = 30;
  std::size_t max_retries = 5;  // learning-rate halvings after a failed step
  double log_k_min = std::log(1.0);
  double log_k_max = std::log(1e6);
  TapeOptions tape;
};

enum class Ablation { full, zero_order_only, first_order_only };
std::string to_string(Ablation a);
Ablation ablation_from_name(const std::string& name);

// A fitted system: springs, attachments and physics.
struct FittedSystem {
  PhysParams params;
  SpringTopology topology;  // per-spring stiffness
  std::vector<ControlAttachment> attachments;
  double ground_height = 0.0;

  SpringMassModel model(ExecutionPolicy policy = ExecutionPolicy::parallel) const;
};

struct SparseResult {
  FittedSystem system;
  CostBreakdown cost;                    // on the training window
  std::array<double, kSparseDim> unit{}; // best point in the unit cube
  std::vector<double> best_per_generation;
  std::size_t evaluations = 0;
};

struct DenseResult {
  FittedSystem system;
  CostBreakdown cost;
  double initial_cost = 0.0;
  std::vector<double> loss_curve;  // cost at every accepted iterate
  std::size_t iterations = 0;
  std::size_t rejected_steps = 0;
  bool stopped_on_failure = false;
};

// The system a sparse parameter set describes on the canonical geometry.
// Throws TopologyError when controls cannot attach.
FittedSystem build_system(const Scenario& canonical, const PhysParams& params);

// Training cost of a system over `window` (rolls out window.end - 1 frames).
CostBreakdown system_cost(const FittedSystem& system, const Scenario& canonical,
                          const ObservationSequence& obs, const CostWeights& weights,
                          FrameWindow window);

// Stage 1: CMA-ES over the sparse coordinates. Deterministic per seed.
SparseResult optimize_sparse(const Scenario& canonical, const ObservationSequence& obs,
                             const CostWeights& weights, FrameWindow window,
                             const SparseConfig& config, std::uint64_t seed);

// Stage 2: Adam on per-spring log stiffness, log gamma, logit delta,
// restitution and friction with adjoint gradients. The returned system is
// the best iterate seen, so its cost never exceeds the starting cost.
DenseResult optimize_dense(const FittedSystem& start, const Scenario& canonical,
                           const ObservationSequence& obs, const CostWeights& weights,
                           FrameWindow window, const DenseConfig& config);

struct PipelineConfig {
  Ablation ablation = Ablation::full;
  CostWeights weights;
  SparseConfig sparse;
  DenseConfig dense;
  double train_ratio = 0.7;
  std::optional<FrameWindow> window;  // default: training prefix from train_ratio
  std::uint64_t seed = 0;
};

struct StageReport {
  std::string stage;
  CostBreakdown cost;
  std::vector<double> history;  // per generation / per iteration
  std::size_t evaluations = 0;
};

// What a fit produces; everything needed to reproduce a rollout.
struct TwinArtifact {
  std::string name;
  SystemState canonical;
  FittedSystem system;
  ControlScript control;  // the training control script
  FrameWindow train_window;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;
  nlohmann::json config;
  std::vector<StageReport> stages;

  // Scenario reproducing the fit under another control script (or the training one).
  Scenario scenario(const std::optional<ControlScript>& control = std::nullopt) const;
  SpringMassModel model(ExecutionPolicy policy = ExecutionPolicy::parallel) const {
    return system.model(policy);
  }
};

TwinArtifact run_pipeline(const Scenario& canonical, const ObservationSequence& obs,
                          const PipelineConfig& config);

nlohmann::json config_to_json(const PipelineConfig& config);
void to_json(nlohmann::json& j, const TwinArtifact& t);
void from_json(const nlohmann::json& j, TwinArtifact& t);
void to_json(nlohmann::json& j, const CostBreakdown& c);

}  // namespace springtwin
