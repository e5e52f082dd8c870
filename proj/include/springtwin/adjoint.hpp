#pragma once

#include <cstddef>
#include <vector>

#include "springtwin/dynamics.hpp"
#include "springtwin/objective.hpp"

namespace springtwin {

// How much of the forward pass the tape keeps. `full` stores the state at the
// start of every substep; `checkpointed` stores one state every
// `checkpoint_interval` substeps and recomputes each segment during backward.
enum class TapeMode { full, checkpointed };

struct TapeOptions {
  TapeMode mode = TapeMode::full;
  std::size_t checkpoint_interval = 32;
};

// Record of one differentiable rollout. Branch decisions (contact pairs,
// ground contacts and clamps, chamfer correspondences) are frozen here; the
// backward pass differentiates the resulting piecewise-smooth surrogate.
struct Tape {
  SpringMassModel model;
  ControlScript control;
  CostWeights weights;
  FrameWindow window;
  TapeOptions options;
  std::size_t n_steps = 0;  // frames simulated past the initial state

  // Substep-start states: all substeps (full) or every checkpoint_interval-th.
  std::vector<SystemState> snapshots;
  // Collision events of every substep, in application order.
  std::vector<std::vector<CollisionEvent>> events;
  // Observation data of the window, with frozen nearest-point assignments.
  std::vector<ObservationFrame> frames;
  std::vector<std::vector<std::uint32_t>> correspondences;

  // Substep records, substeps x frames.
  std::size_t length() const { return events.size(); }
};

struct ParamGradient {
  std::vector<double> d_log_k;  // d cost / d log k_ij, aligned with the springs
  double d_gamma = 0.0;         // d cost / d gamma
  double d_delta = 0.0;         // d cost / d delta
  double d_e = 0.0;             // d cost / d restitution
  double d_mu = 0.0;            // d cost / d friction
};

struct FrozenParams {
  bool stiffness = false;
  bool gamma = false;
  bool delta = false;
  bool restitution = false;
  bool friction = false;
};

struct TapedCost {
  CostBreakdown cost;
  Tape tape;
};

// Rolls out far enough to cover `window` and evaluates trajectory_cost on it,
// recording everything backward() needs. The cost is computed by the same
// code path as trajectory_cost, so the two agree exactly.
TapedCost forward_with_tape(const SpringMassModel& model, const SystemState& initial,
                            const ControlScript& control, const ObservationSequence& obs,
                            const CostWeights& weights, FrameWindow window,
                            TapeOptions options = {});
TapedCost forward_with_tape(const Scenario& scenario, const ObservationSequence& obs,
                            const CostWeights& weights, TapeOptions options = {});

ParamGradient backward(const Tape& tape, FrozenParams frozen = {});

}  // namespace springtwin
