#pragma once

#include <cstdint>
#include <vector>

#include "springtwin/dynamics.hpp"
#include "springtwin/optimize.hpp"

namespace springtwin {

// Desired positions for a subset of nodes at the end of the horizon.
struct PlanTarget {
  std::vector<NodeIndex> ids;
  std::vector<Vec3> positions;
};

struct PlanProblem {
  SpringMassModel model;
  SystemState initial;
  std::vector<Vec3> initial_controls;
  PlanTarget target;
  std::size_t horizon = 20;  // frames
  double max_step = 0.02;    // m, per control point per frame
};

// A problem over a fitted system, with controls attached at `controls`.
PlanProblem make_plan_problem(const FittedSystem& system, SystemState initial,
                              std::vector<Vec3> controls, PlanTarget target, std::size_t horizon,
                              double max_step);

struct PlanOptions {
  std::size_t samples = 64;
  std::size_t elites = 8;
  std::size_t iterations = 10;
  double init_std = 0.0;         // m, 0: max_step / 2
  std::size_t smoothing = 3;     // moving-average window over frames, 1 disables
  double running_weight = 0.0;   // weight on the mean tracking error along the way
  std::uint64_t seed = 0;
};

struct PlanResult {
  ControlScript script;  // horizon + 1 frames, frame 0 = initial controls
  double cost = 0.0;
  double zero_action_cost = 0.0;
  std::vector<double> best_per_iteration;
  std::vector<SystemState> predicted;
  bool maybe_unreachable = false;
};

// Terminal (plus optional running) tracking cost of a control script.
double plan_cost(const PlanProblem& problem, const ControlScript& script, double running_weight = 0.0);

// Control script from per-frame displacements (horizon x n_ctrl), after
// smoothing and clamping each displacement to max_step.
ControlScript script_from_displacements(const PlanProblem& problem, std::vector<Vec3> displacement,
                                        std::size_t smoothing);

// Cross-entropy sampling-based shooting. Returns the best plan ever sampled;
// the mean of the sampling distribution is always candidate 0.
PlanResult plan_shooting(const PlanProblem& problem, const PlanOptions& options);

}  // namespace springtwin
