#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "springtwin/model.hpp"
#include "springtwin/spatial.hpp"
#include "springtwin/topology.hpp"

namespace springtwin {

// Below this separation a spring has no defined direction and exerts no
// elastic force (its dashpot still acts).
inline constexpr double kDegenerateLength = 1e-9;

enum class ExecutionPolicy { parallel, serial_reference };

struct CollisionEvent {
  enum class Kind : std::uint8_t { point_point, point_ground };
  Kind kind = Kind::point_point;
  NodeIndex i = 0;
  NodeIndex j = 0;          // equals i for ground contacts
  double impulse = 0.0;     // normal impulse magnitude, N*s
  bool clamped = false;     // ground contact moved the node back onto the plane
};

struct StepWorkspace {
  std::vector<Vec3> forces;          // per node, reset every substep
  std::vector<Vec3> spring_forces;   // per spring, force on endpoint i
  std::vector<CollisionEvent> events;
  std::size_t degenerate_springs = 0;
  SpatialHashGrid grid;
};

// Immutable, kernel-friendly view of a spring-mass system: springs in
// structure-of-arrays form plus per-node incidence lists for race-free
// parallel gathers. Safe to share between threads.
class SpringMassModel {
 public:
  SpringMassModel(const SpringTopology& topology, std::vector<ControlAttachment> attachments,
                  const PhysParams& params, double ground_height,
                  ExecutionPolicy policy = ExecutionPolicy::parallel);

  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t n_springs() const { return spring_i_.size(); }
  const PhysParams& params() const { return params_; }
  double ground_height() const { return ground_height_; }
  ExecutionPolicy policy() const { return policy_; }
  const std::vector<ControlAttachment>& attachments() const { return attachments_; }
  std::size_t n_ctrl() const { return n_ctrl_; }

  std::span<const NodeIndex> spring_i() const { return spring_i_; }
  std::span<const NodeIndex> spring_j() const { return spring_j_; }
  std::span<const double> rest_length() const { return rest_; }
  std::span<const double> stiffness() const { return stiffness_; }

  // incident springs of node n: incidence_[incidence_start_[n] .. incidence_start_[n+1])
  // encoded as spring index with the high bit set when n is endpoint j.
  std::span<const std::uint32_t> incidence(std::size_t n) const {
    return {incidence_.data() + incidence_start_[n], incidence_start_[n + 1] - incidence_start_[n]};
  }
  std::span<const std::uint32_t> node_attachments(std::size_t n) const {
    return {attach_by_node_.data() + attach_start_[n], attach_start_[n + 1] - attach_start_[n]};
  }

  // Copies with replaced physics; topology structure is shared by value.
  SpringMassModel with_stiffness(std::span<const double> stiffness) const;
  SpringMassModel with_params(const PhysParams& params) const;
  SpringMassModel with_policy(ExecutionPolicy policy) const;

  SpringTopology topology() const;

 private:
  void build_incidence();

  std::size_t n_nodes_ = 0;
  std::size_t n_ctrl_ = 0;
  std::vector<NodeIndex> spring_i_, spring_j_;
  std::vector<double> rest_, stiffness_;
  std::vector<std::uint32_t> incidence_start_, incidence_;
  std::vector<ControlAttachment> attachments_;
  std::vector<std::uint32_t> attach_start_, attach_by_node_;
  PhysParams params_;
  double ground_height_ = 0.0;
  ExecutionPolicy policy_ = ExecutionPolicy::parallel;
};

class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(std::size_t substep, SystemState last_finite)
      : std::runtime_error("simulation diverged at substep " + std::to_string(substep)),
        substep_(substep),
        last_finite_(std::move(last_finite)) {}
  std::size_t substep() const { return substep_; }
  const SystemState& last_finite_state() const { return last_finite_; }

 private:
  std::size_t substep_;
  SystemState last_finite_;
};

// Per node: gravity * m + spring + dashpot + control-spring forces, into ws.forces.
void accumulate_forces(const SpringMassModel& model, const SystemState& state,
                       std::span<const Vec3> ctrl_positions, StepWorkspace& ws);

// Impulse contacts on the post-drag velocities. Point-point pairs come from
// the spatial hash and are resolved sequentially in (i, j) order; ground
// contacts follow. Appends to ws.events.
void resolve_collisions(const SpringMassModel& model, SystemState& state, StepWorkspace& ws);

// One substep of length params.substep_dt(): forces, drag-damped velocity
// update, collisions, then position update with the new velocity.
void advance_substep(const SpringMassModel& model, SystemState& state,
                     std::span<const Vec3> ctrl_positions, StepWorkspace& ws);

// Control position used during substep `s` of a frame: linear from prev to next,
// reaching next at the last substep.
void interpolate_controls(std::span<const Vec3> prev, std::span<const Vec3> next, int substep,
                          int substeps, std::vector<Vec3>& out);

// One frame (params.substeps substeps). Throws SimulationDiverged.
SystemState step(const SpringMassModel& model, const SystemState& state,
                 std::span<const Vec3> ctrl_prev, std::span<const Vec3> ctrl_next,
                 StepWorkspace& ws, std::size_t substep_offset = 0);

// States 0..n_frames over the given control script (needs >= n_frames + 1
// frames, or exactly 1 frame for static controls).
std::vector<SystemState> rollout(const SpringMassModel& model, const SystemState& initial,
                                 const ControlScript& control, std::size_t n_frames);

// Builds the model from the scenario (springs from params if no topology,
// attachments at control frame 0) and rolls it out.
std::vector<SystemState> rollout(const Scenario& scenario, std::size_t n_frames);

SpringMassModel make_model(const Scenario& scenario,
                           ExecutionPolicy policy = ExecutionPolicy::parallel);

// Attachments computed at the canonical frame (control frame 0).
std::vector<ControlAttachment> canonical_attachments(const Scenario& scenario);

double kinetic_energy(const SpringMassModel& model, const SystemState& state);
double spring_potential(const SpringMassModel& model, const SystemState& state);
Vec3 linear_momentum(const SpringMassModel& model, const SystemState& state);

}  // namespace springtwin
