#include "springtwin/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "springtwin/kernels.hpp"
#include "springtwin/log.hpp"

namespace springtwin {

namespace {

constexpr std::uint32_t kEndpointJ = 0x80000000u;

}  // namespace

SpringMassModel::SpringMassModel(const SpringTopology& topology,
                                 std::vector<ControlAttachment> attachments,
                                 const PhysParams& params, double ground_height,
                                 ExecutionPolicy policy)
    : n_nodes_(topology.n_nodes),
      attachments_(std::move(attachments)),
      params_(params),
      ground_height_(ground_height),
      policy_(policy) {
  const std::size_t m = topology.springs.size();
  spring_i_.reserve(m);
  spring_j_.reserve(m);
  rest_.reserve(m);
  stiffness_.reserve(m);
  for (const Spring& s : topology.springs) {
    if (s.i >= n_nodes_ || s.j >= n_nodes_ || s.i == s.j) {
      throw std::invalid_argument("SpringMassModel: invalid spring endpoints");
    }
    spring_i_.push_back(s.i);
    spring_j_.push_back(s.j);
    rest_.push_back(s.rest_length);
    stiffness_.push_back(s.stiffness);
  }
  for (const ControlAttachment& a : attachments_) {
    if (a.node_index >= n_nodes_) throw std::invalid_argument("SpringMassModel: attachment node out of range");
    n_ctrl_ = std::max<std::size_t>(n_ctrl_, a.ctrl_index + 1u);
  }
  build_incidence();
}

void SpringMassModel::build_incidence() {
  incidence_start_.assign(n_nodes_ + 1, 0);
  for (std::size_t s = 0; s < spring_i_.size(); ++s) {
    ++incidence_start_[spring_i_[s] + 1];
    ++incidence_start_[spring_j_[s] + 1];
  }
  std::partial_sum(incidence_start_.begin(), incidence_start_.end(), incidence_start_.begin());
  incidence_.resize(incidence_start_.back());
  std::vector<std::uint32_t> fill(incidence_start_.begin(), incidence_start_.end() - 1);
  for (std::size_t s = 0; s < spring_i_.size(); ++s) {
    incidence_[fill[spring_i_[s]]++] = static_cast<std::uint32_t>(s);
    incidence_[fill[spring_j_[s]]++] = static_cast<std::uint32_t>(s) | kEndpointJ;
  }

  attach_start_.assign(n_nodes_ + 1, 0);
  for (const ControlAttachment& a : attachments_) ++attach_start_[a.node_index + 1];
  std::partial_sum(attach_start_.begin(), attach_start_.end(), attach_start_.begin());
  attach_by_node_.resize(attachments_.size());
  std::vector<std::uint32_t> afill(attach_start_.begin(), attach_start_.end() - 1);
  for (std::size_t a = 0; a < attachments_.size(); ++a) {
    attach_by_node_[afill[attachments_[a].node_index]++] = static_cast<std::uint32_t>(a);
  }
}

SpringMassModel SpringMassModel::with_stiffness(std::span<const double> stiffness) const {
  if (stiffness.size() != stiffness_.size()) {
    throw std::invalid_argument("with_stiffness: size mismatch");
  }
  SpringMassModel copy = *this;
  copy.stiffness_.assign(stiffness.begin(), stiffness.end());
  return copy;
}

SpringMassModel SpringMassModel::with_params(const PhysParams& params) const {
  SpringMassModel copy = *this;
  copy.params_ = params;
  return copy;
}

SpringMassModel SpringMassModel::with_policy(ExecutionPolicy policy) const {
  SpringMassModel copy = *this;
  copy.policy_ = policy;
  return copy;
}

SpringTopology SpringMassModel::topology() const {
  SpringTopology t;
  t.n_nodes = n_nodes_;
  t.springs.reserve(spring_i_.size());
  for (std::size_t s = 0; s < spring_i_.size(); ++s) {
    t.springs.push_back(Spring{spring_i_[s], spring_j_[s], rest_[s], stiffness_[s]});
  }
  return t;
}

void accumulate_forces(const SpringMassModel& model, const SystemState& state,
                       std::span<const Vec3> ctrl_positions, StepWorkspace& ws) {
  ws.forces.resize(model.n_nodes());
  if (model.policy() == ExecutionPolicy::serial_reference) {
    ws.degenerate_springs = kernels::serial::accumulate_forces(
        model, state.positions, state.velocities, ctrl_positions, ws.forces);
  } else {
    ws.spring_forces.resize(model.n_springs());
    ws.degenerate_springs =
        kernels::spring_forces(model, state.positions, state.velocities, ws.spring_forces);
    kernels::gather_forces(model, ws.spring_forces, state.positions, ctrl_positions, ws.forces);
  }
  if (ws.degenerate_springs > 0) {
    logger()->debug("{} springs with coincident endpoints exert no elastic force",
                    ws.degenerate_springs);
  }
}

void resolve_collisions(const SpringMassModel& model, SystemState& state, StepWorkspace& ws) {
  const PhysParams& p = model.params();
  const double e = p.restitution;
  const double mu = p.friction;
  const double m = p.node_mass;
  auto& x = state.positions;
  auto& v = state.velocities;

  if (p.collision_dist > 0.0) {
    const auto& pairs = ws.grid.pairs_within(x, p.collision_dist);
    for (const auto& [i, j] : pairs) {
      const Vec3 d = x[i] - x[j];
      const double len = norm(d);
      if (len < kDegenerateLength) continue;
      const Vec3 n = d / len;
      const Vec3 w = v[i] - v[j];
      const double vn = dot(w, n);
      if (vn >= 0.0) continue;
      const Vec3 dv = n * (-(1.0 + e) * vn) - (w - n * vn) * mu;
      v[i] += dv * 0.5;
      v[j] -= dv * 0.5;
      ws.events.push_back({CollisionEvent::Kind::point_point, i, j, 0.5 * m * (1.0 + e) * (-vn), false});
    }
  }

  const double h = p.substep_dt();
  const double ground = model.ground_height();
  const double keep = 1.0 - mu;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(v[i].z < 0.0 && x[i].z + h * v[i].z < ground)) continue;
    const double vz = v[i].z;
    v[i] = {v[i].x * keep, v[i].y * keep, -e * vz};
    const bool clamped = x[i].z < ground;
    if (clamped) x[i].z = ground;
    ws.events.push_back({CollisionEvent::Kind::point_ground, static_cast<NodeIndex>(i),
                         static_cast<NodeIndex>(i), m * (1.0 + e) * (-vz), clamped});
  }
}

void advance_substep(const SpringMassModel& model, SystemState& state,
                     std::span<const Vec3> ctrl_positions, StepWorkspace& ws) {
  const PhysParams& p = model.params();
  const double h = p.substep_dt();
  ws.events.clear();
  accumulate_forces(model, state, ctrl_positions, ws);
  if (model.policy() == ExecutionPolicy::serial_reference) {
    kernels::serial::integrate_velocity(state.velocities, ws.forces, h / p.node_mass, p.delta);
  } else {
    kernels::integrate_velocity(state.velocities, ws.forces, h / p.node_mass, p.delta);
  }
  resolve_collisions(model, state, ws);
  if (model.policy() == ExecutionPolicy::serial_reference) {
    kernels::serial::integrate_position(state.positions, state.velocities, h);
  } else {
    kernels::integrate_position(state.positions, state.velocities, h);
  }
}

void interpolate_controls(std::span<const Vec3> prev, std::span<const Vec3> next, int substep,
                          int substeps, std::vector<Vec3>& out) {
  out.resize(prev.size());
  const double t = static_cast<double>(substep + 1) / static_cast<double>(substeps);
  for (std::size_t c = 0; c < prev.size(); ++c) out[c] = prev[c] + (next[c] - prev[c]) * t;
}

SystemState step(const SpringMassModel& model, const SystemState& state,
                 std::span<const Vec3> ctrl_prev, std::span<const Vec3> ctrl_next,
                 StepWorkspace& ws, std::size_t substep_offset) {
  if (ctrl_prev.size() < model.n_ctrl() || ctrl_next.size() != ctrl_prev.size()) {
    throw std::invalid_argument("step: control position count mismatch");
  }
  const int substeps = model.params().substeps;
  SystemState current = state;
  SystemState last_finite = state;
  std::vector<Vec3> ctrl;
  for (int s = 0; s < substeps; ++s) {
    interpolate_controls(ctrl_prev, ctrl_next, s, substeps, ctrl);
    advance_substep(model, current, ctrl, ws);
    if (kernels::first_non_finite(current.positions, current.velocities) < current.size()) {
      throw SimulationDiverged(substep_offset + static_cast<std::size_t>(s), std::move(last_finite));
    }
    if (s + 1 < substeps) last_finite = current;
  }
  return current;
}

namespace {

std::span<const Vec3> control_frame(const ControlScript& control, std::size_t t) {
  if (control.frames.empty()) return {};
  return control.frames[std::min(t, control.frames.size() - 1)];
}

}  // namespace

std::vector<SystemState> rollout(const SpringMassModel& model, const SystemState& initial,
                                 const ControlScript& control, std::size_t n_frames) {
  if (initial.size() != model.n_nodes() || initial.velocities.size() != model.n_nodes()) {
    throw std::invalid_argument("rollout: initial state does not match the model");
  }
  if (model.n_ctrl() > 0 && control.frames.size() < std::max<std::size_t>(n_frames, 1)) {
    throw std::invalid_argument("rollout: control script has " +
                                std::to_string(control.frames.size()) + " frames, need " +
                                std::to_string(n_frames));
  }
  std::vector<SystemState> states;
  states.reserve(n_frames + 1);
  states.push_back(initial);
  StepWorkspace ws;
  const auto substeps = static_cast<std::size_t>(model.params().substeps);
  for (std::size_t t = 0; t < n_frames; ++t) {
    states.push_back(step(model, states.back(), control_frame(control, t),
                          control_frame(control, t + 1), ws, t * substeps));
  }
  return states;
}

std::vector<ControlAttachment> canonical_attachments(const Scenario& scenario) {
  if (scenario.control.n_ctrl == 0 || scenario.control.frames.empty()) return {};
  const PhysParams& p = scenario.params;
  return attach_controls(scenario.control.frames.front(), scenario.initial_state.positions,
                         p.ctrl_radius, p.ctrl_max_neighbors, p.k_ctrl);
}

SpringMassModel make_model(const Scenario& scenario, ExecutionPolicy policy) {
  const PhysParams& p = scenario.params;
  const SpringTopology topo =
      scenario.topology ? *scenario.topology
                        : build_springs(scenario.initial_state.positions, p.topo_radius,
                                        p.topo_max_neighbors, p.k_hom);
  return SpringMassModel(topo, canonical_attachments(scenario), p, scenario.ground_height, policy);
}

std::vector<SystemState> rollout(const Scenario& scenario, std::size_t n_frames) {
  return rollout(make_model(scenario), scenario.initial_state, scenario.control, n_frames);
}

double kinetic_energy(const SpringMassModel& model, const SystemState& state) {
  double ke = 0.0;
  for (const Vec3& v : state.velocities) ke += squared_norm(v);
  return 0.5 * model.params().node_mass * ke;
}

double spring_potential(const SpringMassModel& model, const SystemState& state) {
  double pe = 0.0;
  const auto si = model.spring_i();
  const auto sj = model.spring_j();
  for (std::size_t s = 0; s < si.size(); ++s) {
    const double stretch = distance(state.positions[si[s]], state.positions[sj[s]]) - model.rest_length()[s];
    pe += 0.5 * model.stiffness()[s] * stretch * stretch;
  }
  return pe;
}

Vec3 linear_momentum(const SpringMassModel& model, const SystemState& state) {
  Vec3 p;
  for (const Vec3& v : state.velocities) p += v;
  return p * model.params().node_mass;
}

}  // namespace springtwin
