#include "springtwin/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "springtwin/kernels.hpp"

namespace springtwin {

namespace {

std::span<const Vec3> control_frame(const ControlScript& control, std::size_t t) {
  if (control.frames.empty()) return {};
  return control.frames[std::min(t, control.frames.size() - 1)];
}

void substep_controls(const Tape& tape, std::size_t global_substep, std::vector<Vec3>& out) {
  const auto substeps = static_cast<std::size_t>(tape.model.params().substeps);
  const std::size_t frame = global_substep / substeps;
  const int sub = static_cast<int>(global_substep % substeps);
  interpolate_controls(control_frame(tape.control, frame), control_frame(tape.control, frame + 1),
                       sub, static_cast<int>(substeps), out);
}

struct Adjoints {
  std::vector<Vec3> x;
  std::vector<Vec3> v;
  std::vector<double> k;
  double gamma = 0.0;
  double delta = 0.0;
  double e = 0.0;
  double mu = 0.0;
};

// Transpose of d f / d d for f = k (|d| - l) d / |d|, applied to g.
Vec3 spring_jacobian_t(const Vec3& u, double len, double stiffness, double rest, const Vec3& g) {
  const double ratio = rest / len;
  return (g * (1.0 - ratio) + u * (ratio * dot(u, g))) * stiffness;
}

struct Scratch {
  StepWorkspace ws;
  SystemState state;
  std::vector<Vec3> w;       // v + h/m F
  std::vector<Vec3> vel;     // velocities walked through the contact sequence
  std::vector<Vec3> pre_i;   // pre-contact velocity of i, per pair event
  std::vector<Vec3> pre_j;
  std::vector<Vec3> g_v;     // adjoint of velocities inside the collision stage
  std::vector<Vec3> g_f;     // adjoint of node forces
};

void backprop_substep(const SpringMassModel& model, const SystemState& start,
                      std::span<const Vec3> ctrl, const std::vector<CollisionEvent>& events,
                      Adjoints& adj, Scratch& sc) {
  const PhysParams& p = model.params();
  const double h = p.substep_dt();
  const double h_over_m = h / p.node_mass;
  const double e = p.restitution;
  const double mu = p.friction;
  const std::size_t n = model.n_nodes();
  const auto& x = start.positions;
  const auto& v = start.velocities;

  // Recompute the forward intermediates of this substep.
  sc.state.positions = x;
  sc.state.velocities = v;
  accumulate_forces(model, sc.state, ctrl, sc.ws);
  sc.w.resize(n);
  sc.vel.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sc.w[i] = v[i] + sc.ws.forces[i] * h_over_m;
    sc.vel[i] = sc.w[i] * p.delta;
  }
  sc.pre_i.clear();
  sc.pre_j.clear();
  for (const CollisionEvent& ev : events) {
    if (ev.kind != CollisionEvent::Kind::point_point) continue;
    const Vec3 d = x[ev.i] - x[ev.j];
    const Vec3 nrm = d / norm(d);
    const Vec3 wr = sc.vel[ev.i] - sc.vel[ev.j];
    const double vn = dot(wr, nrm);
    sc.pre_i.push_back(sc.vel[ev.i]);
    sc.pre_j.push_back(sc.vel[ev.j]);
    const Vec3 dv = nrm * (-(1.0 + e) * vn) - (wr - nrm * vn) * mu;
    sc.vel[ev.i] += dv * 0.5;
    sc.vel[ev.j] -= dv * 0.5;
  }
  // sc.vel now holds the velocities entering the ground stage.

  // x' = clamp(x) + h v'
  sc.g_v.resize(n);
  for (std::size_t i = 0; i < n; ++i) sc.g_v[i] = adj.v[i] + adj.x[i] * h;
  for (const CollisionEvent& ev : events) {
    if (ev.kind == CollisionEvent::Kind::point_ground && ev.clamped) adj.x[ev.i].z = 0.0;
  }

  // Ground contacts: v' = ((1-mu) vx, (1-mu) vy, -e vz)
  for (const CollisionEvent& ev : events) {
    if (ev.kind != CollisionEvent::Kind::point_ground) continue;
    const Vec3& pre = sc.vel[ev.i];
    Vec3& g = sc.g_v[ev.i];
    adj.e += -g.z * pre.z;
    adj.mu += -(g.x * pre.x + g.y * pre.y);
    g = {g.x * (1.0 - mu), g.y * (1.0 - mu), -e * g.z};
  }

  // Point-point contacts, reverse application order.
  std::size_t pair_index = sc.pre_i.size();
  for (auto it = events.rbegin(); it != events.rend(); ++it) {
    const CollisionEvent& ev = *it;
    if (ev.kind != CollisionEvent::Kind::point_point) continue;
    --pair_index;
    const Vec3 d = x[ev.i] - x[ev.j];
    const double len = norm(d);
    const Vec3 nrm = d / len;
    const Vec3 wr = sc.pre_i[pair_index] - sc.pre_j[pair_index];
    const double vn = dot(wr, nrm);
    const double c = 1.0 + e - mu;
    const Vec3 g_dv = (sc.g_v[ev.i] - sc.g_v[ev.j]) * 0.5;
    const double n_g = dot(nrm, g_dv);
    const Vec3 g_w = nrm * (-c * n_g) - g_dv * mu;
    sc.g_v[ev.i] += g_w;
    sc.g_v[ev.j] -= g_w;
    adj.e += -vn * n_g;
    adj.mu += vn * n_g - dot(wr, g_dv);
    const Vec3 g_n = (wr * n_g + g_dv * vn) * (-c);
    const Vec3 g_d = (g_n - nrm * dot(nrm, g_n)) / len;
    adj.x[ev.i] += g_d;
    adj.x[ev.j] -= g_d;
  }

  // v1 = delta * (v + h/m F)
  sc.g_f.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    adj.delta += dot(sc.g_v[i], sc.w[i]);
    const Vec3 g_w = sc.g_v[i] * p.delta;
    adj.v[i] = g_w;
    sc.g_f[i] = g_w * h_over_m;
  }

  // Spring and dashpot forces.
  const auto si = model.spring_i();
  const auto sj = model.spring_j();
  const auto rest = model.rest_length();
  const auto k = model.stiffness();
  for (std::size_t s = 0; s < si.size(); ++s) {
    const NodeIndex i = si[s];
    const NodeIndex j = sj[s];
    const Vec3 g = sc.g_f[i] - sc.g_f[j];
    adj.v[i] += g * (-p.gamma);
    adj.v[j] += g * p.gamma;
    adj.gamma += -dot(v[i] - v[j], g);
    const Vec3 d = x[j] - x[i];
    const double len = norm(d);
    if (len < kDegenerateLength) continue;
    const Vec3 u = d / len;
    adj.k[s] += dot(g, u) * (len - rest[s]);
    const Vec3 g_d = spring_jacobian_t(u, len, k[s], rest[s], g);
    adj.x[j] += g_d;
    adj.x[i] -= g_d;
  }
  for (const ControlAttachment& att : model.attachments()) {
    const Vec3 d = ctrl[att.ctrl_index] - x[att.node_index];
    const double len = norm(d);
    if (len < kDegenerateLength) continue;
    const Vec3 g_d =
        spring_jacobian_t(d / len, len, att.stiffness, att.rest_length, sc.g_f[att.node_index]);
    adj.x[att.node_index] -= g_d;
  }
}

// d cost / d x_t for one window frame, added into g.
void add_frame_gradient(const Tape& tape, std::size_t frame, const std::vector<Vec3>& positions,
                        std::vector<Vec3>& g) {
  const std::size_t local = frame - tape.window.begin;
  const ObservationFrame& fr = tape.frames[local];
  const double per_frame = 1.0 / static_cast<double>(tape.window.size());
  if (!fr.partial_cloud.empty()) {
    const double scale = tape.weights.cd * per_frame / static_cast<double>(fr.partial_cloud.size());
    const auto& assign = tape.correspondences[local];
    for (std::size_t k = 0; k < fr.partial_cloud.size(); ++k) {
      const Vec3 diff = positions[assign[k]] - fr.partial_cloud[k];
      const double len = norm(diff);
      if (len > 0.0) g[assign[k]] += diff * (scale / len);
    }
  }
  if (!fr.track_ids.empty()) {
    const double scale = tape.weights.track * per_frame * 2.0 / static_cast<double>(fr.track_ids.size());
    for (std::size_t k = 0; k < fr.track_ids.size(); ++k) {
      g[fr.track_ids[k]] += (positions[fr.track_ids[k]] - fr.track_positions[k]) * scale;
    }
  }
}

}  // namespace

TapedCost forward_with_tape(const SpringMassModel& model, const SystemState& initial,
                            const ControlScript& control, const ObservationSequence& obs,
                            const CostWeights& weights, FrameWindow window, TapeOptions options) {
  if (window.end > obs.frames.size() || window.begin > window.end) {
    throw std::invalid_argument("forward_with_tape: window outside the observation");
  }
  if (options.mode == TapeMode::checkpointed && options.checkpoint_interval == 0) {
    throw std::invalid_argument("forward_with_tape: checkpoint interval must be > 0");
  }
  TapedCost out{CostBreakdown{}, Tape{model, control, weights, window, options, 0, {}, {}, {}, {}}};
  Tape& tape = out.tape;
  tape.n_steps = window.empty() ? 0 : window.end - 1;
  if (model.n_ctrl() > 0 && control.frames.size() < std::max<std::size_t>(tape.n_steps, 1)) {
    throw std::invalid_argument("forward_with_tape: control script too short");
  }

  const auto substeps = static_cast<std::size_t>(model.params().substeps);
  const std::size_t total = tape.n_steps * substeps;
  tape.events.resize(total);

  std::vector<SystemState> frame_states;
  frame_states.reserve(tape.n_steps + 1);
  frame_states.push_back(initial);

  SystemState current = initial;
  StepWorkspace ws;
  std::vector<Vec3> ctrl;
  for (std::size_t t = 0; t < tape.n_steps; ++t) {
    const auto prev = control_frame(control, t);
    const auto next = control_frame(control, t + 1);
    for (std::size_t s = 0; s < substeps; ++s) {
      const std::size_t global = t * substeps + s;
      if (options.mode == TapeMode::full || global % options.checkpoint_interval == 0) {
        tape.snapshots.push_back(current);
      }
      const SystemState before = current;
      interpolate_controls(prev, next, static_cast<int>(s), static_cast<int>(substeps), ctrl);
      advance_substep(model, current, ctrl, ws);
      if (kernels::first_non_finite(current.positions, current.velocities) < current.size()) {
        throw SimulationDiverged(global, before);
      }
      tape.events[global] = ws.events;
    }
    frame_states.push_back(current);
  }
  if (tape.snapshots.empty()) tape.snapshots.push_back(initial);

  out.cost = trajectory_cost(frame_states, obs, weights, window);
  for (std::size_t f = window.begin; f < window.end; ++f) {
    tape.frames.push_back(obs.frames[f]);
    tape.correspondences.push_back(
        nearest_assignment(obs.frames[f].partial_cloud, frame_states[f].positions));
  }
  return out;
}

TapedCost forward_with_tape(const Scenario& scenario, const ObservationSequence& obs,
                            const CostWeights& weights, TapeOptions options) {
  return forward_with_tape(make_model(scenario), scenario.initial_state, scenario.control, obs,
                           weights, FrameWindow{0, obs.frames.size()}, options);
}

ParamGradient backward(const Tape& tape, FrozenParams frozen) {
  const SpringMassModel& model = tape.model;
  const std::size_t n = model.n_nodes();
  const auto substeps = static_cast<std::size_t>(model.params().substeps);
  const std::size_t total = tape.length();

  Adjoints adj;
  adj.x.assign(n, Vec3{});
  adj.v.assign(n, Vec3{});
  adj.k.assign(model.n_springs(), 0.0);

  Scratch scratch;
  std::vector<Vec3> ctrl;
  std::vector<SystemState> segment;
  StepWorkspace replay_ws;

  const std::size_t interval =
      tape.options.mode == TapeMode::full ? 1 : tape.options.checkpoint_interval;
  const std::size_t n_segments = total == 0 ? 0 : (total + interval - 1) / interval;

  for (std::size_t seg = n_segments; seg-- > 0;) {
    const std::size_t begin = seg * interval;
    const std::size_t end = std::min(begin + interval, total);

    // Substep-start states for this segment.
    segment.clear();
    segment.push_back(tape.snapshots[seg]);
    for (std::size_t g = begin; g + 1 < end; ++g) {
      SystemState next = segment.back();
      substep_controls(tape, g, ctrl);
      advance_substep(model, next, ctrl, replay_ws);
      segment.push_back(std::move(next));
    }

    for (std::size_t g = end; g-- > begin;) {
      if ((g + 1) % substeps == 0) {
        const std::size_t frame = (g + 1) / substeps;
        if (frame >= tape.window.begin && frame < tape.window.end) {
          // State at the end of substep g: recompute it from the start state.
          SystemState after = segment[g - begin];
          substep_controls(tape, g, ctrl);
          advance_substep(model, after, ctrl, replay_ws);
          add_frame_gradient(tape, frame, after.positions, adj.x);
        }
      }
      substep_controls(tape, g, ctrl);
      backprop_substep(model, segment[g - begin], ctrl, tape.events[g], adj, scratch);
    }
  }

  ParamGradient grad;
  grad.d_log_k.resize(model.n_springs());
  const auto k = model.stiffness();
  for (std::size_t s = 0; s < grad.d_log_k.size(); ++s) {
    grad.d_log_k[s] = frozen.stiffness ? 0.0 : adj.k[s] * k[s];
  }
  grad.d_gamma = frozen.gamma ? 0.0 : adj.gamma;
  grad.d_delta = frozen.delta ? 0.0 : adj.delta;
  grad.d_e = frozen.restitution ? 0.0 : adj.e;
  grad.d_mu = frozen.friction ? 0.0 : adj.mu;
  return grad;
}

}  // namespace springtwin
