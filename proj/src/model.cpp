#include "springtwin/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

namespace springtwin {

namespace {

std::string str(std::size_t v) { return std::to_string(v); }

void check_points(const std::vector<Vec3>& pts, const std::string& what,
                  std::vector<std::string>& out) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!is_finite(pts[i])) out.push_back(what + " " + str(i) + ": non-finite");
  }
}

}  // namespace

std::vector<std::string> validate_params(const PhysParams& p) {
  std::vector<std::string> out;
  auto require = [&](bool ok, const char* msg) {
    if (!ok) out.emplace_back(msg);
  };
  require(std::isfinite(p.k_hom) && p.k_hom > 0.0, "params.k_hom: must be finite and > 0");
  require(std::isfinite(p.gamma) && p.gamma >= 0.0, "params.gamma: must be finite and >= 0");
  require(std::isfinite(p.delta) && p.delta > 0.0 && p.delta <= 1.0,
          "params.delta: must lie in (0, 1]");
  require(p.restitution >= 0.0 && p.restitution <= 1.0, "params.restitution: must lie in [0, 1]");
  require(p.friction >= 0.0 && p.friction <= 1.0, "params.friction: must lie in [0, 1]");
  require(std::isfinite(p.collision_dist) && p.collision_dist >= 0.0,
          "params.collision_dist: must be finite and >= 0");
  require(std::isfinite(p.topo_radius) && p.topo_radius > 0.0,
          "params.topo_radius: must be finite and > 0");
  require(p.topo_max_neighbors >= 1, "params.topo_max_neighbors: must be >= 1");
  require(std::isfinite(p.ctrl_radius) && p.ctrl_radius > 0.0,
          "params.ctrl_radius: must be finite and > 0");
  require(p.ctrl_max_neighbors >= 1, "params.ctrl_max_neighbors: must be >= 1");
  require(std::isfinite(p.k_ctrl) && p.k_ctrl > 0.0, "params.k_ctrl: must be finite and > 0");
  require(std::isfinite(p.node_mass) && p.node_mass > 0.0,
          "params.node_mass: must be finite and > 0");
  require(is_finite(p.gravity), "params.gravity: non-finite");
  require(std::isfinite(p.dt) && p.dt > 0.0, "params.dt: must be finite and > 0");
  require(p.substeps >= 1, "params.substeps: must be >= 1");
  return out;
}

std::vector<std::string> validate_topology(const SpringTopology& t) {
  std::vector<std::string> out;
  std::set<std::pair<NodeIndex, NodeIndex>> seen;
  for (std::size_t s = 0; s < t.springs.size(); ++s) {
    const Spring& sp = t.springs[s];
    const std::string tag = "spring " + str(s) + ": ";
    if (sp.i == sp.j) {
      out.push_back(tag + "self-loop");
      continue;
    }
    if (sp.i >= t.n_nodes || sp.j >= t.n_nodes) out.push_back(tag + "index out of range");
    if (sp.i > sp.j) out.push_back(tag + "endpoints not ordered (i < j)");
    if (!(std::isfinite(sp.rest_length) && sp.rest_length > 0.0))
      out.push_back(tag + "rest_length must be finite and > 0");
    if (!(std::isfinite(sp.stiffness) && sp.stiffness > 0.0))
      out.push_back(tag + "stiffness must be finite and > 0");
    const auto key = std::minmax(sp.i, sp.j);
    if (!seen.insert({key.first, key.second}).second) out.push_back(tag + "duplicate edge");
  }
  return out;
}

std::vector<std::string> validate_control(const ControlScript& c) {
  std::vector<std::string> out;
  for (std::size_t f = 0; f < c.frames.size(); ++f) {
    if (c.frames[f].size() != c.n_ctrl) {
      out.push_back("control frame " + str(f) + ": has " + str(c.frames[f].size()) +
                    " positions, expected n_ctrl = " + str(c.n_ctrl));
    }
    check_points(c.frames[f], "control frame " + str(f) + " position", out);
  }
  return out;
}

std::vector<std::string> validate_observations(const ObservationSequence& obs,
                                               std::size_t n_nodes) {
  std::vector<std::string> out = validate_control(obs.control);
  if (obs.frames.size() != obs.control.frames.size()) {
    out.push_back("observation: length mismatch, " + str(obs.frames.size()) +
                  " observation frames vs " + str(obs.control.frames.size()) + " control frames");
  }
  if (!(std::isfinite(obs.fps) && obs.fps > 0.0)) out.push_back("observation.fps: must be > 0");
  for (std::size_t f = 0; f < obs.frames.size(); ++f) {
    const ObservationFrame& fr = obs.frames[f];
    const std::string tag = "observation frame " + str(f);
    if (fr.track_ids.size() != fr.track_positions.size())
      out.push_back(tag + ": track_ids and track_positions differ in length");
    for (NodeIndex id : fr.track_ids) {
      if (id >= n_nodes) out.push_back(tag + ": track id " + str(id) + " out of range");
    }
    check_points(fr.partial_cloud, tag + " cloud point", out);
    check_points(fr.track_positions, tag + " track position", out);
  }
  return out;
}

std::vector<std::string> validate_scenario(const Scenario& s) {
  std::vector<std::string> out;
  if (s.initial_state.positions.size() != s.initial_state.velocities.size()) {
    out.push_back("initial_state: positions and velocities differ in length");
  }
  check_points(s.initial_state.positions, "initial_state position", out);
  check_points(s.initial_state.velocities, "initial_state velocity", out);
  if (s.topology) {
    if (s.topology->n_nodes != s.initial_state.positions.size()) {
      out.push_back("topology.n_nodes: " + str(s.topology->n_nodes) +
                    " disagrees with initial_state node count " +
                    str(s.initial_state.positions.size()));
    }
    auto t = validate_topology(*s.topology);
    out.insert(out.end(), t.begin(), t.end());
  }
  auto p = validate_params(s.params);
  out.insert(out.end(), p.begin(), p.end());
  auto c = validate_control(s.control);
  out.insert(out.end(), c.begin(), c.end());
  if (!std::isfinite(s.ground_height)) out.push_back("ground_height: non-finite");
  return out;
}

std::vector<std::string> validate_pairing(const Scenario& s, const ObservationSequence& obs) {
  std::vector<std::string> out = validate_observations(obs, s.initial_state.size());
  if (s.control.frames.size() != obs.frames.size()) {
    out.push_back("length mismatch: scenario control has " + str(s.control.frames.size()) +
                  " frames, observation has " + str(obs.frames.size()));
  }
  return out;
}

double extent(const std::vector<Vec3>& points) {
  if (points.size() < 2) return 0.0;
  Vec3 lo = points.front();
  Vec3 hi = points.front();
  for (const Vec3& p : points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  return norm(hi - lo);
}

}  // namespace springtwin
