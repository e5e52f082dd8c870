#include "springtwin/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <stdexcept>

#include "springtwin/dynamics.hpp"
#include "springtwin/log.hpp"
#include "springtwin/rng.hpp"
#include "springtwin/serialize.hpp"
#include "springtwin/topology.hpp"

namespace springtwin {

ViewConfig ViewConfig::three_view() {
  ViewConfig v;
  v.cameras = {Vec3{0.0, -1.0, 0.6}, Vec3{0.9, 0.5, 0.6}, Vec3{-0.9, 0.5, 0.6}};
  return v;
}

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::rope: return "rope";
    case ObjectKind::cloth: return "cloth";
    case ObjectKind::box: return "box";
  }
  return "?";
}

std::string to_string(ScriptKind kind) {
  switch (kind) {
    case ScriptKind::lift: return "lift";
    case ScriptKind::stretch: return "stretch";
    case ScriptKind::push: return "push";
    case ScriptKind::fold: return "fold";
  }
  return "?";
}

ScriptKind script_from_name(const std::string& name) {
  for (ScriptKind k : {ScriptKind::lift, ScriptKind::stretch, ScriptKind::push, ScriptKind::fold}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown script '" + name + "' (lift, stretch, push, fold)");
}

ScenarioTemplate template_from_name(const std::string& name, std::uint64_t seed) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) {
    throw std::invalid_argument("template name must look like <object>-<script>[-split], got '" + name + "'");
  }
  const std::string object = name.substr(0, dash);
  std::string rest = name.substr(dash + 1);
  bool split = false;
  if (const auto d2 = rest.find('-'); d2 != std::string::npos) {
    if (rest.substr(d2 + 1) != "split") throw std::invalid_argument("unknown template suffix in '" + name + "'");
    split = true;
    rest = rest.substr(0, d2);
  }

  ScenarioTemplate t;
  t.seed = seed;
  t.script = script_from_name(rest);
  if (object == "rope") {
    t.kind = ObjectKind::rope;
    t.nx = 40;
    t.spacing = 0.01;
    t.params.topo_radius = 0.015;
    t.params.topo_max_neighbors = 4;
    t.params.ctrl_radius = 0.015;
    t.grasp_radius = 0.021;
  } else if (object == "cloth") {
    t.kind = ObjectKind::cloth;
    t.nx = t.ny = 10;
    t.spacing = 0.02;
    t.params.topo_radius = 0.03;
    t.params.topo_max_neighbors = 8;
    t.params.ctrl_radius = 0.03;
    t.grasp_radius = 0.041;
    t.amplitude = 0.15;
  } else if (object == "box") {
    t.kind = ObjectKind::box;
    t.nx = t.ny = t.nz = 5;
    t.spacing = 0.02;
    t.params.topo_radius = 0.035;
    t.params.topo_max_neighbors = 12;
    t.params.ctrl_radius = 0.03;
    t.grasp_radius = 0.041;
    t.amplitude = 0.12;
  } else {
    throw std::invalid_argument("unknown object '" + object + "' (rope, cloth, box)");
  }
  if (split) {
    const double mid = 0.5 * static_cast<double>(t.nx - 1) * t.spacing;
    t.stiffness_split = StiffnessSplit{mid, 5000.0, 500.0};  // stiff half, soft half
  }
  return t;
}

std::vector<Vec3> lattice_points(const ScenarioTemplate& tmpl) {
  if (!(tmpl.spacing > 0.0)) throw std::invalid_argument("lattice: spacing must be > 0");
  const bool ok = tmpl.nx >= 2 && (tmpl.kind == ObjectKind::rope || tmpl.ny >= 2) &&
                  (tmpl.kind != ObjectKind::box || tmpl.nz >= 2);
  if (!ok) throw std::invalid_argument("lattice: need at least 2 nodes per axis");
  std::vector<Vec3> pts;
  const double s = tmpl.spacing;
  switch (tmpl.kind) {
    case ObjectKind::rope:
      for (std::size_t i = 0; i < tmpl.nx; ++i) pts.push_back({static_cast<double>(i) * s, 0.0, 0.0});
      break;
    case ObjectKind::cloth:
      for (std::size_t j = 0; j < tmpl.ny; ++j)
        for (std::size_t i = 0; i < tmpl.nx; ++i)
          pts.push_back({static_cast<double>(i) * s, static_cast<double>(j) * s, 0.0});
      break;
    case ObjectKind::box:
      // Surface shell only: the interior is invisible to every camera anyway.
      for (std::size_t k = 0; k < tmpl.nz; ++k)
        for (std::size_t j = 0; j < tmpl.ny; ++j)
          for (std::size_t i = 0; i < tmpl.nx; ++i) {
            const bool surface = i == 0 || j == 0 || k == 0 || i + 1 == tmpl.nx ||
                                 j + 1 == tmpl.ny || k + 1 == tmpl.nz;
            if (surface) {
              pts.push_back({static_cast<double>(i) * s, static_cast<double>(j) * s,
                             static_cast<double>(k) * s});
            }
          }
      break;
  }
  return pts;
}

namespace {

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct Grasp {
  Vec3 anchor;
  std::vector<std::size_t> nodes;
};

Grasp grasp_at(const ScenarioTemplate& tmpl, const std::vector<Vec3>& nodes, Vec3 anchor) {
  std::vector<std::size_t> candidates;
  std::size_t nearest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (squared_distance(nodes[i], anchor) < squared_distance(nodes[nearest], anchor)) nearest = i;
  }
  // Keep the nearest node first so it seeds the sampling.
  candidates.push_back(nearest);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i != nearest && distance(nodes[i], nodes[nearest]) <= tmpl.grasp_radius) candidates.push_back(i);
  }
  std::vector<Vec3> pts;
  for (std::size_t c : candidates) pts.push_back(nodes[c]);
  const std::size_t k = std::min(tmpl.ctrl_per_grasp, candidates.size());
  Grasp g{anchor, {}};
  for (std::size_t idx : farthest_point_sample_from(pts, k, 0)) g.nodes.push_back(candidates[idx]);
  return g;
}

}  // namespace

ControlScript make_control_script(const ScenarioTemplate& tmpl, const std::vector<Vec3>& nodes,
                                  ScriptKind script) {
  if (tmpl.n_frames < 2) throw std::invalid_argument("control script: need at least 2 frames");
  Vec3 lo = nodes.front(), hi = nodes.front();
  for (const Vec3& p : nodes) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Vec3 mid = (lo + hi) * 0.5;
  const double a = tmpl.amplitude;

  // Each grasp moves rigidly by offset(s), s in [0, 1] the eased progress.
  std::vector<Grasp> grasps;
  std::vector<std::function<Vec3(double)>> offsets;
  switch (script) {
    case ScriptKind::lift:
      grasps.push_back(grasp_at(tmpl, nodes, {lo.x, mid.y, hi.z}));
      offsets.emplace_back([a](double s) { return Vec3{0.0, 0.0, a * s}; });
      break;
    case ScriptKind::stretch:
      grasps.push_back(grasp_at(tmpl, nodes, {lo.x, mid.y, hi.z}));
      grasps.push_back(grasp_at(tmpl, nodes, {hi.x, mid.y, hi.z}));
      offsets.emplace_back([a](double s) { return Vec3{-0.3 * a * s, 0.0, a * s}; });
      offsets.emplace_back([a](double s) { return Vec3{0.3 * a * s, 0.0, a * s}; });
      break;
    case ScriptKind::push:
      grasps.push_back(grasp_at(tmpl, nodes, {mid.x, lo.y, lo.z}));
      offsets.emplace_back([a](double s) { return Vec3{0.0, a * s, 0.0}; });
      break;
    case ScriptKind::fold: {
      grasps.push_back(grasp_at(tmpl, nodes, {hi.x, mid.y, hi.z}));
      const double r = 0.5 * a;
      offsets.emplace_back([r](double s) {
        const double th = std::numbers::pi * s;
        return Vec3{r * std::cos(th) - r, 0.0, r * std::sin(th)};
      });
      break;
    }
  }

  ControlScript c;
  for (const Grasp& g : grasps) c.n_ctrl += g.nodes.size();
  const double fps = 1.0 / tmpl.params.dt;
  const double duration =
      tmpl.duration > 0.0 ? tmpl.duration : static_cast<double>(tmpl.n_frames - 1) / fps;
  for (std::size_t f = 0; f < tmpl.n_frames; ++f) {
    const double s = smoothstep(static_cast<double>(f) / fps / duration);
    std::vector<Vec3> frame;
    for (std::size_t g = 0; g < grasps.size(); ++g) {
      const Vec3 off = offsets[g](s);
      for (std::size_t n : grasps[g].nodes) frame.push_back(nodes[n] + off);
    }
    c.frames.push_back(std::move(frame));
  }
  return c;
}

SyntheticBundle generate_scenario(const ScenarioTemplate& tmpl) {
  if (const auto errs = validate_params(tmpl.params); !errs.empty()) {
    throw std::invalid_argument("template params: " + errs.front());
  }
  const std::vector<Vec3> nodes = lattice_points(tmpl);
  SpringTopology topo =
      build_springs(nodes, tmpl.params.topo_radius, tmpl.params.topo_max_neighbors, tmpl.params.k_hom);
  if (tmpl.stiffness_split) {
    const StiffnessSplit& sp = *tmpl.stiffness_split;
    for (Spring& s : topo.springs) {
      const double mx = 0.5 * (nodes[s.i].x + nodes[s.j].x);
      s.stiffness = mx < sp.split_x ? sp.k_low_x : sp.k_high_x;
    }
  }

  SyntheticBundle b;
  Scenario& sc = b.truth;
  sc.name = to_string(tmpl.kind) + "-" + to_string(tmpl.script);
  sc.initial_state = SystemState::at_rest(nodes);
  sc.topology = std::move(topo);
  sc.params = tmpl.params;
  sc.control = make_control_script(tmpl, nodes, tmpl.script);
  sc.ground_height = 0.0;

  try {
    b.trajectory = rollout(make_model(sc), sc.initial_state, sc.control, tmpl.n_frames - 1);
  } catch (const SimulationDiverged& e) {
    throw std::runtime_error(std::string("true parameters diverge (") + e.what() +
                             "); lower dt or raise the substep count");
  }
  b.observation.control = sc.control;
  b.observation.fps = 1.0 / tmpl.params.dt;
  return b;
}

namespace {

struct CellKey {
  std::int64_t a, b;
  auto operator<=>(const CellKey&) const = default;
};

// Nodes that win their projected cell in a depth buffer seen from `camera`.
void visible_from(const Vec3& camera, const Vec3& look_at, double cell, std::span<const Vec3> x,
                  std::vector<char>& visible) {
  Vec3 dir = look_at - camera;
  dir = dir * (1.0 / norm(dir));
  Vec3 up{0.0, 0.0, 1.0};
  if (norm(cross(dir, up)) < 1e-6) up = {1.0, 0.0, 0.0};
  Vec3 u1 = cross(dir, up);
  u1 = u1 * (1.0 / norm(u1));
  const Vec3 u2 = cross(u1, dir);

  std::map<CellKey, std::pair<double, std::size_t>> zbuf;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec3 r = x[i] - camera;
    const double depth = dot(r, dir);
    if (depth <= 0.0) continue;  // behind the camera
    const CellKey key{static_cast<std::int64_t>(std::floor(dot(r, u1) / cell)),
                      static_cast<std::int64_t>(std::floor(dot(r, u2) / cell))};
    auto [it, inserted] = zbuf.try_emplace(key, depth, i);
    if (!inserted && depth < it->second.first) it->second = {depth, i};
  }
  for (const auto& [key, hit] : zbuf) visible[hit.second] = 1;
}

}  // namespace

ObservationSequence observe(const std::vector<SystemState>& trajectory, const ControlScript& control,
                            const ViewConfig& view, std::uint64_t seed, double fps) {
  if (trajectory.empty()) throw std::invalid_argument("observe: empty trajectory");
  if (view.cameras.empty()) throw std::invalid_argument("observe: no cameras");
  if (!(view.cell_size > 0.0)) throw std::invalid_argument("observe: cell size must be > 0");
  if (view.track_fraction < 0.0 || view.track_fraction > 1.0) {
    throw std::invalid_argument("observe: track fraction must be in [0, 1]");
  }
  const std::size_t n = trajectory.front().size();
  Rng rng(seed);

  // Tracked subset, fixed over the sequence.
  std::vector<NodeIndex> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<NodeIndex>(i);
  const auto m = static_cast<std::size_t>(std::lround(view.track_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + rng.uniform_index(n - i)]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());

  Vec3 look_at;
  for (const Vec3& p : trajectory.front().positions) look_at += p;
  look_at = look_at * (1.0 / static_cast<double>(n));

  ObservationSequence obs;
  obs.control = control;
  obs.fps = fps;
  std::vector<char> visible(n);
  for (const SystemState& st : trajectory) {
    if (st.size() != n) throw std::invalid_argument("observe: node count changes along the trajectory");
    std::fill(visible.begin(), visible.end(), 0);
    for (const Vec3& cam : view.cameras) visible_from(cam, look_at, view.cell_size, st.positions, visible);
    ObservationFrame f;
    for (std::size_t i = 0; i < n; ++i) {
      if (!visible[i]) continue;
      const Vec3 noise{rng.normal(), rng.normal(), rng.normal()};
      f.partial_cloud.push_back(st.positions[i] + noise * view.noise_sigma);
    }
    f.track_ids = ids;
    for (NodeIndex id : ids) {
      const Vec3 noise{rng.normal(), rng.normal(), rng.normal()};
      f.track_positions.push_back(st.positions[id] + noise * view.track_noise_sigma);
    }
    obs.frames.push_back(std::move(f));
  }
  return obs;
}

std::pair<FrameWindow, FrameWindow> split_train_test(std::size_t n_frames, double ratio) {
  if (n_frames < 2) throw std::invalid_argument("split: need at least 2 frames");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0, 1)");
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_frames) + 0.5));
  n_train = std::clamp<std::size_t>(n_train, 1, n_frames - 1);
  return {FrameWindow{0, n_train}, FrameWindow{n_train, n_frames}};
}

std::pair<FrameWindow, FrameWindow> split_train_test(const ObservationSequence& obs, double ratio) {
  return split_train_test(obs.frames.size(), ratio);
}

SyntheticBundle generate_bundle(const ScenarioTemplate& tmpl, const ViewConfig& view,
                                std::uint64_t observe_seed) {
  SyntheticBundle b = generate_scenario(tmpl);
  b.observation = observe(b.trajectory, b.truth.control, view, observe_seed, 1.0 / tmpl.params.dt);
  return b;
}

std::pair<SyntheticBundle, SyntheticBundle> generalization_pair(const ScenarioTemplate& tmpl,
                                                                ScriptKind source,
                                                                ScriptKind target,
                                                                const ViewConfig& view,
                                                                std::uint64_t observe_seed) {
  if (source == target) {
    logger()->warn("generalization pair with identical scripts: evaluation reduces to resimulation");
  }
  ScenarioTemplate a = tmpl, b = tmpl;
  a.script = source;
  b.script = target;
  return {generate_bundle(a, view, observe_seed), generate_bundle(b, view, observe_seed + 1)};
}

Scenario canonical_scenario(const Scenario& truth) {
  Scenario s;
  s.name = truth.name;
  s.initial_state = SystemState::at_rest(truth.initial_state.positions);
  s.control = truth.control;
  s.ground_height = truth.ground_height;
  s.params.node_mass = truth.params.node_mass;
  s.params.gravity = truth.params.gravity;
  s.params.dt = truth.params.dt;
  s.params.substeps = truth.params.substeps;
  return s;
}

void write_bundle(const std::filesystem::path& dir, const SyntheticBundle& bundle) {
  std::filesystem::create_directories(dir);
  save(dir / "scenario.json", canonical_scenario(bundle.truth));
  save(dir / "observation.json", bundle.observation);
  nlohmann::json gt;
  gt["v"] = kSchemaVersion;
  gt["scenario"] = bundle.truth;
  gt["states"] = bundle.trajectory;
  write_json_file(dir / "ground_truth.json", gt);
  write_trajectory_jsonl(dir / "trajectory.jsonl", bundle.trajectory, bundle.truth.control);
}

LoadedBundle read_bundle(const std::filesystem::path& dir) {
  LoadedBundle b;
  b.scenario = load<Scenario>(dir / "scenario.json");
  b.observation = load<ObservationSequence>(dir / "observation.json");
  if (std::filesystem::exists(dir / "ground_truth.json")) {
    const nlohmann::json gt = read_json_file(dir / "ground_truth.json");
    b.truth = gt.at("scenario").get<Scenario>();
    b.truth_states = gt.at("states").get<std::vector<SystemState>>();
  }
  return b;
}

}  // namespace springtwin
