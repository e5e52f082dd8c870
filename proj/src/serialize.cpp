#include "springtwin/serialize.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace springtwin {

using nlohmann::json;

void to_json(json& j, const Vec3& v) { j = json::array({v.x, v.y, v.z}); }

void from_json(const json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("Vec3 must be a [x, y, z] array");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(json& j, const SystemState& s) {
  j = json{{"positions", s.positions}, {"velocities", s.velocities}};
}

void from_json(const json& j, SystemState& s) {
  j.at("positions").get_to(s.positions);
  if (j.contains("velocities")) {
    j.at("velocities").get_to(s.velocities);
  } else {
    s.velocities.assign(s.positions.size(), Vec3{});
  }
}

void to_json(json& j, const Spring& s) {
  j = json{{"i", s.i}, {"j", s.j}, {"rest_length", s.rest_length}, {"stiffness", s.stiffness}};
}

void from_json(const json& j, Spring& s) {
  j.at("i").get_to(s.i);
  j.at("j").get_to(s.j);
  j.at("rest_length").get_to(s.rest_length);
  j.at("stiffness").get_to(s.stiffness);
}

void to_json(json& j, const SpringTopology& t) {
  j = json{{"n_nodes", t.n_nodes}, {"springs", t.springs}};
}

void from_json(const json& j, SpringTopology& t) {
  j.at("n_nodes").get_to(t.n_nodes);
  j.at("springs").get_to(t.springs);
}

void to_json(json& j, const PhysParams& p) {
  j = json{{"k_hom", p.k_hom},
           {"gamma", p.gamma},
           {"delta", p.delta},
           {"restitution", p.restitution},
           {"friction", p.friction},
           {"collision_dist", p.collision_dist},
           {"topo_radius", p.topo_radius},
           {"topo_max_neighbors", p.topo_max_neighbors},
           {"ctrl_radius", p.ctrl_radius},
           {"ctrl_max_neighbors", p.ctrl_max_neighbors},
           {"k_ctrl", p.k_ctrl},
           {"node_mass", p.node_mass},
           {"gravity", p.gravity},
           {"dt", p.dt},
           {"substeps", p.substeps}};
}

void from_json(const json& j, PhysParams& p) {
  // Absent keys keep their defaults so hand-written configs can be partial.
  PhysParams d;
  p.k_hom = j.value("k_hom", d.k_hom);
  p.gamma = j.value("gamma", d.gamma);
  p.delta = j.value("delta", d.delta);
  p.restitution = j.value("restitution", d.restitution);
  p.friction = j.value("friction", d.friction);
  p.collision_dist = j.value("collision_dist", d.collision_dist);
  p.topo_radius = j.value("topo_radius", d.topo_radius);
  p.topo_max_neighbors = j.value("topo_max_neighbors", d.topo_max_neighbors);
  p.ctrl_radius = j.value("ctrl_radius", d.ctrl_radius);
  p.ctrl_max_neighbors = j.value("ctrl_max_neighbors", d.ctrl_max_neighbors);
  p.k_ctrl = j.value("k_ctrl", d.k_ctrl);
  p.node_mass = j.value("node_mass", d.node_mass);
  p.gravity = j.contains("gravity") ? j.at("gravity").get<Vec3>() : d.gravity;
  p.dt = j.value("dt", d.dt);
  p.substeps = j.value("substeps", d.substeps);
}

void to_json(json& j, const ControlScript& c) {
  j = json{{"n_ctrl", c.n_ctrl}, {"frames", c.frames}};
}

void from_json(const json& j, ControlScript& c) {
  j.at("n_ctrl").get_to(c.n_ctrl);
  j.at("frames").get_to(c.frames);
}

void to_json(json& j, const ObservationFrame& f) {
  j = json{{"partial_cloud", f.partial_cloud},
           {"track_ids", f.track_ids},
           {"track_positions", f.track_positions}};
}

void from_json(const json& j, ObservationFrame& f) {
  j.at("partial_cloud").get_to(f.partial_cloud);
  j.at("track_ids").get_to(f.track_ids);
  j.at("track_positions").get_to(f.track_positions);
}

void to_json(json& j, const ObservationSequence& o) {
  j = json{{"v", kSchemaVersion}, {"frames", o.frames}, {"control", o.control}, {"fps", o.fps}};
}

void from_json(const json& j, ObservationSequence& o) {
  j.at("frames").get_to(o.frames);
  j.at("control").get_to(o.control);
  j.at("fps").get_to(o.fps);
}

void to_json(json& j, const Scenario& s) {
  j = json{{"v", kSchemaVersion},
           {"name", s.name},
           {"initial_state", s.initial_state},
           {"topology", s.topology ? json(*s.topology) : json(nullptr)},
           {"params", s.params},
           {"control", s.control},
           {"ground_height", s.ground_height}};
}

void from_json(const json& j, Scenario& s) {
  s.name = j.value("name", std::string{});
  j.at("initial_state").get_to(s.initial_state);
  if (j.contains("topology") && !j.at("topology").is_null()) {
    s.topology = j.at("topology").get<SpringTopology>();
  } else {
    s.topology.reset();
  }
  j.at("params").get_to(s.params);
  j.at("control").get_to(s.control);
  s.ground_height = j.value("ground_height", 0.0);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

void write_trajectory_jsonl(std::ostream& out, std::span<const SystemState> states,
                            const ControlScript& control) {
  for (std::size_t f = 0; f < states.size(); ++f) {
    json line{{"frame", f},
              {"positions", states[f].positions},
              {"velocities", states[f].velocities},
              {"control", f < control.frames.size() ? json(control.frames[f]) : json::array()}};
    out << line.dump() << '\n';
  }
}

void write_trajectory_jsonl(const std::filesystem::path& path, std::span<const SystemState> states,
                            const ControlScript& control) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_trajectory_jsonl(out, states, control);
}

std::vector<SystemState> read_trajectory_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SystemState> states;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    states.push_back(json::parse(line).get<SystemState>());
  }
  return states;
}

}  // namespace springtwin
