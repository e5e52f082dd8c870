#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "springtwin/vec3.hpp"

namespace springtwin {

using NodeIndex = std::uint32_t;

struct SystemState {
  std::vector<Vec3> positions;   // m
  std::vector<Vec3> velocities;  // m/s

  std::size_t size() const { return positions.size(); }

  static SystemState at_rest(std::vector<Vec3> positions) {
    SystemState s;
    s.velocities.assign(positions.size(), Vec3{});
    s.positions = std::move(positions);
    return s;
  }

  friend bool operator==(const SystemState&, const SystemState&) = default;
};

struct Spring {
  NodeIndex i = 0;
  NodeIndex j = 0;
  double rest_length = 0.0;  // m
  double stiffness = 0.0;    // N/m

  friend bool operator==(const Spring&, const Spring&) = default;
};

struct SpringTopology {
  std::size_t n_nodes = 0;
  std::vector<Spring> springs;

  friend bool operator==(const SpringTopology&, const SpringTopology&) = default;
};

struct PhysParams {
  double k_hom = 2000.0;           // N/m, homogeneous stiffness
  double gamma = 0.02;             // N*s/m, dashpot
  double delta = 0.9995;           // per-substep drag multiplier, (0, 1]
  double restitution = 0.5;        // [0, 1]
  double friction = 0.5;           // [0, 1]
  double collision_dist = 0.004;   // m, 0 disables point-point contact
  double topo_radius = 0.015;      // m
  int topo_max_neighbors = 4;
  double ctrl_radius = 0.02;       // m
  int ctrl_max_neighbors = 2;
  double k_ctrl = 20000.0;         // N/m, control springs
  double node_mass = 0.01;         // kg
  Vec3 gravity{0.0, 0.0, -9.8};    // m/s^2
  double dt = 1.0 / 30.0;          // s per frame
  int substeps = 50;

  double substep_dt() const { return dt / static_cast<double>(substeps); }

  friend bool operator==(const PhysParams&, const PhysParams&) = default;
};

struct ControlScript {
  std::size_t n_ctrl = 0;
  std::vector<std::vector<Vec3>> frames;

  friend bool operator==(const ControlScript&, const ControlScript&) = default;
};

struct ObservationFrame {
  std::vector<Vec3> partial_cloud;
  std::vector<NodeIndex> track_ids;
  std::vector<Vec3> track_positions;

  friend bool operator==(const ObservationFrame&, const ObservationFrame&) = default;
};

struct ObservationSequence {
  std::vector<ObservationFrame> frames;
  ControlScript control;
  double fps = 30.0;

  std::size_t size() const { return frames.size(); }

  friend bool operator==(const ObservationSequence&, const ObservationSequence&) = default;
};

struct Scenario {
  std::string name;
  SystemState initial_state;
  std::optional<SpringTopology> topology;
  PhysParams params;
  ControlScript control;
  double ground_height = 0.0;  // m, plane z = ground_height

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Every broken invariant, one human-readable line each. Never throws.
std::vector<std::string> validate_scenario(const Scenario& s);
std::vector<std::string> validate_params(const PhysParams& p);
std::vector<std::string> validate_topology(const SpringTopology& t);
std::vector<std::string> validate_control(const ControlScript& c);
std::vector<std::string> validate_observations(const ObservationSequence& obs, std::size_t n_nodes);
// Length and node-count agreement between a scenario and its observations.
std::vector<std::string> validate_pairing(const Scenario& s, const ObservationSequence& obs);

// Axis-aligned bounding box diagonal, m. Zero for fewer than two points.
double extent(const std::vector<Vec3>& points);

}  // namespace springtwin
