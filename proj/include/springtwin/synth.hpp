#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "springtwin/model.hpp"
#include "springtwin/objective.hpp"

namespace springtwin {

enum class ObjectKind { rope, cloth, box };
enum class ScriptKind { lift, stretch, push, fold };

// Springs whose midpoint lies below `split_x` get `k_low_x`, the rest `k_high_x`.
struct StiffnessSplit {
  double split_x = 0.0;
  double k_low_x = 0.0;
  double k_high_x = 0.0;
};

struct ScenarioTemplate {
  ObjectKind kind = ObjectKind::rope;
  std::size_t nx = 40, ny = 1, nz = 1;  // nodes per axis
  double spacing = 0.01;                // m
  PhysParams params;                    // true physics
  std::optional<StiffnessSplit> stiffness_split;
  ScriptKind script = ScriptKind::lift;
  double amplitude = 0.2;               // m
  double duration = 0.0;                // s, 0: whole sequence
  std::size_t n_frames = 60;
  std::size_t ctrl_per_grasp = 2;
  double grasp_radius = 0.021;          // m, nodes this close to a grasp anchor can be grasped
  std::uint64_t seed = 0;
};

struct ViewConfig {
  std::vector<Vec3> cameras{Vec3{0.0, -1.0, 0.6}};  // one virtual depth camera
  double cell_size = 0.004;           // m, image-cell footprint on the projection plane
  double noise_sigma = 0.002;         // m
  double track_fraction = 0.2;
  double track_noise_sigma = 0.005;   // m

  // Three cameras around the object, the multi-view setting.
  static ViewConfig three_view();
};

struct SyntheticBundle {
  Scenario truth;                       // true topology and parameters
  std::vector<SystemState> trajectory;  // states 0..n_frames-1
  ObservationSequence observation;
};

// Lattice + true springs + control script + rollout. Throws with advice to
// lower dt when the true parameters diverge.
SyntheticBundle generate_scenario(const ScenarioTemplate& tmpl);

// Lattice positions for a template, before any motion.
std::vector<Vec3> lattice_points(const ScenarioTemplate& tmpl);

// Control script for a template's interaction over its lattice.
ControlScript make_control_script(const ScenarioTemplate& tmpl, const std::vector<Vec3>& nodes,
                                  ScriptKind script);

// Partial, noisy views of a trajectory: per camera a cell z-buffer keeps the
// nearest node per projected cell; tracks are a fixed seeded subset of nodes.
ObservationSequence observe(const std::vector<SystemState>& trajectory, const ControlScript& control,
                            const ViewConfig& view, std::uint64_t seed, double fps = 30.0);

// Contiguous prefix of round(ratio * T) frames for training, rest for test.
std::pair<FrameWindow, FrameWindow> split_train_test(std::size_t n_frames, double ratio);
std::pair<FrameWindow, FrameWindow> split_train_test(const ObservationSequence& obs, double ratio);

// Same object (lattice, springs, parameters) under two interaction scripts.
std::pair<SyntheticBundle, SyntheticBundle> generalization_pair(const ScenarioTemplate& tmpl,
                                                                ScriptKind source,
                                                                ScriptKind target,
                                                                const ViewConfig& view,
                                                                std::uint64_t observe_seed);

// Observes a generated scenario with the given view.
SyntheticBundle generate_bundle(const ScenarioTemplate& tmpl, const ViewConfig& view,
                                std::uint64_t observe_seed);

// Templates by name: "<rope|cloth|box>-<lift|stretch|push|fold>".
ScenarioTemplate template_from_name(const std::string& name, std::uint64_t seed);
std::string to_string(ObjectKind kind);
std::string to_string(ScriptKind kind);
ScriptKind script_from_name(const std::string& name);

// What a fitter gets to see: canonical geometry, controls, and the known
// simulation settings (mass, gravity, dt, substeps); no springs, no true physics.
Scenario canonical_scenario(const Scenario& truth);

// Files: scenario.json (canonical), observation.json, ground_truth.json
// (true scenario + full states), trajectory.jsonl (true states).
void write_bundle(const std::filesystem::path& dir, const SyntheticBundle& bundle);

struct LoadedBundle {
  Scenario scenario;
  ObservationSequence observation;
  std::optional<Scenario> truth;
  std::vector<SystemState> truth_states;
};
LoadedBundle read_bundle(const std::filesystem::path& dir);

}  // namespace springtwin
