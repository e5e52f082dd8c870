#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "springtwin/objective.hpp"
#include "springtwin/optimize.hpp"
#include "springtwin/synth.hpp"
#include "support.hpp"

using namespace springtwin;

TEST_CASE("split: 7:3 and edge cases") {
  auto [tr, te] = split_train_test(10, 0.7);
  CHECK(tr.begin == 0);
  CHECK(tr.end == 7);
  CHECK(te.begin == 7);
  CHECK(te.end == 10);
  auto [a, b] = split_train_test(2, 0.5);
  CHECK(a.size() == 1);
  CHECK(b.size() == 1);
  auto [c, d] = split_train_test(100, 0.7);
  CHECK(c.size() == 70);
  CHECK(d.size() == 30);
  CHECK_THROWS(split_train_test(1, 0.7));
  CHECK_THROWS(split_train_test(10, 0.0));
  CHECK_THROWS(split_train_test(10, 1.0));
  for (std::size_t t = 2; t < 50; ++t) {
    auto [x, y] = split_train_test(t, 0.7);
    CHECK(x.end == y.begin);
    CHECK(y.end == t);
    CHECK(!x.empty());
    CHECK(!y.empty());
  }
}

TEST_CASE("observe: occlusion keeps the nearer of two nodes on one view ray") {
  ViewConfig view;
  view.cameras = {Vec3{0, -1, 0.6}};
  view.cell_size = 0.01;
  view.noise_sigma = 0.0;
  view.track_fraction = 0.0;
  const Vec3 centre{0, 0, 0.1};
  const Vec3 ray = (centre - view.cameras[0]) / norm(centre - view.cameras[0]);
  const Vec3 near = centre - ray * 0.05, far = centre + ray * 0.05;
  const std::vector<SystemState> traj{SystemState::at_rest({far, near})};
  ControlScript ctrl;
  ctrl.frames.emplace_back();
  const ObservationSequence obs = observe(traj, ctrl, view, 1);
  REQUIRE(obs.frames[0].partial_cloud.size() == 1);
  CHECK(obs.frames[0].partial_cloud[0] == near);
  CHECK(obs.frames[0].track_ids.empty());
}

TEST_CASE("observe: noiseless clouds are exact node subsets; no tracks at fraction 0") {
  const SyntheticBundle b = generate_scenario(template_from_name("cloth-lift", 3));
  ViewConfig view;
  view.noise_sigma = 0.0;
  view.cell_size = 1e-6;
  view.track_fraction = 0.0;
  const ObservationSequence obs = observe(b.trajectory, b.truth.control, view, 5);
  REQUIRE(obs.size() == b.trajectory.size());
  for (std::size_t t = 0; t < obs.size(); ++t) {
    CHECK(obs.frames[t].track_ids.empty());
    CHECK(!obs.frames[t].partial_cloud.empty());
    for (const Vec3& p : obs.frames[t].partial_cloud) {
      CHECK(std::find(b.trajectory[t].positions.begin(), b.trajectory[t].positions.end(), p) !=
            b.trajectory[t].positions.end());
    }
  }
  // A closed box hides its far side.
  ScenarioTemplate bt = template_from_name("box-lift", 3);
  bt.n_frames = 3;
  const SyntheticBundle box = generate_scenario(bt);
  ViewConfig coarse = view;
  coarse.cell_size = 0.004;
  const ObservationSequence o2 = observe(box.trajectory, box.truth.control, coarse, 5);
  CHECK(o2.frames[0].partial_cloud.size() < box.trajectory[0].size());
  CHECK(o2.frames[0].partial_cloud.size() > box.trajectory[0].size() / 4);
}

TEST_CASE("generate_scenario: deterministic, grasped end follows the script") {
  ScenarioTemplate t = template_from_name("rope-lift", 7);
  const SyntheticBundle a = generate_scenario(t);
  const SyntheticBundle b = generate_scenario(t);
  CHECK(a.trajectory == b.trajectory);
  CHECK(a.truth == b.truth);
  REQUIRE(a.truth.topology);
  CHECK(a.truth.initial_state.size() == 40);

  const auto attach = canonical_attachments(a.truth);
  REQUIRE(!attach.empty());
  const auto& last = a.trajectory.back();
  for (const ControlAttachment& c : attach) {
    const Vec3 ctrl = a.truth.control.frames.back()[c.ctrl_index];
    // within control-spring compliance: weight of the rope over the spring stiffness, with margin
    CHECK(distance(ctrl, last.positions[c.node_index]) < c.rest_length + 0.02);
  }
  CHECK(last.positions[attach[0].node_index].z > 0.1);
}

TEST_CASE("generate_scenario: zero amplitude settles on the ground") {
  ScenarioTemplate t = template_from_name("rope-lift", 1);
  t.amplitude = 0.0;
  const SyntheticBundle b = generate_scenario(t);
  for (const Vec3& p : b.trajectory.back().positions) CHECK(p.z >= b.truth.ground_height - 1e-6);
}

TEST_CASE("generalization pair shares the object") {
  const ScenarioTemplate t = template_from_name("rope-lift", 2);
  auto [src, tgt] = generalization_pair(t, ScriptKind::lift, ScriptKind::stretch, ViewConfig{}, 3);
  REQUIRE(src.truth.topology);
  REQUIRE(tgt.truth.topology);
  CHECK(topology_checksum(*src.truth.topology) == topology_checksum(*tgt.truth.topology));
  CHECK(src.truth.params == tgt.truth.params);
  CHECK(src.truth.control != tgt.truth.control);
}

TEST_CASE("self-fit with the true parameters sits at the noise floor") {
  const ScenarioTemplate t = template_from_name("rope-lift", 4);
  const ViewConfig view;
  const SyntheticBundle b = generate_bundle(t, view, 9);
  const Scenario canon = canonical_scenario(b.truth);
  FittedSystem truth_sys{b.truth.params, *b.truth.topology, canonical_attachments(b.truth), b.truth.ground_height};
  const CostBreakdown c = system_cost(truth_sys, canon, b.observation, {}, {0, b.observation.size()});
  // E|n| = sigma sqrt(8/pi) for isotropic 3-D noise; E|n|^2 = 3 sigma^2.
  const double geo_floor = view.noise_sigma * std::sqrt(8.0 / M_PI);
  const double motion_floor = 3.0 * view.track_noise_sigma * view.track_noise_sigma;
  MESSAGE("geometry " << c.c_geometry << " (noise " << geo_floor << "), motion " << c.c_motion << " (noise "
                      << motion_floor << ")");
  CHECK(c.c_geometry <= 2.0 * geo_floor);
  CHECK(c.c_motion <= 2.0 * motion_floor);
  CHECK(c.c_motion >= 0.5 * motion_floor);
}

TEST_CASE("bundle files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "springtwin_bundle_test";
  std::filesystem::remove_all(dir);
  ScenarioTemplate t = template_from_name("rope-push", 5);
  t.n_frames = 10;
  const SyntheticBundle b = generate_bundle(t, ViewConfig::three_view(), 2);
  write_bundle(dir, b);
  for (const char* f : {"scenario.json", "observation.json", "ground_truth.json", "trajectory.jsonl"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const LoadedBundle l = read_bundle(dir);
  CHECK(l.observation == b.observation);
  CHECK(l.scenario == canonical_scenario(b.truth));
  REQUIRE(l.truth);
  CHECK(*l.truth == b.truth);
  CHECK(l.truth_states == b.trajectory);
  CHECK(!l.scenario.topology);
  std::filesystem::remove_all(dir);
}

TEST_CASE("templates by name") {
  for (const char* n : {"rope-lift", "rope-stretch", "cloth-fold", "box-push", "rope-lift-split"}) {
    CHECK_NOTHROW(template_from_name(n, 0));
  }
  CHECK_THROWS(template_from_name("jelly-lift", 0));
  const auto split = template_from_name("rope-lift-split", 0);
  REQUIRE(split.stiffness_split);
  CHECK(split.stiffness_split->k_low_x == 5000.0);
  CHECK(split.stiffness_split->k_high_x == 500.0);
}
