#include <doctest.h>

#include "springtwin/objective.hpp"
#include "support.hpp"

using namespace springtwin;

TEST_CASE("chamfer: worked examples") {
  const std::vector<Vec3> a{{0, 0, 0}, {1, 2, 3}};
  CHECK(chamfer_single_direction(a, a) == 0.0);

  const std::vector<Vec3> obs{{0, 0, 0}};
  const std::vector<Vec3> pred{{1, 0, 0}, {3, 0, 0}};
  CHECK(chamfer_single_direction(obs, pred) == 1.0);

  const std::vector<Vec3> obs2{{0, 0, 0}, {5, 0, 0}};
  const std::vector<Vec3> pred2{{0.5, 0, 0}, {5, 0.5, 0}};
  CHECK(chamfer_single_direction(obs2, pred2) == 0.5);

  CHECK(chamfer_single_direction({}, pred) == 0.0);
  CHECK_THROWS(chamfer_single_direction(obs, {}));
}

TEST_CASE("chamfer: k-d tree equals brute force, permutation and monotonicity") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto obs = test::random_cloud(rng, 1 + rng.uniform_index(300));
    auto pred = test::random_cloud(rng, 1 + rng.uniform_index(300));
    const double fast = chamfer_single_direction(obs, pred);
    CHECK(fast == chamfer_single_direction_brute_force(obs, pred));

    auto more = pred;
    for (const Vec3& extra : test::random_cloud(rng, 20)) more.push_back(extra);
    CHECK(chamfer_single_direction(obs, more) <= fast);
  }
}

TEST_CASE("tracking error: worked examples") {
  const std::vector<Vec3> pred{{0, 0, 0}, {1, 0, 0}};
  const std::vector<NodeIndex> one{0};
  const std::vector<Vec3> off1{{0.1, 0, 0}};
  CHECK(tracking_error(one, off1, pred) == doctest::Approx(0.01).epsilon(1e-14));

  const std::vector<NodeIndex> two{0, 1};
  const std::vector<Vec3> off2{{0.1, 0, 0}, {1.3, 0, 0}};
  CHECK(tracking_error(two, off2, pred) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(tracking_error(two, pred, pred) == 0.0);
  CHECK(tracking_error({}, {}, pred) == 0.0);
}

namespace {

ObservationSequence dense_obs(const std::vector<SystemState>& states) {
  ObservationSequence obs;
  obs.control.n_ctrl = 0;
  for (const SystemState& s : states) {
    ObservationFrame f;
    f.partial_cloud = s.positions;
    for (std::size_t i = 0; i < s.size(); ++i) {
      f.track_ids.push_back(static_cast<NodeIndex>(i));
      f.track_positions.push_back(s.positions[i]);
    }
    obs.frames.push_back(f);
    obs.control.frames.emplace_back();
  }
  return obs;
}

}  // namespace

TEST_CASE("trajectory cost: exact fit, uniform shift, weight masking, permutations") {
  Rng rng(32);
  std::vector<SystemState> states;
  for (int t = 0; t < 5; ++t) states.push_back(SystemState::at_rest(test::random_cloud(rng, 40, 0.2)));
  const ObservationSequence obs = dense_obs(states);

  CHECK(trajectory_cost(states, obs, {}).total == 0.0);

  auto shifted = states;
  for (auto& s : shifted)
    for (Vec3& x : s.positions) x += Vec3{0.1, 0, 0};
  const CostBreakdown c = trajectory_cost(shifted, obs, {});
  CHECK(c.c_motion == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(c.c_geometry <= 0.1 + 1e-15);

  const CostBreakdown m = trajectory_cost(shifted, obs, {0.0, 1.0});
  CHECK(m.total == m.c_motion);

  ObservationSequence perm = obs;
  for (auto& f : perm.frames) std::reverse(f.partial_cloud.begin(), f.partial_cloud.end());
  CHECK(trajectory_cost(shifted, perm, {}).total == c.total);

  CHECK_THROWS(trajectory_cost(std::span<const SystemState>(shifted).first(3), obs, {}, {0, 5}));
}

TEST_CASE("window metrics report unsquared track error") {
  std::vector<SystemState> states{SystemState::at_rest({{0, 0, 0}, {1, 0, 0}})};
  ObservationSequence obs = dense_obs(states);
  for (Vec3& x : obs.frames[0].track_positions) x += Vec3{0, 0.3, 0.4};
  const WindowMetrics w = evaluate_window(states, obs, {0, 1});
  CHECK(w.mean_track_error == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(w.track_error_per_frame.size() == 1);
}
