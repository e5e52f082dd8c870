// Shared fixtures for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "springtwin/dynamics.hpp"
#include "springtwin/model.hpp"
#include "springtwin/rng.hpp"
#include "springtwin/topology.hpp"

namespace springtwin::test {

// Physics with everything switched off; tests turn on what they need.
inline PhysParams quiet_params() {
  PhysParams p;
  p.gamma = 0.0;
  p.delta = 1.0;
  p.restitution = 1.0;
  p.friction = 0.0;
  p.collision_dist = 0.0;
  p.gravity = {0.0, 0.0, 0.0};
  p.substeps = 1;
  return p;
}

inline std::vector<Vec3> chain_points(std::size_t n, double spacing, Vec3 origin = {}) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(origin + Vec3{spacing * static_cast<double>(i), 0.0, 0.0});
  return pts;
}

inline SpringTopology chain_topology(std::size_t n, double spacing, double k) {
  SpringTopology t;
  t.n_nodes = n;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    t.springs.push_back({static_cast<NodeIndex>(i), static_cast<NodeIndex>(i + 1), spacing, k});
  }
  return t;
}

inline std::vector<Vec3> random_cloud(Rng& rng, std::size_t n, double half = 1.0) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)};
  return pts;
}

// Jittered n^3 lattice; neighbours start at least spacing - 2*jitter apart.
inline std::vector<Vec3> jittered_lattice(Rng& rng, int n, double spacing, double jitter) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        pts.push_back({i * spacing + rng.uniform(-jitter, jitter), j * spacing + rng.uniform(-jitter, jitter),
                       k * spacing + rng.uniform(-jitter, jitter)});
  return pts;
}

// Relative error with a floor tied to the gradient's overall scale, so
// components that are zero up to roundoff do not dominate.
inline double relative_error(double a, double b, double scale) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8 * scale});
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace springtwin::test
