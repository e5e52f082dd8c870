#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "springtwin/model.hpp"

namespace springtwin {

// Unit quaternion, Hamilton convention, (w, x, y, z).
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  Quat normalized() const;
  static Quat from_matrix(const Eigen::Matrix3d& r);
  Eigen::Matrix3d to_matrix() const;

  friend bool operator==(const Quat&, const Quat&) = default;
};

Quat operator*(const Quat& a, const Quat& b);
double dot(const Quat& a, const Quat& b);

struct SkinParticle {
  Vec3 center;
  Quat orientation;
  double scale = 0.005;  // m, isotropic
  double opacity = 1.0;
  std::array<double, 3> color{0.8, 0.8, 0.8};

  friend bool operator==(const SkinParticle&, const SkinParticle&) = default;
};

// K nearest canonical nodes per particle with inverse-distance weights.
struct SkinBinding {
  std::size_t k = 0;
  std::vector<NodeIndex> nodes;  // particle p: nodes[p*k .. p*k+k)
  std::vector<double> weights;   // aligned with nodes, each block sums to 1

  std::size_t n_particles() const { return k == 0 ? 0 : nodes.size() / k; }
};

// Neighbour sets for local rotation estimation: spring adjacency, with the
// `fallback_k` nearest nodes for nodes that have fewer than two springs.
std::vector<std::vector<NodeIndex>> node_neighborhoods(const SpringTopology& topology,
                                                       std::span<const Vec3> nodes,
                                                       std::size_t fallback_k = 6);

// Best-fit local rotation per node (orthogonal Procrustes with determinant
// correction) mapping neighbour offsets at `prev` onto those at `next`.
// Degenerate neighbourhoods (< 2 offsets or all collinear) get the identity.
std::vector<Eigen::Matrix3d> estimate_node_rotations(
    std::span<const Vec3> prev, std::span<const Vec3> next,
    const std::vector<std::vector<NodeIndex>>& neighborhoods);

// Coincident particle-node distances are floored at this before inversion.
inline constexpr double kMinBindDistance = 1e-9;

SkinBinding bind_skin(std::span<const SkinParticle> particles, std::span<const Vec3> canonical_nodes,
                      std::size_t k);

// Linear blend skinning of centres and orientations over one node step.
// Translations are the node displacements next - prev.
std::vector<SkinParticle> deform_skin(std::span<const SkinParticle> particles,
                                      const SkinBinding& binding, std::span<const Vec3> prev,
                                      std::span<const Vec3> next,
                                      std::span<const Eigen::Matrix3d> rotations);

// Per-frame particle sets following a node trajectory (frame 0 = input).
std::vector<std::vector<SkinParticle>> skin_trajectory(
    std::span<const SkinParticle> particles, const SkinBinding& binding,
    std::span<const SystemState> states, const std::vector<std::vector<NodeIndex>>& neighborhoods);

// Particles scattered around the nodes with Gaussian jitter, random colours.
std::vector<SkinParticle> sample_skin_particles(std::span<const Vec3> nodes, std::size_t count,
                                                double jitter, std::uint64_t seed);

}  // namespace springtwin
