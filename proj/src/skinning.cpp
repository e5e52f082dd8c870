#include "springtwin/skinning.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "springtwin/log.hpp"
#include "springtwin/rng.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  return {w / n, x / n, y / n, z / n};
}

Quat Quat::from_matrix(const Eigen::Matrix3d& r) {
  const Eigen::Quaterniond q(r);
  return Quat{q.w(), q.x(), q.y(), q.z()}.normalized();
}

Eigen::Matrix3d Quat::to_matrix() const {
  return Eigen::Quaterniond(w, x, y, z).normalized().toRotationMatrix();
}

Quat operator*(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

double dot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

namespace {

Eigen::Vector3d to_eigen(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 from_eigen(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

std::vector<std::vector<NodeIndex>> node_neighborhoods(const SpringTopology& topology,
                                                       std::span<const Vec3> nodes,
                                                       std::size_t fallback_k) {
  if (topology.n_nodes != nodes.size()) {
    throw std::invalid_argument("node_neighborhoods: topology/node count mismatch");
  }
  std::vector<std::vector<NodeIndex>> out(nodes.size());
  for (const Spring& s : topology.springs) {
    out[s.i].push_back(s.j);
    out[s.j].push_back(s.i);
  }
  KdTree tree;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::sort(out[i].begin(), out[i].end());
    if (out[i].size() >= 2) continue;
    if (tree.empty()) tree = KdTree(nodes);
    out[i].clear();
    for (const Neighbor& nb : tree.k_nearest(nodes[i], fallback_k + 1)) {
      if (nb.index != i) out[i].push_back(nb.index);
    }
    if (out[i].size() > fallback_k) out[i].resize(fallback_k);
  }
  return out;
}

std::vector<Eigen::Matrix3d> estimate_node_rotations(
    std::span<const Vec3> prev, std::span<const Vec3> next,
    const std::vector<std::vector<NodeIndex>>& neighborhoods) {
  if (prev.size() != next.size() || neighborhoods.size() != prev.size()) {
    throw std::invalid_argument("estimate_node_rotations: size mismatch");
  }
  std::vector<Eigen::Matrix3d> out(prev.size(), Eigen::Matrix3d::Identity());
  std::atomic<std::size_t> degenerate{0};
  const auto n = static_cast<std::int64_t>(prev.size());
#pragma omp parallel for schedule(static) if (n >= 1024)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto& nbrs = neighborhoods[i];
    if (nbrs.size() < 2) {
      ++degenerate;
      continue;
    }
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (NodeIndex j : nbrs) {
      cov += to_eigen(prev[j] - prev[i]) * to_eigen(next[j] - next[i]).transpose();
    }
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0]) {
      ++degenerate;
      continue;
    }
    const Eigen::Matrix3d& u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    Eigen::Matrix3d correction = Eigen::Matrix3d::Identity();
    correction(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    out[i] = v * correction * u.transpose();
  }
  if (degenerate > 0) {
    logger()->warn("estimate_node_rotations: {} degenerate neighbourhoods fall back to identity",
                   degenerate.load());
  }
  return out;
}

SkinBinding bind_skin(std::span<const SkinParticle> particles, std::span<const Vec3> canonical_nodes,
                      std::size_t k) {
  if (k < 1 || k > canonical_nodes.size()) {
    throw std::invalid_argument("bind_skin: need 1 <= K <= node count");
  }
  SkinBinding b;
  b.k = k;
  b.nodes.resize(particles.size() * k);
  b.weights.resize(particles.size() * k);
  const KdTree tree(canonical_nodes);
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const auto nearest = tree.k_nearest(particles[p].center, k);
    double total = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const double d = std::max(std::sqrt(nearest[m].squared_distance), kMinBindDistance);
      b.nodes[p * k + m] = nearest[m].index;
      b.weights[p * k + m] = 1.0 / d;
      total += 1.0 / d;
    }
    for (std::size_t m = 0; m < k; ++m) b.weights[p * k + m] /= total;
  }
  return b;
}

std::vector<SkinParticle> deform_skin(std::span<const SkinParticle> particles,
                                      const SkinBinding& binding, std::span<const Vec3> prev,
                                      std::span<const Vec3> next,
                                      std::span<const Eigen::Matrix3d> rotations) {
  if (binding.n_particles() != particles.size() || prev.size() != next.size() ||
      rotations.size() != prev.size()) {
    throw std::invalid_argument("deform_skin: size mismatch");
  }
  std::vector<Quat> node_quat(rotations.size());
  for (std::size_t i = 0; i < rotations.size(); ++i) node_quat[i] = Quat::from_matrix(rotations[i]);

  std::vector<SkinParticle> out(particles.begin(), particles.end());
  std::atomic<std::size_t> collapsed{0};
  const std::size_t k = binding.k;
  const auto n = static_cast<std::int64_t>(particles.size());
#pragma omp parallel for schedule(static) if (n >= 1024)
  for (std::int64_t pp = 0; pp < n; ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    const Eigen::Vector3d mu = to_eigen(particles[p].center);
    Eigen::Vector3d center = Eigen::Vector3d::Zero();

    std::size_t ref = 0;
    for (std::size_t m = 1; m < k; ++m) {
      if (binding.weights[p * k + m] > binding.weights[p * k + ref]) ref = m;
    }
    const Quat& ref_q = node_quat[binding.nodes[p * k + ref]];
    Quat blend{0.0, 0.0, 0.0, 0.0};
    for (std::size_t m = 0; m < k; ++m) {
      const NodeIndex node = binding.nodes[p * k + m];
      const double w = binding.weights[p * k + m];
      const Eigen::Vector3d anchor = to_eigen(prev[node]);
      const Eigen::Vector3d moved = to_eigen(next[node]);
      // R (mu - x_k) + x_k + T_k with T_k = x_k' - x_k
      center += w * (rotations[node] * (mu - anchor) + moved);
      Quat r = node_quat[node];
      if (dot(r, ref_q) < 0.0) r = {-r.w, -r.x, -r.y, -r.z};
      blend = {blend.w + w * r.w, blend.x + w * r.x, blend.y + w * r.y, blend.z + w * r.z};
    }
    out[p].center = from_eigen(center);
    if (blend.norm() < 1e-9) {
      ++collapsed;
      continue;
    }
    out[p].orientation = (blend.normalized() * particles[p].orientation).normalized();
  }
  if (collapsed > 0) {
    logger()->warn("deform_skin: {} particles kept their orientation (blended rotation vanished)",
                   collapsed.load());
  }
  return out;
}

std::vector<std::vector<SkinParticle>> skin_trajectory(
    std::span<const SkinParticle> particles, const SkinBinding& binding,
    std::span<const SystemState> states, const std::vector<std::vector<NodeIndex>>& neighborhoods) {
  std::vector<std::vector<SkinParticle>> out;
  if (states.empty()) return out;
  out.emplace_back(particles.begin(), particles.end());
  for (std::size_t t = 0; t + 1 < states.size(); ++t) {
    const auto& prev = states[t].positions;
    const auto& next = states[t + 1].positions;
    const auto rotations = estimate_node_rotations(prev, next, neighborhoods);
    out.push_back(deform_skin(out.back(), binding, prev, next, rotations));
  }
  return out;
}

std::vector<SkinParticle> sample_skin_particles(std::span<const Vec3> nodes, std::size_t count,
                                                double jitter, std::uint64_t seed) {
  if (nodes.empty()) throw std::invalid_argument("sample_skin_particles: no nodes");
  Rng rng(seed);
  std::vector<SkinParticle> out(count);
  for (SkinParticle& p : out) {
    const Vec3& base = nodes[rng.uniform_index(nodes.size())];
    p.center = base + Vec3{rng.normal(), rng.normal(), rng.normal()} * jitter;
    p.orientation = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
    p.scale = std::max(jitter, 1e-4);
    p.opacity = rng.uniform(0.5, 1.0);
    p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
  }
  return out;
}

}  // namespace springtwin
