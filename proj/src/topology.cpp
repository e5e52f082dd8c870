#include "springtwin/topology.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "springtwin/log.hpp"
#include "springtwin/rng.hpp"
#include "springtwin/spatial.hpp"

namespace springtwin {

SpringTopology build_springs(std::span<const Vec3> points, double radius, int max_neighbors,
                             double stiffness) {
  if (points.size() < 2) throw TopologyError("degenerate point set");
  if (!(radius > 0.0)) throw std::invalid_argument("build_springs: radius must be > 0");
  if (max_neighbors < 1) throw std::invalid_argument("build_springs: max_neighbors must be >= 1");

  const KdTree tree(points);
  std::vector<std::pair<NodeIndex, NodeIndex>> edges;
  for (std::size_t i = 0; i < points.size(); ++i) {
    int taken = 0;
    for (const Neighbor& nb : tree.within_radius(points[i], radius)) {
      if (nb.index == i || nb.squared_distance == 0.0) continue;
      const auto a = static_cast<NodeIndex>(std::min<std::size_t>(i, nb.index));
      const auto b = static_cast<NodeIndex>(std::max<std::size_t>(i, nb.index));
      edges.emplace_back(a, b);
      if (++taken == max_neighbors) break;
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  SpringTopology topo;
  topo.n_nodes = points.size();
  topo.springs.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    topo.springs.push_back(Spring{a, b, distance(points[a], points[b]), stiffness});
  }
  if (topo.springs.empty()) {
    logger()->warn("build_springs: no pair within radius {}; graph is disconnected", radius);
  }
  return topo;
}

std::vector<ControlAttachment> attach_controls(std::span<const Vec3> ctrl_points,
                                               std::span<const Vec3> object_points, double radius,
                                               int max_neighbors, double stiffness) {
  if (!(radius > 0.0)) throw std::invalid_argument("attach_controls: radius must be > 0");
  if (max_neighbors < 1) throw std::invalid_argument("attach_controls: max_neighbors must be >= 1");
  std::vector<ControlAttachment> out;
  std::vector<std::size_t> orphans;
  if (object_points.empty()) {
    for (std::size_t c = 0; c < ctrl_points.size(); ++c) orphans.push_back(c);
  } else {
    const KdTree tree(object_points);
    for (std::size_t c = 0; c < ctrl_points.size(); ++c) {
      const auto in_range = tree.within_radius(ctrl_points[c], radius);
      if (in_range.empty()) {
        orphans.push_back(c);
        continue;
      }
      const std::size_t take = std::min<std::size_t>(in_range.size(), static_cast<std::size_t>(max_neighbors));
      for (std::size_t k = 0; k < take; ++k) {
        out.push_back({static_cast<std::uint32_t>(c), in_range[k].index,
                       std::sqrt(in_range[k].squared_distance), stiffness});
      }
    }
  }
  if (!orphans.empty()) {
    std::string msg = "control points with no object point within radius:";
    for (std::size_t c : orphans) msg += " " + std::to_string(c);
    throw TopologyError(msg);
  }
  return out;
}

std::vector<std::size_t> farthest_point_sample_from(std::span<const Vec3> points, std::size_t k,
                                                    std::size_t first) {
  if (k > points.size()) {
    throw std::invalid_argument("farthest_point_sample: k = " + std::to_string(k) +
                                " exceeds point count " + std::to_string(points.size()));
  }
  std::vector<std::size_t> chosen;
  if (k == 0) return chosen;
  if (first >= points.size()) throw std::invalid_argument("farthest_point_sample: bad first index");
  chosen.reserve(k);
  chosen.push_back(first);
  std::vector<double> min_d2(points.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(points.size(), false);
  taken[first] = true;
  while (chosen.size() < k) {
    const Vec3& last = points[chosen.back()];
    std::size_t best = points.size();
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(points[i], last));
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    taken[best] = true;
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k,
                                               std::uint64_t seed) {
  if (k > points.size()) {
    throw std::invalid_argument("farthest_point_sample: k = " + std::to_string(k) +
                                " exceeds point count " + std::to_string(points.size()));
  }
  if (k == 0) return {};
  Rng rng(seed);
  return farthest_point_sample_from(points, k, rng.uniform_index(points.size()));
}

std::vector<std::vector<NodeIndex>> adjacency(const SpringTopology& topology) {
  std::vector<std::vector<NodeIndex>> adj(topology.n_nodes);
  for (const Spring& s : topology.springs) {
    adj[s.i].push_back(s.j);
    adj[s.j].push_back(s.i);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

std::uint64_t topology_checksum(const SpringTopology& topology) {
  std::vector<std::uint64_t> words;
  words.reserve(topology.springs.size());
  for (const Spring& s : topology.springs) {
    std::uint64_t state = (static_cast<std::uint64_t>(s.i) << 32) ^ s.j;
    std::uint64_t h = splitmix64(state);
    state = h ^ std::bit_cast<std::uint64_t>(s.rest_length);
    words.push_back(splitmix64(state));
  }
  std::sort(words.begin(), words.end());
  std::uint64_t acc = topology.n_nodes;
  for (std::uint64_t w : words) {
    acc ^= w;
    acc = splitmix64(acc);
  }
  return acc;
}

}  // namespace springtwin
