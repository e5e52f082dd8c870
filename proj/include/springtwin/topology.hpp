#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "springtwin/model.hpp"

namespace springtwin {

// A spring from a kinematic control point to an object node.
struct ControlAttachment {
  std::uint32_t ctrl_index = 0;
  NodeIndex node_index = 0;
  double rest_length = 0.0;  // m, 0 when the control point sits on the node
  double stiffness = 0.0;    // N/m

  friend bool operator==(const ControlAttachment&, const ControlAttachment&) = default;
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Nearest-neighbour spring graph. Each node proposes edges to its
// `max_neighbors` closest points within `radius` (ties to the lower index);
// an edge exists if either endpoint proposes it. Rest lengths are the current
// distances, stiffness is uniform. Coincident points are never connected.
SpringTopology build_springs(std::span<const Vec3> points, double radius, int max_neighbors,
                             double stiffness);

// Attaches every control point to its <= max_neighbors nearest object points
// within radius. Throws TopologyError naming every control point with no
// object point in range.
std::vector<ControlAttachment> attach_controls(std::span<const Vec3> ctrl_points,
                                               std::span<const Vec3> object_points, double radius,
                                               int max_neighbors, double stiffness);

// Greedy farthest-point sampling. The first index is drawn from a generator
// seeded with `seed`; each later pick maximises the distance to the chosen
// set, lowest index on ties.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k,
                                               std::uint64_t seed);
// Same, with the first pick given explicitly.
std::vector<std::size_t> farthest_point_sample_from(std::span<const Vec3> points, std::size_t k,
                                                    std::size_t first);

// Per-node neighbour lists induced by the springs, ascending.
std::vector<std::vector<NodeIndex>> adjacency(const SpringTopology& topology);

// Order-independent checksum of the edge set and rest lengths.
std::uint64_t topology_checksum(const SpringTopology& topology);

}  // namespace springtwin
