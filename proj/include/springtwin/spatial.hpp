#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "springtwin/vec3.hpp"

namespace springtwin {

struct Neighbor {
  std::uint32_t index = 0;
  double squared_distance = 0.0;
};

// Orders by distance, then by index. All neighbor selection uses this so that
// ties at equal distance resolve to the lower index.
inline bool closer(const Neighbor& a, const Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

// Static k-d tree over a point set. Holds a copy of the points.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  // Exact nearest point (lowest index on ties). Tree must be non-empty.
  Neighbor nearest(const Vec3& query) const;

  // All points with distance <= radius, sorted by `closer`.
  std::vector<Neighbor> within_radius(const Vec3& query, double radius) const;

  // The k closest points (fewer if the tree is smaller), sorted by `closer`.
  std::vector<Neighbor> k_nearest(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void nearest_rec(std::int32_t node, const Vec3& q, Neighbor& best) const;
  void radius_rec(std::int32_t node, const Vec3& q, double r2, std::vector<Neighbor>& out) const;
  void knn_rec(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

// Uniform spatial hash (cell size = query distance) for proximity pairs.
// Rebuilt from scratch on every call to `pairs_within`.
class SpatialHashGrid {
 public:
  // All index pairs (i < j) with ||p_i - p_j|| < distance, sorted
  // lexicographically. Returns nothing when distance <= 0.
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs_within(
      std::span<const Vec3> points, double distance);

 private:
  struct Cell {
    std::int64_t x, y, z;
    friend bool operator==(const Cell&, const Cell&) = default;
  };
  std::size_t bucket_of(const Cell& c) const;

  std::vector<Cell> cells_;
  std::vector<std::uint32_t> bucket_start_;
  std::vector<std::uint32_t> sorted_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_;
  std::size_t table_size_ = 0;
};

// O(n^2) reference for SpatialHashGrid::pairs_within.
std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_within_brute_force(
    std::span<const Vec3> points, double distance);

}  // namespace springtwin
