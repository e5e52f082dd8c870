#include "springtwin/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace springtwin {

namespace {

constexpr std::uint32_t kLeafSize = 8;

double axis_value(const Vec3& p, int axis) { return p[static_cast<std::size_t>(axis)]; }

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t k = begin; k < end; ++k) {
    const Vec3& p = points_[order_[k]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Vec3 span = hi - lo;
  int axis = 0;
  if (span.y > span[static_cast<std::size_t>(axis)]) axis = 1;
  if (span.z > span[static_cast<std::size_t>(axis)]) axis = 2;
  if (span[static_cast<std::size_t>(axis)] <= 0.0) return id;  // all coincident: keep as leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double va = axis_value(points_[a], axis);
                     const double vb = axis_value(points_[b], axis);
                     return va < vb || (va == vb && a < b);
                   });
  const double split = axis_value(points_[order_[mid]], axis);
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::nearest_rec(std::int32_t node_id, const Vec3& q, Neighbor& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (std::uint32_t k = node.begin; k < node.end; ++k) {
      const Neighbor cand{order_[k], squared_distance(q, points_[order_[k]])};
      if (closer(cand, best)) best = cand;
    }
    return;
  }
  const double diff = axis_value(q, node.axis) - node.split;
  const std::int32_t near_side = diff < 0.0 ? node.left : node.right;
  const std::int32_t far_side = diff < 0.0 ? node.right : node.left;
  nearest_rec(near_side, q, best);
  // <= keeps equal-distance candidates on the far side reachable for index tie-breaks.
  if (diff * diff <= best.squared_distance) nearest_rec(far_side, q, best);
}

Neighbor KdTree::nearest(const Vec3& query) const {
  if (points_.empty()) throw std::logic_error("KdTree::nearest on empty tree");
  Neighbor best{std::numeric_limits<std::uint32_t>::max(), std::numeric_limits<double>::infinity()};
  nearest_rec(0, query, best);
  return best;
}

void KdTree::radius_rec(std::int32_t node_id, const Vec3& q, double r2,
                        std::vector<Neighbor>& out) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (std::uint32_t k = node.begin; k < node.end; ++k) {
      const double d2 = squared_distance(q, points_[order_[k]]);
      if (d2 <= r2) out.push_back({order_[k], d2});
    }
    return;
  }
  const double diff = axis_value(q, node.axis) - node.split;
  if (diff <= 0.0 || diff * diff <= r2) radius_rec(node.left, q, r2, out);
  if (diff >= 0.0 || diff * diff <= r2) radius_rec(node.right, q, r2, out);
}

std::vector<Neighbor> KdTree::within_radius(const Vec3& query, double radius) const {
  std::vector<Neighbor> out;
  if (points_.empty() || radius < 0.0) return out;
  radius_rec(0, query, radius * radius, out);
  std::sort(out.begin(), out.end(), closer);
  return out;
}

void KdTree::knn_rec(std::int32_t node_id, const Vec3& q, std::size_t k,
                     std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (std::uint32_t idx = node.begin; idx < node.end; ++idx) {
      const Neighbor cand{order_[idx], squared_distance(q, points_[order_[idx]])};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = axis_value(q, node.axis) - node.split;
  const std::int32_t near_side = diff < 0.0 ? node.left : node.right;
  const std::int32_t far_side = diff < 0.0 ? node.right : node.left;
  knn_rec(near_side, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().squared_distance) {
    knn_rec(far_side, q, k, heap);
  }
}

std::vector<Neighbor> KdTree::k_nearest(const Vec3& query, std::size_t k) const {
  std::vector<Neighbor> heap;
  if (points_.empty() || k == 0) return heap;
  heap.reserve(k + 1);
  knn_rec(0, query, k, heap);
  std::sort(heap.begin(), heap.end(), closer);
  return heap;
}

std::size_t SpatialHashGrid::bucket_of(const Cell& c) const {
  const auto h = static_cast<std::uint64_t>(c.x) * 73856093ULL ^
                 static_cast<std::uint64_t>(c.y) * 19349663ULL ^
                 static_cast<std::uint64_t>(c.z) * 83492791ULL;
  return static_cast<std::size_t>(h & (table_size_ - 1));
}

const std::vector<std::pair<std::uint32_t, std::uint32_t>>& SpatialHashGrid::pairs_within(
    std::span<const Vec3> points, double distance) {
  pairs_.clear();
  const std::size_t n = points.size();
  if (!(distance > 0.0) || n < 2) return pairs_;

  table_size_ = 1;
  while (table_size_ < 2 * n) table_size_ <<= 1;
  const double inv = 1.0 / distance;
  cells_.resize(n);
  bucket_start_.assign(table_size_ + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cells_[i] = {static_cast<std::int64_t>(std::floor(points[i].x * inv)),
                 static_cast<std::int64_t>(std::floor(points[i].y * inv)),
                 static_cast<std::int64_t>(std::floor(points[i].z * inv))};
    ++bucket_start_[bucket_of(cells_[i]) + 1];
  }
  for (std::size_t b = 0; b < table_size_; ++b) bucket_start_[b + 1] += bucket_start_[b];
  sorted_.resize(n);
  {
    std::vector<std::uint32_t> fill(bucket_start_.begin(), bucket_start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) sorted_[fill[bucket_of(cells_[i])]++] = static_cast<std::uint32_t>(i);
  }

  const double d2 = distance * distance;
  const auto scan = [&](std::size_t i, std::vector<std::pair<std::uint32_t, std::uint32_t>>& out) {
    const Cell& ci = cells_[i];
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const Cell c{ci.x + dx, ci.y + dy, ci.z + dz};
          const std::size_t b = bucket_of(c);
          for (std::uint32_t k = bucket_start_[b]; k < bucket_start_[b + 1]; ++k) {
            const std::uint32_t j = sorted_[k];
            if (j <= i || !(cells_[j] == c)) continue;
            if (squared_distance(points[i], points[j]) < d2) {
              out.emplace_back(static_cast<std::uint32_t>(i), j);
            }
          }
        }
  };

#ifdef _OPENMP
  const int threads = omp_get_max_threads();
  if (threads > 1 && n >= 512) {
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> local(
        static_cast<std::size_t>(threads));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
      scan(static_cast<std::size_t>(i), local[static_cast<std::size_t>(omp_get_thread_num())]);
    }
    for (auto& part : local) pairs_.insert(pairs_.end(), part.begin(), part.end());
  } else {
    for (std::size_t i = 0; i < n; ++i) scan(i, pairs_);
  }
#else
  for (std::size_t i = 0; i < n; ++i) scan(i, pairs_);
#endif
  std::sort(pairs_.begin(), pairs_.end());
  return pairs_;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_within_brute_force(
    std::span<const Vec3> points, double distance) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  if (!(distance > 0.0)) return out;
  const double d2 = distance * distance;
  for (std::uint32_t i = 0; i < points.size(); ++i)
    for (std::uint32_t j = i + 1; j < points.size(); ++j)
      if (squared_distance(points[i], points[j]) < d2) out.emplace_back(i, j);
  return out;
}

}  // namespace springtwin
