#pragma once

#include <cstddef>
#include <span>

#include "springtwin/dynamics.hpp"

// Inner loops of the simulator. The default kernels are OpenMP-parallel:
// per-spring forces are computed independently, then each node gathers its
// incident springs in ascending spring order. The serial reference scatters
// spring by spring in the same order, so both paths produce bit-identical
// forces regardless of thread count.
namespace springtwin::kernels {

struct SpringForce {
  Vec3 on_i;
  bool degenerate = false;
};

// Spring + dashpot force on endpoint i; endpoint j receives the negation.
inline SpringForce spring_force(const Vec3& xi, const Vec3& xj, const Vec3& vi, const Vec3& vj,
                                double stiffness, double rest_length, double gamma) {
  const Vec3 d = xj - xi;
  const double len = norm(d);
  SpringForce out{(vi - vj) * (-gamma)};
  if (len >= kDegenerateLength) {
    out.on_i += d * (stiffness * (len - rest_length) / len);
  } else {
    out.degenerate = true;
  }
  return out;
}

// Elastic pull of a kinematic control point on its attached node.
inline Vec3 control_force(const Vec3& node, const Vec3& ctrl, double stiffness,
                          double rest_length) {
  const Vec3 d = ctrl - node;
  const double len = norm(d);
  if (len < kDegenerateLength) return {};
  return d * (stiffness * (len - rest_length) / len);
}

// Per-spring pass. Returns the number of degenerate springs.
std::size_t spring_forces(const SpringMassModel& model, std::span<const Vec3> x,
                          std::span<const Vec3> v, std::span<Vec3> spring_out);

// Per-node gather: gravity, incident springs, control attachments.
void gather_forces(const SpringMassModel& model, std::span<const Vec3> spring_forces,
                   std::span<const Vec3> x, std::span<const Vec3> ctrl, std::span<Vec3> forces);

// v <- delta * (v + h/m * F)
void integrate_velocity(std::span<Vec3> v, std::span<const Vec3> forces, double h_over_m,
                        double delta);

// x <- x + h * v
void integrate_position(std::span<Vec3> x, std::span<const Vec3> v, double h);

// Index of the first node with a non-finite position or velocity, or n.
std::size_t first_non_finite(std::span<const Vec3> x, std::span<const Vec3> v);

namespace serial {

// Scatter-style reference for spring_forces + gather_forces.
std::size_t accumulate_forces(const SpringMassModel& model, std::span<const Vec3> x,
                              std::span<const Vec3> v, std::span<const Vec3> ctrl,
                              std::span<Vec3> forces);
void integrate_velocity(std::span<Vec3> v, std::span<const Vec3> forces, double h_over_m,
                        double delta);
void integrate_position(std::span<Vec3> x, std::span<const Vec3> v, double h);

}  // namespace serial

}  // namespace springtwin::kernels
