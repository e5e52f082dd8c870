#include "springtwin/kernels.hpp"

#include <cstdint>

namespace springtwin::kernels {

namespace {

constexpr std::uint32_t kEndpointJ = 0x80000000u;

// Below this many items the fork/join overhead dominates.
constexpr std::int64_t kParallelThreshold = 2048;

}  // namespace

std::size_t spring_forces(const SpringMassModel& model, std::span<const Vec3> x,
                          std::span<const Vec3> v, std::span<Vec3> spring_out) {
  const auto si = model.spring_i();
  const auto sj = model.spring_j();
  const auto rest = model.rest_length();
  const auto k = model.stiffness();
  const double gamma = model.params().gamma;
  const auto n = static_cast<std::int64_t>(si.size());
  std::size_t degenerate = 0;
#pragma omp parallel for schedule(static) reduction(+ : degenerate) if (n >= kParallelThreshold)
  for (std::int64_t s = 0; s < n; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const SpringForce f =
        spring_force(x[si[idx]], x[sj[idx]], v[si[idx]], v[sj[idx]], k[idx], rest[idx], gamma);
    spring_out[idx] = f.on_i;
    degenerate += f.degenerate ? 1u : 0u;
  }
  return degenerate;
}

void gather_forces(const SpringMassModel& model, std::span<const Vec3> spring_f,
                   std::span<const Vec3> x, std::span<const Vec3> ctrl, std::span<Vec3> forces) {
  const PhysParams& p = model.params();
  const Vec3 weight = p.gravity * p.node_mass;
  const auto& attachments = model.attachments();
  const auto n = static_cast<std::int64_t>(model.n_nodes());
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
  for (std::int64_t node = 0; node < n; ++node) {
    const auto nd = static_cast<std::size_t>(node);
    Vec3 f = weight;
    for (std::uint32_t code : model.incidence(nd)) {
      const Vec3& sf = spring_f[code & ~kEndpointJ];
      if (code & kEndpointJ) {
        f += -sf;
      } else {
        f += sf;
      }
    }
    for (std::uint32_t a : model.node_attachments(nd)) {
      const ControlAttachment& att = attachments[a];
      f += control_force(x[nd], ctrl[att.ctrl_index], att.stiffness, att.rest_length);
    }
    forces[nd] = f;
  }
}

void integrate_velocity(std::span<Vec3> v, std::span<const Vec3> forces, double h_over_m,
                        double delta) {
  const auto n = static_cast<std::int64_t>(v.size());
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    v[k] = (v[k] + forces[k] * h_over_m) * delta;
  }
}

void integrate_position(std::span<Vec3> x, std::span<const Vec3> v, double h) {
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    x[k] += v[k] * h;
  }
}

std::size_t first_non_finite(std::span<const Vec3> x, std::span<const Vec3> v) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!is_finite(x[i]) || !is_finite(v[i])) return i;
  }
  return x.size();
}

namespace serial {

std::size_t accumulate_forces(const SpringMassModel& model, std::span<const Vec3> x,
                              std::span<const Vec3> v, std::span<const Vec3> ctrl,
                              std::span<Vec3> forces) {
  const PhysParams& p = model.params();
  const Vec3 weight = p.gravity * p.node_mass;
  for (std::size_t node = 0; node < model.n_nodes(); ++node) forces[node] = weight;

  const auto si = model.spring_i();
  const auto sj = model.spring_j();
  const auto rest = model.rest_length();
  const auto k = model.stiffness();
  std::size_t degenerate = 0;
  for (std::size_t s = 0; s < si.size(); ++s) {
    const SpringForce f = spring_force(x[si[s]], x[sj[s]], v[si[s]], v[sj[s]], k[s], rest[s], p.gamma);
    forces[si[s]] += f.on_i;
    forces[sj[s]] += -f.on_i;
    degenerate += f.degenerate ? 1u : 0u;
  }
  for (const ControlAttachment& att : model.attachments()) {
    forces[att.node_index] +=
        control_force(x[att.node_index], ctrl[att.ctrl_index], att.stiffness, att.rest_length);
  }
  return degenerate;
}

void integrate_velocity(std::span<Vec3> v, std::span<const Vec3> forces, double h_over_m,
                        double delta) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] + forces[i] * h_over_m) * delta;
}

void integrate_position(std::span<Vec3> x, std::span<const Vec3> v, double h) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += v[i] * h;
}

}  // namespace serial

}  // namespace springtwin::kernels
