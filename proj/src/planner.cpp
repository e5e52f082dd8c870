#include "springtwin/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "springtwin/log.hpp"
#include "springtwin/rng.hpp"
#include "springtwin/topology.hpp"

namespace springtwin {

PlanProblem make_plan_problem(const FittedSystem& system, SystemState initial,
                              std::vector<Vec3> controls, PlanTarget target, std::size_t horizon,
                              double max_step) {
  const PhysParams& p = system.params;
  auto attachments = attach_controls(controls, initial.positions, p.ctrl_radius, p.ctrl_max_neighbors, p.k_ctrl);
  return PlanProblem{SpringMassModel(system.topology, std::move(attachments), p, system.ground_height),
                     std::move(initial), std::move(controls), std::move(target), horizon, max_step};
}

namespace {

void check_problem(const PlanProblem& pb) {
  if (pb.horizon == 0) throw std::invalid_argument("plan: horizon must be >= 1");
  if (!(pb.max_step > 0.0)) throw std::invalid_argument("plan: max_step must be > 0");
  if (pb.initial_controls.size() != pb.model.n_ctrl()) {
    throw std::invalid_argument("plan: initial control count does not match the model");
  }
  if (pb.target.ids.size() != pb.target.positions.size() || pb.target.ids.empty()) {
    throw std::invalid_argument("plan: target ids and positions must be non-empty and aligned");
  }
  for (NodeIndex id : pb.target.ids) {
    if (id >= pb.model.n_nodes()) throw std::invalid_argument("plan: target node out of range");
  }
  if (pb.initial.size() != pb.model.n_nodes()) throw std::invalid_argument("plan: initial state size mismatch");
}

Vec3 clamp_norm(Vec3 d, double max_norm) {
  const double n = norm(d);
  if (n <= max_norm) return d;
  d = d * (max_norm / n);
  while (norm(d) > max_norm) d = d * (1.0 - 0x1p-50);
  return d;
}

}  // namespace

ControlScript script_from_displacements(const PlanProblem& pb, std::vector<Vec3> disp,
                                        std::size_t smoothing) {
  const std::size_t c = pb.initial_controls.size();
  const std::size_t h = pb.horizon;
  if (disp.size() != h * c) throw std::invalid_argument("plan: displacement size mismatch");
  if (smoothing > 1) {
    const auto half = static_cast<std::ptrdiff_t>(smoothing / 2);
    std::vector<Vec3> smooth(disp.size());
    for (std::size_t t = 0; t < h; ++t) {
      const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(t) - half);
      const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1,
                                               static_cast<std::ptrdiff_t>(t) + half);
      for (std::size_t k = 0; k < c; ++k) {
        Vec3 acc;
        for (std::ptrdiff_t u = lo; u <= hi; ++u) acc += disp[static_cast<std::size_t>(u) * c + k];
        smooth[t * c + k] = acc * (1.0 / static_cast<double>(hi - lo + 1));
      }
    }
    disp = std::move(smooth);
  }
  ControlScript s;
  s.n_ctrl = c;
  s.frames.push_back(pb.initial_controls);
  for (std::size_t t = 0; t < h; ++t) {
    std::vector<Vec3> next = s.frames.back();
    for (std::size_t k = 0; k < c; ++k) next[k] += clamp_norm(disp[t * c + k], pb.max_step);
    s.frames.push_back(std::move(next));
  }
  return s;
}

double plan_cost(const PlanProblem& pb, const ControlScript& script, double running_weight) {
  const auto states = rollout(pb.model, pb.initial, script, pb.horizon);
  double cost = tracking_error(pb.target.ids, pb.target.positions, states.back().positions);
  if (running_weight > 0.0) {
    double run = 0.0;
    for (std::size_t t = 1; t < states.size(); ++t) {
      run += tracking_error(pb.target.ids, pb.target.positions, states[t].positions);
    }
    cost += running_weight * run / static_cast<double>(states.size() - 1);
  }
  return cost;
}

PlanResult plan_shooting(const PlanProblem& pb, const PlanOptions& opt) {
  check_problem(pb);
  if (opt.samples < 1 || opt.elites < 1 || opt.elites > opt.samples) {
    throw std::invalid_argument("plan: need 1 <= elites <= samples");
  }
  const std::size_t c = pb.initial_controls.size();
  const std::size_t dim = pb.horizon * c;
  Rng rng(opt.seed);

  PlanResult best;
  best.zero_action_cost = plan_cost(pb, script_from_displacements(pb, std::vector<Vec3>(dim), 1), opt.running_weight);
  best.cost = std::numeric_limits<double>::infinity();

  // Reachability hint: every target point must come within the object's
  // extent of some control point's reachable ball.
  const double reach = static_cast<double>(pb.horizon) * pb.max_step + extent(pb.initial.positions);
  for (const Vec3& goal : pb.target.positions) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const Vec3& ctrl : pb.initial_controls) nearest = std::min(nearest, distance(ctrl, goal));
    if (c == 0 || nearest > reach) best.maybe_unreachable = true;
  }

  if (c > 0) {
    const double std0 = opt.init_std > 0.0 ? opt.init_std : 0.5 * pb.max_step;
    std::vector<Vec3> mean(dim), stddev(dim, Vec3{std0, std0, std0});
    std::vector<std::vector<Vec3>> samples(opt.samples, std::vector<Vec3>(dim));
    std::vector<ControlScript> scripts(opt.samples);
    std::vector<double> costs(opt.samples);
    std::vector<std::size_t> order(opt.samples);

    for (std::size_t it = 0; it < opt.iterations; ++it) {
      for (std::size_t s = 0; s < opt.samples; ++s) {
        for (std::size_t d = 0; d < dim; ++d) {
          if (s == 0 && opt.samples >= 2) {
            samples[s][d] = mean[d];
            continue;
          }
          samples[s][d] = {mean[d].x + stddev[d].x * rng.normal(), mean[d].y + stddev[d].y * rng.normal(),
                           mean[d].z + stddev[d].z * rng.normal()};
        }
      }
      const auto n = static_cast<std::int64_t>(opt.samples);
#pragma omp parallel for schedule(dynamic)
      for (std::int64_t ss = 0; ss < n; ++ss) {
        const auto s = static_cast<std::size_t>(ss);
        scripts[s] = script_from_displacements(pb, samples[s], opt.smoothing);
        try {
          costs[s] = plan_cost(pb, scripts[s], opt.running_weight);
        } catch (const SimulationDiverged&) {
          costs[s] = std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(costs[s])) costs[s] = std::numeric_limits<double>::infinity();
      }
      std::iota(order.begin(), order.end(), 0u);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
      if (costs[order.front()] < best.cost) {  // strict: earlier plans win ties
        best.cost = costs[order.front()];
        best.script = scripts[order.front()];
      }
      best.best_per_iteration.push_back(best.cost);

      // Refit on the executed (smoothed, clamped) displacements of the elites.
      std::size_t n_elite = 0;
      std::vector<Vec3> sum(dim), sq(dim);
      for (std::size_t e = 0; e < opt.elites; ++e) {
        const std::size_t s = order[e];
        if (!std::isfinite(costs[s])) break;
        ++n_elite;
        for (std::size_t t = 0; t < pb.horizon; ++t)
          for (std::size_t k = 0; k < c; ++k) {
            const Vec3 d = scripts[s].frames[t + 1][k] - scripts[s].frames[t][k];
            sum[t * c + k] += d;
            sq[t * c + k] += Vec3{d.x * d.x, d.y * d.y, d.z * d.z};
          }
      }
      if (n_elite == 0) {
        logger()->warn("plan: every sample diverged in iteration {}", it);
        continue;
      }
      const double inv = 1.0 / static_cast<double>(n_elite);
      const double floor_std = 1e-4 * pb.max_step;
      for (std::size_t d = 0; d < dim; ++d) {
        mean[d] = sum[d] * inv;
        const Vec3 var = sq[d] * inv - Vec3{mean[d].x * mean[d].x, mean[d].y * mean[d].y, mean[d].z * mean[d].z};
        stddev[d] = {std::max(std::sqrt(std::max(var.x, 0.0)), floor_std),
                     std::max(std::sqrt(std::max(var.y, 0.0)), floor_std),
                     std::max(std::sqrt(std::max(var.z, 0.0)), floor_std)};
      }
    }
  }

  if (c == 0) {
    best.script = script_from_displacements(pb, {}, 1);
    best.cost = best.zero_action_cost;
  }
  if (!std::isfinite(best.cost)) throw std::runtime_error("plan: every sampled rollout diverged");
  best.predicted = rollout(pb.model, pb.initial, best.script, pb.horizon);
  if (best.maybe_unreachable) {
    logger()->warn("plan: target looks unreachable within the horizon; residual cost {}", best.cost);
  }
  return best;
}

}  // namespace springtwin
