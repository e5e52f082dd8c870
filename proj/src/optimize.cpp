#include "springtwin/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "springtwin/log.hpp"
#include "springtwin/serialize.hpp"
#include "springtwin/spatial.hpp"
#include "springtwin/synth.hpp"
#include "springtwin/topology.hpp"

namespace springtwin {

namespace {

constexpr std::size_t idx(SparseCoord c) { return static_cast<std::size_t>(c); }

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

double median_spacing(const std::vector<Vec3>& pts) {
  if (pts.size() < 2) throw std::invalid_argument("sparse bounds: need at least 2 canonical points");
  const KdTree tree(pts);
  std::vector<double> d;
  for (const Vec3& p : pts) {
    for (const Neighbor& nb : tree.k_nearest(p, 2)) {
      if (nb.squared_distance > 0.0) {
        d.push_back(std::sqrt(nb.squared_distance));
        break;
      }
    }
  }
  if (d.empty()) throw std::invalid_argument("sparse bounds: all canonical points coincide");
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace

const char* to_string(SparseCoord c) {
  switch (c) {
    case SparseCoord::log_k_hom: return "log_k_hom";
    case SparseCoord::log_gamma: return "log_gamma";
    case SparseCoord::logit_delta: return "logit_delta";
    case SparseCoord::restitution: return "restitution";
    case SparseCoord::friction: return "friction";
    case SparseCoord::collision_dist: return "collision_dist";
    case SparseCoord::topo_radius: return "topo_radius";
    case SparseCoord::topo_max_neighbors: return "topo_max_neighbors";
    case SparseCoord::ctrl_radius: return "ctrl_radius";
    case SparseCoord::ctrl_max_neighbors: return "ctrl_max_neighbors";
    case SparseCoord::log_k_ctrl: return "log_k_ctrl";
    case SparseCoord::count: break;
  }
  return "?";
}

SparseBounds SparseBounds::for_geometry(const std::vector<Vec3>& canonical,
                                        const std::vector<Vec3>& ctrl_points) {
  const double s = median_spacing(canonical);
  SparseBounds b;
  auto set = [&](SparseCoord c, double lo, double hi) {
    b.lower[idx(c)] = lo;
    b.upper[idx(c)] = hi;
  };
  set(SparseCoord::log_k_hom, std::log(10.0), std::log(1e5));
  set(SparseCoord::log_gamma, std::log(1e-4), std::log(1.0));
  set(SparseCoord::logit_delta, logit(0.99), logit(0.99999));
  set(SparseCoord::restitution, 0.0, 1.0);
  set(SparseCoord::friction, 0.0, 1.0);
  set(SparseCoord::collision_dist, 0.0, 0.6 * s);
  set(SparseCoord::topo_radius, 1.05 * s, 3.0 * s);
  set(SparseCoord::topo_max_neighbors, 1.0, 16.0);

  double reach = 0.0;
  if (!ctrl_points.empty()) {
    const KdTree tree(canonical);
    for (const Vec3& c : ctrl_points) reach = std::max(reach, std::sqrt(tree.nearest(c).squared_distance));
  }
  const double ctrl_lo = std::max(0.5 * s, 1.05 * reach);
  set(SparseCoord::ctrl_radius, ctrl_lo, std::max(3.0 * s, 1.5 * ctrl_lo));
  set(SparseCoord::ctrl_max_neighbors, 1.0, 6.0);
  set(SparseCoord::log_k_ctrl, std::log(100.0), std::log(1e5));
  return b;
}

PhysParams decode_sparse(const std::array<double, kSparseDim>& unit, const SparseBounds& bounds,
                         const PhysParams& base) {
  std::array<double, kSparseDim> v{};
  for (std::size_t i = 0; i < kSparseDim; ++i) {
    v[i] = bounds.lower[i] + std::clamp(unit[i], 0.0, 1.0) * (bounds.upper[i] - bounds.lower[i]);
  }
  PhysParams p = base;
  p.k_hom = std::exp(v[idx(SparseCoord::log_k_hom)]);
  p.gamma = std::exp(v[idx(SparseCoord::log_gamma)]);
  p.delta = sigmoid(v[idx(SparseCoord::logit_delta)]);
  p.restitution = v[idx(SparseCoord::restitution)];
  p.friction = v[idx(SparseCoord::friction)];
  p.collision_dist = v[idx(SparseCoord::collision_dist)];
  p.topo_radius = v[idx(SparseCoord::topo_radius)];
  p.topo_max_neighbors = std::max(1, round_half_up(v[idx(SparseCoord::topo_max_neighbors)]));
  p.ctrl_radius = v[idx(SparseCoord::ctrl_radius)];
  p.ctrl_max_neighbors = std::max(1, round_half_up(v[idx(SparseCoord::ctrl_max_neighbors)]));
  p.k_ctrl = std::exp(v[idx(SparseCoord::log_k_ctrl)]);
  return p;
}

std::array<double, kSparseDim> encode_sparse(const PhysParams& p, const SparseBounds& bounds) {
  std::array<double, kSparseDim> v{};
  v[idx(SparseCoord::log_k_hom)] = std::log(p.k_hom);
  v[idx(SparseCoord::log_gamma)] = std::log(p.gamma);
  v[idx(SparseCoord::logit_delta)] = p.delta >= 1.0 ? bounds.upper[idx(SparseCoord::logit_delta)] : logit(p.delta);
  v[idx(SparseCoord::restitution)] = p.restitution;
  v[idx(SparseCoord::friction)] = p.friction;
  v[idx(SparseCoord::collision_dist)] = p.collision_dist;
  v[idx(SparseCoord::topo_radius)] = p.topo_radius;
  v[idx(SparseCoord::topo_max_neighbors)] = p.topo_max_neighbors;
  v[idx(SparseCoord::ctrl_radius)] = p.ctrl_radius;
  v[idx(SparseCoord::ctrl_max_neighbors)] = p.ctrl_max_neighbors;
  v[idx(SparseCoord::log_k_ctrl)] = std::log(p.k_ctrl);
  std::array<double, kSparseDim> unit{};
  for (std::size_t i = 0; i < kSparseDim; ++i) {
    const double span = bounds.upper[i] - bounds.lower[i];
    unit[i] = span > 0.0 ? std::clamp((v[i] - bounds.lower[i]) / span, 0.0, 1.0) : 0.0;
  }
  return unit;
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::zero_order_only: return "zero-order-only";
    case Ablation::first_order_only: return "first-order-only";
  }
  return "?";
}

Ablation ablation_from_name(const std::string& name) {
  for (Ablation a : {Ablation::full, Ablation::zero_order_only, Ablation::first_order_only}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown ablation '" + name + "' (full, zero-order-only, first-order-only)");
}

SpringMassModel FittedSystem::model(ExecutionPolicy policy) const {
  return SpringMassModel(topology, attachments, params, ground_height, policy);
}

FittedSystem build_system(const Scenario& canonical, const PhysParams& params) {
  FittedSystem s;
  s.params = params;
  s.ground_height = canonical.ground_height;
  const auto& pts = canonical.initial_state.positions;
  s.topology = build_springs(pts, params.topo_radius, params.topo_max_neighbors, params.k_hom);
  if (canonical.control.n_ctrl > 0 && !canonical.control.frames.empty()) {
    s.attachments = attach_controls(canonical.control.frames.front(), pts, params.ctrl_radius,
                                    params.ctrl_max_neighbors, params.k_ctrl);
  }
  return s;
}

CostBreakdown system_cost(const FittedSystem& system, const Scenario& canonical,
                          const ObservationSequence& obs, const CostWeights& weights,
                          FrameWindow window) {
  if (window.empty()) throw std::invalid_argument("system_cost: empty window");
  const auto states =
      rollout(system.model(), canonical.initial_state, canonical.control, window.end - 1);
  return trajectory_cost(states, obs, weights, window);
}

SparseResult optimize_sparse(const Scenario& canonical, const ObservationSequence& obs,
                             const CostWeights& weights, FrameWindow window,
                             const SparseConfig& config, std::uint64_t seed) {
  const SparseBounds bounds =
      config.bounds ? *config.bounds
                    : SparseBounds::for_geometry(canonical.initial_state.positions,
                                                 canonical.control.frames.empty()
                                                     ? std::vector<Vec3>{}
                                                     : canonical.control.frames.front());
  const PhysParams base = canonical.params;

  const Objective objective = [&](std::span<const double> u) {
    std::array<double, kSparseDim> unit{};
    std::copy(u.begin(), u.end(), unit.begin());
    const FittedSystem sys = build_system(canonical, decode_sparse(unit, bounds, base));
    return system_cost(sys, canonical, obs, weights, window).total;
  };

  std::array<double, kSparseDim> init{};
  init.fill(0.5);
  if (config.init) init = *config.init;
  Bounds cube{std::vector<double>(kSparseDim, 0.0), std::vector<double>(kSparseDim, 1.0)};
  CmaOptions opt;
  opt.max_generations = config.generations;
  opt.max_evaluations = config.max_evaluations;
  opt.lambda = config.lambda;
  opt.sigma0 = config.sigma0;
  opt.seed = seed;
  opt.penalty_weight = config.penalty_weight;

  const CmaResult cma = cma_es(objective, init, cube, opt);
  if (cma.best_x.empty() || !(cma.best_value < opt.failure_fitness)) {
    throw std::runtime_error("zero-order stage: every candidate failed (divergence or unattached controls)");
  }

  SparseResult r;
  std::copy(cma.best_x.begin(), cma.best_x.end(), r.unit.begin());
  r.system = build_system(canonical, decode_sparse(r.unit, bounds, base));
  r.cost = system_cost(r.system, canonical, obs, weights, window);
  r.evaluations = cma.evaluations;
  for (const CmaGeneration& g : cma.history) r.best_per_generation.push_back(g.best_so_far);
  return r;
}

namespace {

// Dense parameter vector: [log k_s..., log gamma, logit delta, e, mu].
std::vector<double> encode_dense(const FittedSystem& s) {
  std::vector<double> th;
  th.reserve(s.topology.springs.size() + 4);
  for (const Spring& sp : s.topology.springs) th.push_back(std::log(sp.stiffness));
  th.push_back(std::log(s.params.gamma));
  th.push_back(logit(std::min(s.params.delta, 1.0 - 1e-9)));
  th.push_back(s.params.restitution);
  th.push_back(s.params.friction);
  return th;
}

FittedSystem decode_dense(const FittedSystem& shape, const std::vector<double>& th) {
  FittedSystem s = shape;
  const std::size_t n = s.topology.springs.size();
  for (std::size_t i = 0; i < n; ++i) s.topology.springs[i].stiffness = std::exp(th[i]);
  s.params.gamma = std::exp(th[n]);
  s.params.delta = sigmoid(th[n + 1]);
  s.params.restitution = th[n + 2];
  s.params.friction = th[n + 3];
  return s;
}

void clamp_dense(std::vector<double>& th, std::size_t n_springs, const DenseConfig& c) {
  for (std::size_t i = 0; i < n_springs; ++i) th[i] = std::clamp(th[i], c.log_k_min, c.log_k_max);
  th[n_springs] = std::clamp(th[n_springs], std::log(1e-6), std::log(10.0));
  th[n_springs + 1] = std::clamp(th[n_springs + 1], logit(0.9), logit(1.0 - 1e-9));
  th[n_springs + 2] = std::clamp(th[n_springs + 2], 0.0, 1.0);
  th[n_springs + 3] = std::clamp(th[n_springs + 3], 0.0, 1.0);
}

struct DenseEval {
  CostBreakdown cost;
  std::vector<double> grad;
};

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::optional<DenseEval> evaluate_dense(const FittedSystem& sys, const Scenario& canonical,
                                        const ObservationSequence& obs, const CostWeights& weights,
                                        FrameWindow window, const DenseConfig& config) {
  try {
    const SpringMassModel model = sys.model();
    const TapedCost taped =
        forward_with_tape(model, canonical.initial_state, canonical.control, obs, weights, window, config.tape);
    if (!std::isfinite(taped.cost.total)) return std::nullopt;
    const ParamGradient g = backward(taped.tape);
    DenseEval out{taped.cost, g.d_log_k};
    const double gamma = sys.params.gamma, delta = sys.params.delta;
    out.grad.push_back(g.d_gamma * gamma);
    out.grad.push_back(g.d_delta * delta * (1.0 - delta));
    out.grad.push_back(g.d_e);
    out.grad.push_back(g.d_mu);
    if (!all_finite(out.grad)) return std::nullopt;
    return out;
  } catch (const SimulationDiverged&) {
    return std::nullopt;
  }
}

}  // namespace

DenseResult optimize_dense(const FittedSystem& start, const Scenario& canonical,
                           const ObservationSequence& obs, const CostWeights& weights,
                           FrameWindow window, const DenseConfig& config) {
  const std::size_t n_springs = start.topology.springs.size();
  std::vector<double> theta = encode_dense(start);
  clamp_dense(theta, n_springs, config);

  DenseResult r;
  r.system = start;
  auto current = evaluate_dense(r.system, canonical, obs, weights, window, config);
  if (!current) {
    throw std::runtime_error("first-order stage: the starting point diverges or has a non-finite gradient");
  }
  r.cost = current->cost;
  r.initial_cost = current->cost.total;
  r.loss_curve.push_back(current->cost.total);

  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), trial(theta.size());
  std::vector<double> best_so_far{current->cost.total};
  double lr = config.learning_rate;

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const std::vector<double>& g = current->grad;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
    }
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(it));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(it));

    std::optional<DenseEval> next;
    std::size_t retries = 0;
    for (;;) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        trial[i] = theta[i] - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.epsilon);
      }
      clamp_dense(trial, n_springs, config);
      next = evaluate_dense(decode_dense(start, trial), canonical, obs, weights, window, config);
      if (next) break;
      ++r.rejected_steps;
      if (++retries > config.max_retries) break;
      lr *= 0.5;
      logger()->warn("first-order stage: step {} failed, learning rate halved to {}", it, lr);
    }
    if (!next) {
      r.stopped_on_failure = true;
      logger()->warn("first-order stage: giving up after {} retries; returning best iterate", config.max_retries);
      break;
    }
    theta = trial;
    current = std::move(next);
    r.iterations = it;
    r.loss_curve.push_back(current->cost.total);
    if (current->cost.total < r.cost.total) {
      r.cost = current->cost;
      r.system = decode_dense(start, theta);
    }
    best_so_far.push_back(r.cost.total);
    if (best_so_far.size() > config.patience) {
      const double before = best_so_far[best_so_far.size() - 1 - config.patience];
      if (before - r.cost.total < config.rel_tolerance * before) break;
    }
  }
  return r;
}

Scenario TwinArtifact::scenario(const std::optional<ControlScript>& control_override) const {
  Scenario s;
  s.name = name;
  s.initial_state = canonical;
  s.topology = system.topology;
  s.params = system.params;
  s.control = control_override ? *control_override : control;
  s.ground_height = system.ground_height;
  return s;
}

TwinArtifact run_pipeline(const Scenario& canonical, const ObservationSequence& obs,
                          const PipelineConfig& config) {
  if (const auto errs = validate_pairing(canonical, obs); !errs.empty()) {
    std::string msg = "cannot fit: ";
    for (const auto& e : errs) msg += e + "; ";
    throw std::invalid_argument(msg);
  }
  if (canonical.initial_state.size() < 2) throw std::invalid_argument("cannot fit: fewer than 2 canonical points");
  const FrameWindow window = config.window ? *config.window : split_train_test(obs, config.train_ratio).first;
  if (window.empty() || window.end > obs.size()) throw std::invalid_argument("cannot fit: bad training window");

  TwinArtifact art;
  art.name = canonical.name;
  art.canonical = SystemState::at_rest(canonical.initial_state.positions);
  art.control = canonical.control;
  art.train_window = window;
  art.seed = config.seed;
  art.ablation = config.ablation;
  art.config = config_to_json(config);

  FittedSystem system;
  if (config.ablation == Ablation::first_order_only) {
    const SparseBounds bounds =
        config.sparse.bounds ? *config.sparse.bounds
                             : SparseBounds::for_geometry(canonical.initial_state.positions,
                                                          canonical.control.frames.empty()
                                                              ? std::vector<Vec3>{}
                                                              : canonical.control.frames.front());
    std::array<double, kSparseDim> init{};
    init.fill(0.5);
    if (config.sparse.init) init = *config.sparse.init;
    system = build_system(canonical, decode_sparse(init, bounds, canonical.params));
    art.stages.push_back({"initial", system_cost(system, canonical, obs, config.weights, window), {}, 1});
  } else {
    SparseResult sparse = optimize_sparse(canonical, obs, config.weights, window, config.sparse, config.seed);
    art.stages.push_back({"zero-order", sparse.cost, sparse.best_per_generation, sparse.evaluations});
    system = std::move(sparse.system);
  }

  if (config.ablation != Ablation::zero_order_only) {
    DenseResult dense = optimize_dense(system, canonical, obs, config.weights, window, config.dense);
    art.stages.push_back({"first-order", dense.cost, dense.loss_curve, dense.iterations});
    system = std::move(dense.system);
  }
  art.system = std::move(system);
  return art;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["ablation"] = to_string(c.ablation);
  j["weights"] = {{"cd", c.weights.cd}, {"track", c.weights.track}};
  j["sparse"] = {{"generations", c.sparse.generations},
                 {"max_evaluations", c.sparse.max_evaluations},
                 {"sigma0", c.sparse.sigma0},
                 {"lambda", c.sparse.lambda},
                 {"penalty_weight", c.sparse.penalty_weight}};
  j["dense"] = {{"iterations", c.dense.iterations},
                {"learning_rate", c.dense.learning_rate},
                {"rel_tolerance", c.dense.rel_tolerance},
                {"patience", c.dense.patience},
                {"tape", c.dense.tape.mode == TapeMode::full ? "full" : "checkpointed"},
                {"checkpoint_interval", c.dense.tape.checkpoint_interval}};
  j["train_ratio"] = c.train_ratio;
  j["seed"] = c.seed;
  return j;
}

void to_json(nlohmann::json& j, const CostBreakdown& c) {
  j = {{"c_geometry", c.c_geometry},
       {"c_motion", c.c_motion},
       {"total", c.total},
       {"geometry_per_frame", c.geometry_per_frame},
       {"motion_per_frame", c.motion_per_frame},
       {"empty_cloud_frames", c.empty_cloud_frames},
       {"empty_track_frames", c.empty_track_frames}};
}

namespace {

void cost_from_json(const nlohmann::json& j, CostBreakdown& c) {
  c.c_geometry = j.at("c_geometry").get<double>();
  c.c_motion = j.at("c_motion").get<double>();
  c.total = j.at("total").get<double>();
  c.geometry_per_frame = j.value("geometry_per_frame", std::vector<double>{});
  c.motion_per_frame = j.value("motion_per_frame", std::vector<double>{});
  c.empty_cloud_frames = j.value("empty_cloud_frames", std::size_t{0});
  c.empty_track_frames = j.value("empty_track_frames", std::size_t{0});
}

}  // namespace

void to_json(nlohmann::json& j, const TwinArtifact& t) {
  nlohmann::json attach = nlohmann::json::array();
  for (const ControlAttachment& a : t.system.attachments) {
    attach.push_back({a.ctrl_index, a.node_index, a.rest_length, a.stiffness});
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const StageReport& s : t.stages) {
    stages.push_back({{"stage", s.stage}, {"cost", s.cost}, {"history", s.history}, {"evaluations", s.evaluations}});
  }
  j = {{"v", kSchemaVersion},
       {"kind", "twin"},
       {"name", t.name},
       {"canonical", t.canonical},
       {"params", t.system.params},
       {"topology", t.system.topology},
       {"attachments", attach},
       {"ground_height", t.system.ground_height},
       {"control", t.control},
       {"train_window", {t.train_window.begin, t.train_window.end}},
       {"provenance", {{"seed", t.seed}, {"ablation", to_string(t.ablation)}, {"config", t.config}}},
       {"stages", stages}};
}

void from_json(const nlohmann::json& j, TwinArtifact& t) {
  if (j.value("kind", std::string{}) != "twin") throw std::invalid_argument("not a twin artifact");
  if (j.at("v").get<int>() != kSchemaVersion) {
    throw std::invalid_argument("twin artifact: unsupported schema version " + j.at("v").dump());
  }
  t.name = j.value("name", std::string{});
  t.canonical = j.at("canonical").get<SystemState>();
  t.system.params = j.at("params").get<PhysParams>();
  t.system.topology = j.at("topology").get<SpringTopology>();
  t.system.ground_height = j.at("ground_height").get<double>();
  t.system.attachments.clear();
  for (const auto& a : j.at("attachments")) {
    t.system.attachments.push_back({a.at(0).get<std::uint32_t>(), a.at(1).get<NodeIndex>(),
                                    a.at(2).get<double>(), a.at(3).get<double>()});
  }
  t.control = j.at("control").get<ControlScript>();
  t.train_window = {j.at("train_window").at(0).get<std::size_t>(), j.at("train_window").at(1).get<std::size_t>()};
  const auto& prov = j.at("provenance");
  t.seed = prov.at("seed").get<std::uint64_t>();
  t.ablation = ablation_from_name(prov.at("ablation").get<std::string>());
  t.config = prov.value("config", nlohmann::json::object());
  t.stages.clear();
  for (const auto& s : j.at("stages")) {
    StageReport r;
    r.stage = s.at("stage").get<std::string>();
    cost_from_json(s.at("cost"), r.cost);
    r.history = s.at("history").get<std::vector<double>>();
    r.evaluations = s.at("evaluations").get<std::size_t>();
    t.stages.push_back(std::move(r));
  }
}

}  // namespace springtwin
