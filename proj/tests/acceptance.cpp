// End-to-end acceptance run: one PASS/FAIL line per criterion.
// Thresholds are fixed here; nothing is read from the environment.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "gradcheck.hpp"
#include "springtwin/eval.hpp"
#include "springtwin/log.hpp"
#include "springtwin/objective.hpp"
#include "springtwin/optimize.hpp"
#include "springtwin/planner.hpp"
#include "springtwin/serialize.hpp"
#include "springtwin/skinning.hpp"
#include "springtwin/synth.hpp"

using namespace springtwin;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

int g_failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %-22s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- 1
void gradient_check() {
  const auto t0 = clock_type::now();
  double worst = 0.0;
  std::size_t comps = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto g = test::random_grad_problem(seed, 20, 40);
    const auto r = test::check_gradient(g);
    worst = std::max(worst, r.max_rel_error);
    comps += r.components;
  }
  const double secs = seconds_since(t0);
  report(1, "gradient", worst <= 1e-4 && secs <= 60.0,
         fmt("max rel err %.3g over %zu components (<= 1e-4), %.1f s (<= 60)", worst, comps, secs));
}

// ---------------------------------------------------------------- 2
void conservation() {
  Rng rng(2024);
  PhysParams p = test::quiet_params();
  p.gamma = 0.05;
  p.substeps = 20;
  const auto pts = test::random_cloud(rng, 60, 0.05);
  SpringMassModel m(build_springs(pts, 0.04, 6, 800.0), {}, p, -1e9);
  SystemState s = SystemState::at_rest(pts);
  for (Vec3& v : s.velocities) v = {rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2)};
  StepWorkspace ws;
  double worst_drift = 0.0;
  Vec3 prev = linear_momentum(m, s);
  for (int t = 0; t < 1000; ++t) {
    s = step(m, s, {}, {}, ws);
    const Vec3 cur = linear_momentum(m, s);
    worst_drift = std::max(worst_drift, norm(cur - prev));
    prev = cur;
  }

  // Dissipative settings: drag, dashpots, inelastic pair contacts, no gravity, no controls.
  // Nodes start further apart than the contact distance, so every contact is a
  // real impact. (A spring shorter than the contact distance, or a node pinned
  // to the floor by a spring, turns the impulse into an energy pump.)
  int energy_ok = 0;
  double worst_rise = 0.0;
  std::size_t contacts = 0;
  for (int sc = 0; sc < 10; ++sc) {
    PhysParams q = test::quiet_params();
    q.gamma = rng.uniform(0.01, 0.1);
    q.delta = rng.uniform(0.99, 0.999);
    q.restitution = rng.uniform(0.0, 1.0);
    q.friction = rng.uniform(0.0, 1.0);
    q.collision_dist = 0.004;
    q.substeps = 20;
    const auto cloud = test::jittered_lattice(rng, 4, 0.01, 0.002);
    SpringMassModel mm(build_springs(cloud, 0.015, 4 + static_cast<int>(rng.uniform_index(5)), rng.uniform(100, 1000)),
                       {}, q, -1e9);
    SystemState st = SystemState::at_rest(cloud);
    for (Vec3& v : st.velocities) v = {rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)};
    double e_prev = kinetic_energy(mm, st) + spring_potential(mm, st);
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
      for (int s = 0; s < q.substeps; ++s) {
        advance_substep(mm, st, {}, ws);
        contacts += ws.events.size();
      }
      const double e = kinetic_energy(mm, st) + spring_potential(mm, st);
      if (e > e_prev * (1.0 + 1e-9)) {
        ok = false;
        worst_rise = std::max(worst_rise, (e - e_prev) / e_prev);
      }
      e_prev = e;
    }
    energy_ok += ok;
  }
  report(2, "conservation", worst_drift < 1e-10 && energy_ok == 10 && contacts > 0,
         fmt("momentum drift %.2e N*s/step (< 1e-10); energy non-increasing %d/10 (worst rise %.2e, %zu contacts)",
             worst_drift, energy_ok, worst_rise, contacts));
}

// ---------------------------------------------------------------- 3, 4, 5, 11
struct RopeFit {
  SyntheticBundle source, target;
  TwinArtifact twin;
  double seconds = 0.0;
};

RopeFit fit_rope() {
  RopeFit f;
  const auto t0 = clock_type::now();
  const ScenarioTemplate tmpl = template_from_name("rope-lift", 1);
  auto pair = generalization_pair(tmpl, ScriptKind::lift, ScriptKind::stretch, ViewConfig{}, 1);
  f.source = std::move(pair.first);
  f.target = std::move(pair.second);
  PipelineConfig pc;
  pc.seed = 1;
  f.twin = run_pipeline(canonical_scenario(f.source.truth), f.source.observation, pc);
  f.seconds = seconds_since(t0);
  return f;
}

void recovery(const RopeFit& f) {
  const EvalReport train = evaluate_twin(f.twin, f.source.observation, EvalMode::resim);
  const double ext = extent(f.source.truth.initial_state.positions);
  const double sigma = ViewConfig{}.noise_sigma;
  const bool ok = train.metrics.mean_cd <= 3.0 * sigma && train.metrics.mean_track_error <= 0.05 * ext &&
                  f.seconds <= 600.0;
  report(3, "recovery", ok,
         fmt("train CD %.4f m (<= %.4f), track %.4f m (<= %.4f), fitted k %.0f (true 2000), %.1f s (<= 600)",
             train.metrics.mean_cd, 3.0 * sigma, train.metrics.mean_track_error, 0.05 * ext,
             f.twin.system.params.k_hom, f.seconds));

  const EvalReport fut = evaluate_twin(f.twin, f.source.observation, EvalMode::future);
  report(4, "future prediction", fut.metrics.mean_track_error <= 2.0 * train.metrics.mean_track_error,
         fmt("future track %.4f m (<= 2 x %.4f)", fut.metrics.mean_track_error, train.metrics.mean_track_error));

  const EvalReport gen = evaluate_twin(f.twin, f.target.observation, EvalMode::generalization);
  report(5, "generalization", gen.metrics.mean_track_error <= 2.5 * train.metrics.mean_track_error,
         fmt("stretch track %.4f m (<= 2.5 x %.4f), CD %.4f m", gen.metrics.mean_track_error,
             train.metrics.mean_track_error, gen.metrics.mean_cd));
}

void planner(const RopeFit& f) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    PlanTarget target;
    for (const ControlAttachment& a : f.twin.system.attachments) {
      if (std::find(target.ids.begin(), target.ids.end(), a.node_index) != target.ids.end()) continue;
      target.ids.push_back(a.node_index);
      target.positions.push_back(f.twin.canonical.positions[a.node_index] + Vec3{0.0, 0.2, 0.0});
    }
    const PlanProblem pb =
        make_plan_problem(f.twin.system, f.twin.canonical, f.twin.control.frames.front(), target, 20, 0.02);
    PlanOptions o;
    o.seed = seed;
    const PlanResult r = plan_shooting(pb, o);
    const double ratio = r.cost / r.zero_action_cost;
    wins += ratio <= 0.5;
    detail += fmt("%s%.3f", seed == 1 ? "" : ", ", ratio);
  }
  report(11, "planner", wins == 3, fmt("cost / zero-action = [%s] (<= 0.5), %d/3 seeds", detail.c_str(), wins));
}

// ---------------------------------------------------------------- 6
void ablation() {
  const std::vector<std::pair<std::string, std::uint64_t>> scenarios{
      {"rope-lift", 11}, {"rope-lift-split", 12}, {"cloth-lift", 13}, {"rope-stretch", 14}, {"cloth-fold", 15}};
  std::vector<double> full, zero, first;
  const auto t0 = clock_type::now();
  for (const auto& [name, seed] : scenarios) {
    const SyntheticBundle b = generate_bundle(template_from_name(name, seed), ViewConfig{}, seed);
    const Scenario canon = canonical_scenario(b.truth);
    PipelineConfig pc;
    pc.seed = seed;
    auto cost = [&](Ablation a) {
      pc.ablation = a;
      return run_pipeline(canon, b.observation, pc).stages.back().cost.total;
    };
    full.push_back(cost(Ablation::full));
    zero.push_back(cost(Ablation::zero_order_only));
    first.push_back(cost(Ablation::first_order_only));
    logger()->info("ablation {}: full {} zero {} first {}", name, full.back(), zero.back(), first.back());
  }
  const double mf = median(full), mz = median(zero), m1 = median(first);
  report(6, "ablation", mf <= mz && mf <= m1,
         fmt("median train cost full %.4g, zero-order-only %.4g, first-order-only %.4g (%.0f s)", mf, mz, m1,
             seconds_since(t0)));
}

// ---------------------------------------------------------------- 7
void chamfer() {
  Rng rng(7);
  int equal = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = test::random_cloud(rng, 1 + rng.uniform_index(500));
    const auto b = test::random_cloud(rng, 1 + rng.uniform_index(500));
    equal += chamfer_single_direction(a, b) == chamfer_single_direction_brute_force(a, b);
  }
  report(7, "chamfer oracle", equal == 100, fmt("%d/100 pairs bit-equal to brute force", equal));
}

// ---------------------------------------------------------------- 8
void skinning() {
  Rng rng(8);
  const auto nodes = test::random_cloud(rng, 200, 0.1);
  const auto nb = node_neighborhoods(build_springs(nodes, 0.05, 8, 1.0), nodes);
  const auto parts = sample_skin_particles(nodes, 1000, 0.01, 8);
  const SkinBinding bind = bind_skin(parts, nodes, 4);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Matrix3d r = Eigen::AngleAxisd(rng.uniform(-3.1, 3.1), axis.normalized()).toRotationMatrix();
    const Eigen::Vector3d t(rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2));
    auto move = [&](const Vec3& p) {
      const Eigen::Vector3d q = r * Eigen::Vector3d(p.x, p.y, p.z) + t;
      return Vec3{q.x(), q.y(), q.z()};
    };
    std::vector<Vec3> moved;
    for (const Vec3& p : nodes) moved.push_back(move(p));
    const auto out = deform_skin(parts, bind, nodes, moved, estimate_node_rotations(nodes, moved, nb));
    for (std::size_t k = 0; k < parts.size(); ++k) worst = std::max(worst, distance(out[k].center, move(parts[k].center)));
  }
  report(8, "skinning", worst <= 1e-8, fmt("max centre error %.2e m over 20 rigid motions (<= 1e-8)", worst));
}

// ---------------------------------------------------------------- 9
void performance() {
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) pts.push_back({0.01 * i, 0.01 * j, 0.05 + 0.0001 * ((i * 7 + j * 3) % 5)});
  PhysParams p;
  p.k_hom = 500.0;
  p.node_mass = 0.02;
  p.substeps = 20;
  SpringTopology topo = build_springs(pts, 0.015, 8, p.k_hom);
  topo.springs.resize(std::min<std::size_t>(topo.springs.size(), 1000));
  const std::size_t n_springs = topo.springs.size();
  SpringMassModel m(topo, {}, p, 0.0);
  SystemState s = SystemState::at_rest(pts);
  StepWorkspace ws;
  for (int i = 0; i < 30; ++i) s = step(m, s, {}, {}, ws);
  const int frames = 600;
  const auto t0 = clock_type::now();
  for (int i = 0; i < frames; ++i) s = step(m, s, {}, {}, ws);
  const double fps = frames / seconds_since(t0);
  omp_set_num_threads(threads);
  report(9, "performance", n_springs == 1000 && fps >= 300.0,
         fmt("%zu springs, 20 substeps, 1 thread: %.0f frames/s (>= 300)", n_springs, fps));
}

// ---------------------------------------------------------------- 10
void determinism() {
  auto once = [] {
    const ScenarioTemplate tmpl = template_from_name("rope-lift", 10);
    const SyntheticBundle b = generate_bundle(tmpl, ViewConfig{}, 10);
    PipelineConfig pc;
    pc.seed = 10;
    const TwinArtifact twin = run_pipeline(canonical_scenario(b.truth), b.observation, pc);
    const EvalReport r = evaluate_twin(twin, b.observation, EvalMode::future);
    return nlohmann::json(b.observation).dump() + nlohmann::json(twin).dump() + report_json(r).dump();
  };
  const std::string a = once(), b = once();
  report(10, "determinism", a == b, fmt("two runs, %zu bytes of artifacts, %s", a.size(), a == b ? "identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
  // Optional list of criterion numbers to run; default all.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  const auto t0 = clock_type::now();
  if (want(1)) gradient_check();
  if (want(2)) conservation();
  if (want(3) || want(4) || want(5) || want(11)) {
    const RopeFit f = fit_rope();
    if (want(3) || want(4) || want(5)) recovery(f);
    if (want(11)) planner(f);
  }
  if (want(6)) ablation();
  if (want(7)) chamfer();
  if (want(8)) skinning();
  if (want(9)) performance();
  if (want(10)) determinism();
  std::printf("acceptance: %d failing, %.1f s\n", g_failures, seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
