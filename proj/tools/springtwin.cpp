// Command-line front end: synth, simulate, optimize, eval, plan, serve.
#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "springtwin/dynamics.hpp"
#include "springtwin/eval.hpp"
#include "springtwin/log.hpp"
#include "springtwin/optimize.hpp"
#include "springtwin/planner.hpp"
#include "springtwin/serialize.hpp"
#include "springtwin/service.hpp"
#include "springtwin/skinning.hpp"
#include "springtwin/synth.hpp"
#include "springtwin/topology.hpp"

namespace fs = std::filesystem;
using namespace springtwin;

namespace {

// Missing inputs exit with 1, usage errors with 2.
struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path need(const std::string& path) {
  if (!fs::exists(path)) throw MissingFile("no such file: " + path);
  return path;
}

TwinArtifact load_twin(const std::string& path) { return read_json_file(need(path)).get<TwinArtifact>(); }

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(1) << "\n";
  } else {
    write_json_file(path, j);
  }
}

Vec3 parse_vec(const std::string& s) {
  Vec3 v;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> v.x >> c1 >> v.y >> c2 >> v.z) || c1 != ',' || c2 != ',') {
    throw CLI::ValidationError("vector", "expected x,y,z, got '" + s + "'");
  }
  return v;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

struct Common {
  std::uint64_t seed = 0;
  bool verbose = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"springtwin: spring-mass digital twins from partial observations"};
  app.require_subcommand(1);
  app.fallthrough();  // --seed and -v may follow the subcommand
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
  app.add_flag("-v,--verbose", common.verbose, "Verbose logging");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario bundle");
  std::string tmpl_name = "rope-lift", synth_out;
  std::size_t frames = 60;
  int views = 1;
  double cell = -1.0, noise = -1.0;
  synth->add_option("-t,--template", tmpl_name, "<rope|cloth|box>-<lift|stretch|push|fold>[-split]")
      ->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("--frames", frames, "Number of frames")->capture_default_str()->check(CLI::Range(2, 100000));
  synth->add_option("--views", views, "Cameras (1 or 3)")->capture_default_str()->check(CLI::IsMember({1, 3}));
  synth->add_option("--cell-size", cell, "Depth-buffer cell size (m)");
  synth->add_option("--noise", noise, "Point noise sigma (m)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Roll out a scenario or twin");
  std::string sim_scenario, sim_twin, sim_control, sim_out;
  std::size_t sim_frames = 0;
  bool sim_serial = false;
  auto* sim_sc_opt = simulate->add_option("--scenario", sim_scenario, "Scenario JSON");
  simulate->add_option("--twin", sim_twin, "Twin artifact JSON")->excludes(sim_sc_opt);
  simulate->add_option("--control", sim_control, "Observation or scenario JSON supplying the control script");
  simulate->add_option("--frames", sim_frames, "Frames to simulate (default: control length - 1)");
  simulate->add_option("-o,--out", sim_out, "Trajectory JSONL (default stdout)");
  simulate->add_flag("--serial", sim_serial, "Use the serial reference kernels");

  // optimize
  auto* optimize = app.add_subcommand("optimize", "Fit a twin to observations");
  std::string opt_scenario, opt_obs, opt_out, opt_init, opt_stage = "full", opt_ablation;
  PipelineConfig pc;
  std::string tape_mode = "full";
  optimize->add_option("--scenario", opt_scenario, "Canonical scenario JSON")->required();
  optimize->add_option("--obs", opt_obs, "Observation JSON")->required();
  optimize->add_option("-o,--out", opt_out, "Twin artifact output")->required();
  optimize->add_option("--stage", opt_stage, "full (both stages) | sparse (zero-order) | dense (first-order)")
      ->capture_default_str()
      ->check(CLI::IsMember({"full", "sparse", "dense"}));
  optimize->add_option("--ablation", opt_ablation, "full | zero-order-only | first-order-only")
      ->check(CLI::IsMember({"full", "zero-order-only", "first-order-only"}));
  optimize->add_option("--init", opt_init, "Twin to start the first-order stage from");
  optimize->add_option("--generations", pc.sparse.generations, "Zero-order generations")->capture_default_str();
  optimize->add_option("--iterations", pc.dense.iterations, "First-order iterations")->capture_default_str();
  optimize->add_option("--lr", pc.dense.learning_rate, "First-order learning rate")->capture_default_str();
  optimize->add_option("--train-ratio", pc.train_ratio, "Training prefix fraction")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  optimize->add_option("--w-cd", pc.weights.cd, "Chamfer weight")->capture_default_str();
  optimize->add_option("--w-track", pc.weights.track, "Tracking weight")->capture_default_str();
  optimize->add_option("--tape", tape_mode, "full | checkpointed")->check(CLI::IsMember({"full", "checkpointed"}));

  // eval
  auto* eval = app.add_subcommand("eval", "Score a twin on a window");
  std::string ev_twin, ev_obs, ev_window = "future", ev_out;
  eval->add_option("--twin", ev_twin, "Twin artifact JSON")->required();
  eval->add_option("--obs", ev_obs, "Observation JSON")->required();
  eval->add_option("--window", ev_window, "resim | future | generalization")
      ->capture_default_str()
      ->check(CLI::IsMember({"resim", "future", "generalization"}));
  eval->add_option("-o,--out", ev_out, "Report JSON (default stdout)");

  // plan
  auto* plan = app.add_subcommand("plan", "Plan control motion toward a target");
  std::string pl_twin, pl_target, pl_offset, pl_out;
  std::size_t pl_horizon = 20;
  double pl_step = 0.02;
  PlanOptions popt;
  plan->add_option("--twin", pl_twin, "Twin artifact JSON")->required();
  auto* tgt = plan->add_option("--target", pl_target, "Target JSON {\"ids\": [...], \"positions\": [[x,y,z], ...]}");
  plan->add_option("--offset", pl_offset, "x,y,z: move the grasped nodes by this offset")->excludes(tgt);
  plan->add_option("--horizon", pl_horizon, "Frames")->capture_default_str()->check(CLI::Range(1, 100000));
  plan->add_option("--max-step", pl_step, "Max control displacement per frame (m)")->capture_default_str();
  plan->add_option("--samples", popt.samples, "Samples per iteration")->capture_default_str();
  plan->add_option("--elites", popt.elites, "Elites per iteration")->capture_default_str();
  plan->add_option("--iterations", popt.iterations, "Iterations")->capture_default_str();
  plan->add_option("-o,--out", pl_out, "Plan JSON (default stdout)");

  // serve
  auto* serve = app.add_subcommand("serve", "Real-time simulation service (HTTP + WebSocket)");
  std::string sv_twin;
  ServerOptions sv;
  double sv_duration = 0.0;
  std::size_t sv_skin = 0;
  serve->add_option("--twin", sv_twin, "Twin artifact JSON")->required();
  serve->add_option("--address", sv.address, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port (0: ephemeral)")->capture_default_str()->envname("SPRINGTWIN_PORT");
  serve->add_option("--tick-rate", sv.tick_rate, "Ticks per second")->capture_default_str()->check(CLI::PositiveNumber);
  serve->add_flag("--binary", sv.binary, "Binary snapshots by default");
  serve->add_option("--duration", sv_duration, "Stop after this many seconds (0: until interrupted)");
  serve->add_option("--skin", sv_skin, "Appearance particles to carry along (0: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (common.verbose) logger()->set_level(spdlog::level::info);

  try {
    if (*synth) {
      ScenarioTemplate t = template_from_name(tmpl_name, common.seed);
      t.n_frames = frames;
      ViewConfig view = views == 3 ? ViewConfig::three_view() : ViewConfig{};
      if (cell > 0.0) view.cell_size = cell;
      if (noise >= 0.0) view.noise_sigma = noise;
      const SyntheticBundle b = generate_bundle(t, view, common.seed);
      write_bundle(synth_out, b);
      std::cout << "wrote " << synth_out << " (" << b.truth.initial_state.size() << " nodes, "
                << b.truth.topology->springs.size() << " springs, " << frames << " frames)\n";
    } else if (*simulate) {
      if (sim_scenario.empty() && sim_twin.empty()) throw CLI::RequiredError("--scenario or --twin");
      Scenario sc = sim_twin.empty() ? load<Scenario>(need(sim_scenario)) : load_twin(sim_twin).scenario();
      if (!sim_control.empty()) {
        const nlohmann::json j = read_json_file(need(sim_control));
        sc.control = j.at("control").get<ControlScript>();
      }
      if (const auto errs = validate_scenario(sc); !errs.empty()) {
        for (const auto& e : errs) std::cerr << "invalid scenario: " << e << "\n";
        return 1;
      }
      const std::size_t n = sim_frames > 0 ? sim_frames : (sc.control.frames.empty() ? 0 : sc.control.frames.size() - 1);
      const auto policy = sim_serial ? ExecutionPolicy::serial_reference : ExecutionPolicy::parallel;
      const auto states = rollout(make_model(sc, policy), sc.initial_state, sc.control, n);
      if (sim_out.empty()) {
        write_trajectory_jsonl(std::cout, states, sc.control);
      } else {
        write_trajectory_jsonl(fs::path(sim_out), states, sc.control);
      }
    } else if (*optimize) {
      const Scenario sc = load<Scenario>(need(opt_scenario));
      const ObservationSequence obs = load<ObservationSequence>(need(opt_obs));
      pc.seed = common.seed;
      pc.dense.tape.mode = tape_mode == "full" ? TapeMode::full : TapeMode::checkpointed;
      Ablation from_stage = opt_stage == "sparse" ? Ablation::zero_order_only
                            : opt_stage == "dense"  ? Ablation::first_order_only
                                                    : Ablation::full;
      pc.ablation = opt_ablation.empty() ? from_stage : ablation_from_name(opt_ablation);
      if (!opt_ablation.empty() && opt_stage != "full" && pc.ablation != from_stage) {
        throw CLI::ValidationError("--stage/--ablation", "conflicting choices");
      }
      TwinArtifact twin;
      if (!opt_init.empty()) {
        if (pc.ablation != Ablation::first_order_only) {
          throw CLI::ValidationError("--init", "only valid with --stage dense");
        }
        twin = load_twin(opt_init);
        const FrameWindow w = split_train_test(obs, pc.train_ratio).first;
        DenseResult d = optimize_dense(twin.system, sc, obs, pc.weights, w, pc.dense);
        twin.stages.push_back({"first-order", d.cost, d.loss_curve, d.iterations});
        twin.system = std::move(d.system);
        twin.train_window = w;
      } else {
        twin = run_pipeline(sc, obs, pc);
      }
      write_json_file(opt_out, twin);
      for (const StageReport& s : twin.stages) {
        std::cout << s.stage << ": cost " << s.cost.total << " (chamfer " << s.cost.c_geometry
                  << " m, track " << s.cost.c_motion << " m^2)\n";
      }
    } else if (*eval) {
      const TwinArtifact twin = load_twin(ev_twin);
      const ObservationSequence obs = load<ObservationSequence>(need(ev_obs));
      const EvalReport r = evaluate_twin(twin, obs, eval_mode_from_name(ev_window));
      nlohmann::json rep = report_json(r);
      for (const StageReport& s : twin.stages) rep["stages"].push_back({{"stage", s.stage}, {"cost", s.cost.total}});
      write_json(ev_out, rep);
      if (!ev_out.empty()) {
        std::cout << ev_window << ": mean CD " << r.metrics.mean_cd << " m, mean track error "
                  << r.metrics.mean_track_error << " m\n";
      }
    } else if (*plan) {
      const TwinArtifact twin = load_twin(pl_twin);
      if (twin.control.frames.empty()) throw std::invalid_argument("twin has no control points to plan with");
      const std::vector<Vec3>& ctrl0 = twin.control.frames.front();
      PlanTarget target;
      if (!pl_target.empty()) {
        const nlohmann::json j = read_json_file(need(pl_target));
        target.ids = j.at("ids").get<std::vector<NodeIndex>>();
        target.positions = j.at("positions").get<std::vector<Vec3>>();
      } else if (!pl_offset.empty()) {
        const Vec3 off = parse_vec(pl_offset);
        for (const ControlAttachment& a : twin.system.attachments) {
          if (std::find(target.ids.begin(), target.ids.end(), a.node_index) != target.ids.end()) continue;
          target.ids.push_back(a.node_index);
          target.positions.push_back(twin.canonical.positions[a.node_index] + off);
        }
      } else {
        throw CLI::RequiredError("--target or --offset");
      }
      popt.seed = common.seed;
      const PlanProblem pb = make_plan_problem(twin.system, twin.canonical, ctrl0, target, pl_horizon, pl_step);
      const PlanResult r = plan_shooting(pb, popt);
      nlohmann::json j{{"v", kSchemaVersion},
                       {"control", r.script},
                       {"cost", r.cost},
                       {"zero_action_cost", r.zero_action_cost},
                       {"best_per_iteration", r.best_per_iteration},
                       {"maybe_unreachable", r.maybe_unreachable}};
      write_json(pl_out, j);
      if (!pl_out.empty()) std::cout << "plan cost " << r.cost << " (no motion: " << r.zero_action_cost << ")\n";
    } else if (*serve) {
      const TwinArtifact twin = load_twin(sv_twin);
      SessionOptions so;
      if (sv_skin > 0) {
        SkinRig rig;
        rig.particles = sample_skin_particles(twin.canonical.positions, sv_skin, 0.004, common.seed);
        rig.binding = bind_skin(rig.particles, twin.canonical.positions,
                                std::min<std::size_t>(4, twin.canonical.size()));
        rig.neighborhoods = node_neighborhoods(twin.system.topology, twin.canonical.positions);
        so.skin = std::move(rig);
      }
      std::vector<Vec3> ctrl0 = twin.control.frames.empty() ? std::vector<Vec3>{} : twin.control.frames.front();
      SimulationSession session(twin.model(), twin.canonical, std::move(ctrl0), std::move(so));
      Server server(session, sv);
      server.start();
      std::cout << "listening on http://" << sv.address << ":" << server.port() << " (ws: /ws)" << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const auto started = std::chrono::steady_clock::now();
      while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (sv_duration > 0.0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() >= sv_duration) {
          break;
        }
      }
      server.stop();
      std::cout << "stopped after " << server.ticks() << " ticks" << std::endl;
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const MissingFile& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
