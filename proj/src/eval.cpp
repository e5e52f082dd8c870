#include "springtwin/eval.hpp"

#include <stdexcept>

#include "springtwin/dynamics.hpp"

namespace springtwin {

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::resim: return "resim";
    case EvalMode::future: return "future";
    case EvalMode::generalization: return "generalization";
  }
  return "?";
}

EvalMode eval_mode_from_name(const std::string& name) {
  for (EvalMode m : {EvalMode::resim, EvalMode::future, EvalMode::generalization}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown eval window '" + name + "' (resim, future, generalization)");
}

EvalReport evaluate_twin(const TwinArtifact& twin, const ObservationSequence& obs, EvalMode mode) {
  if (obs.frames.empty()) throw std::invalid_argument("evaluate: empty observation sequence");
  FrameWindow window;
  switch (mode) {
    case EvalMode::resim:
      window = twin.train_window;
      break;
    case EvalMode::future:
      window = {twin.train_window.end, obs.size()};
      break;
    case EvalMode::generalization:
      window = {0, obs.size()};
      break;
  }
  if (window.empty() || window.end > obs.size()) {
    throw std::invalid_argument("evaluate: window [" + std::to_string(window.begin) + ", " +
                                std::to_string(window.end) + ") is empty or outside the observation");
  }
  const Scenario sc = twin.scenario(obs.control);
  if (const auto errs = validate_pairing(sc, obs); !errs.empty()) {
    throw std::invalid_argument("evaluate: " + errs.front());
  }
  EvalReport r;
  r.mode = mode;
  r.predicted = rollout(make_model(sc), sc.initial_state, sc.control, window.end - 1);
  r.metrics = evaluate_window(r.predicted, obs, window);
  return r;
}

nlohmann::json report_json(const EvalReport& r) {
  const WindowMetrics& m = r.metrics;
  return {{"v", 1},
          {"mode", to_string(r.mode)},
          {"window", {m.window.begin, m.window.end}},
          {"mean_cd", m.mean_cd},
          {"mean_track_error", m.mean_track_error},
          {"cd_per_frame", m.cd_per_frame},
          {"track_error_per_frame", m.track_error_per_frame}};
}

}  // namespace springtwin
