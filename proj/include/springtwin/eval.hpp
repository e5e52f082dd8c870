#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "springtwin/objective.hpp"
#include "springtwin/optimize.hpp"

namespace springtwin {

enum class EvalMode { resim, future, generalization };
std::string to_string(EvalMode m);
EvalMode eval_mode_from_name(const std::string& name);

struct EvalReport {
  EvalMode mode = EvalMode::resim;
  WindowMetrics metrics;
  std::vector<SystemState> predicted;  // frames 0 .. window.end - 1
};

// Rolls the twin out under the observation's control script from the
// canonical state and scores the window: the training window (resim), the
// frames after it (future), or every frame of an unseen interaction
// (generalization, `obs` from another script on the same object).
EvalReport evaluate_twin(const TwinArtifact& twin, const ObservationSequence& obs, EvalMode mode);

nlohmann::json report_json(const EvalReport& report);

}  // namespace springtwin
