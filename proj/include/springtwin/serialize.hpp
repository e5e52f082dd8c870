#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "springtwin/model.hpp"

// JSON schema for the model types. Field names match the struct members;
// every Vec3 is a [x, y, z] array. Reals are written with shortest
// round-trip formatting, so save/load is bit-exact.
namespace springtwin {

inline constexpr int kSchemaVersion = 1;

void to_json(nlohmann::json& j, const Vec3& v);
void from_json(const nlohmann::json& j, Vec3& v);
void to_json(nlohmann::json& j, const SystemState& s);
void from_json(const nlohmann::json& j, SystemState& s);
void to_json(nlohmann::json& j, const Spring& s);
void from_json(const nlohmann::json& j, Spring& s);
void to_json(nlohmann::json& j, const SpringTopology& t);
void from_json(const nlohmann::json& j, SpringTopology& t);
void to_json(nlohmann::json& j, const PhysParams& p);
void from_json(const nlohmann::json& j, PhysParams& p);
void to_json(nlohmann::json& j, const ControlScript& c);
void from_json(const nlohmann::json& j, ControlScript& c);
void to_json(nlohmann::json& j, const ObservationFrame& f);
void from_json(const nlohmann::json& j, ObservationFrame& f);
void to_json(nlohmann::json& j, const ObservationSequence& o);
void from_json(const nlohmann::json& j, ObservationSequence& o);
void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

template <typename T>
T load(const std::filesystem::path& path) {
  return read_json_file(path).get<T>();
}

template <typename T>
void save(const std::filesystem::path& path, const T& value) {
  write_json_file(path, nlohmann::json(value));
}

// One JSON object per line: {"frame", "positions", "velocities", "control"}.
// `control` may be shorter than `states`; missing entries are written as [].
void write_trajectory_jsonl(std::ostream& out, std::span<const SystemState> states,
                            const ControlScript& control);
void write_trajectory_jsonl(const std::filesystem::path& path, std::span<const SystemState> states,
                            const ControlScript& control);
std::vector<SystemState> read_trajectory_jsonl(const std::filesystem::path& path);

}  // namespace springtwin
