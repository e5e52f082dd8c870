#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "springtwin/dynamics.hpp"
#include "springtwin/skinning.hpp"

namespace springtwin {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ControlMessage {
  enum class Type { drag, set, pause, resume, reset };
  Type type = Type::drag;
  std::size_t index = 0;  // control point, drag/set only
  Vec3 value;             // drag: delta, set: position

  friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

// {"type": "drag", "index": i, "delta": [dx, dy, dz]}
// {"type": "set", "index": i, "position": [x, y, z]}
// {"type": "pause" | "resume" | "reset"}
// Throws ProtocolError on malformed input. Index range is checked by the session.
ControlMessage parse_control_message(std::string_view text);
std::string to_json_text(const ControlMessage& m);

struct Snapshot {
  std::uint64_t frame = 0;
  double time = 0.0;  // s, frame * dt
  bool paused = false;
  std::vector<Vec3> positions;
  std::vector<Vec3> controls;
  std::vector<Vec3> skin_centers;
  std::vector<std::array<double, 3>> skin_colors;
};

// Coordinates go out as float32 in both encodings.
std::string snapshot_json(const Snapshot& s);
// Little-endian: "STW1", u32 flags (bit 0 paused), u64 frame, f64 time,
// u32 nodes, u32 controls, u32 skin particles, then f32 xyz triples for
// positions, controls, skin centres and skin colours in that order.
std::string snapshot_binary(const Snapshot& s);
Snapshot parse_snapshot_binary(std::string_view bytes);
std::string error_json(std::string_view reason);

struct SkinRig {
  std::vector<SkinParticle> particles;
  SkinBinding binding;
  std::vector<std::vector<NodeIndex>> neighborhoods;
};

struct SessionOptions {
  double max_drag_per_tick = 0.25;  // m, per control point
  std::size_t max_pending = 4096;   // queued messages; oldest dropped beyond this
  std::optional<SkinRig> skin;
};

// The tick engine behind the service, independent of any networking.
// Messages are queued from any thread and applied atomically at the start
// of the next tick, in arrival order; one tick then advances one frame.
class SimulationSession {
 public:
  SimulationSession(SpringMassModel model, SystemState initial, std::vector<Vec3> initial_controls,
                    SessionOptions options = {});

  // Validates (index range, finite values) and queues. Throws ProtocolError.
  void submit(const ControlMessage& m);
  Snapshot tick();
  Snapshot snapshot() const;

  std::uint64_t frame() const;
  bool paused() const;
  SystemState state() const;
  const SpringMassModel& model() const { return model_; }
  nlohmann::json meta() const;
  // [[i, j], ...] for the one-off hello message.
  nlohmann::json spring_list() const;

 private:
  Snapshot snapshot_locked() const;

  const SpringMassModel model_;
  const SystemState initial_;
  const std::vector<Vec3> initial_controls_;
  const SessionOptions options_;

  mutable std::mutex mutex_;
  std::vector<ControlMessage> pending_;
  SystemState state_;
  std::vector<Vec3> controls_;
  std::vector<SkinParticle> skin_;
  StepWorkspace ws_;
  std::uint64_t frame_ = 0;
  bool paused_ = false;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 0;     // 0: ephemeral
  double tick_rate = 30.0;    // Hz
  bool binary = false;        // default snapshot encoding; "/ws?format=binary|json" overrides
  std::size_t client_buffer = 2;  // undelivered snapshots kept per client, newest win
};

// HTTP GET /health and /meta plus a WebSocket endpoint at /ws, all on one
// port. A background thread ticks the session at tick_rate and broadcasts
// each snapshot; slow clients drop stale snapshots rather than stall it.
class Server {
 public:
  Server(SimulationSession& session, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  std::uint16_t port() const;
  std::size_t client_count() const;
  std::uint64_t ticks() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace springtwin
