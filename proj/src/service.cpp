#include "springtwin/service.hpp"

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "springtwin/log.hpp"
#include "springtwin/serialize.hpp"

namespace springtwin {

// --- protocol --------------------------------------------------------------

namespace {

Vec3 vec_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ProtocolError(std::string("missing field '") + key + "'");
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number()) {
    throw ProtocolError(std::string("field '") + key + "' must be [x, y, z]");
  }
  const Vec3 v{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
  if (!is_finite(v)) throw ProtocolError(std::string("field '") + key + "' is not finite");
  return v;
}

std::size_t index_field(const nlohmann::json& j) {
  if (!j.contains("index") || !j.at("index").is_number_integer()) {
    throw ProtocolError("missing or non-integer field 'index'");
  }
  const auto i = j.at("index").get<std::int64_t>();
  if (i < 0) throw ProtocolError("control index must be >= 0");
  return static_cast<std::size_t>(i);
}

nlohmann::json f32_triples(const std::vector<Vec3>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const Vec3& p : v) {
    a.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)});
  }
  return a;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}
void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

struct Reader {
  std::string_view bytes;
  std::size_t at = 0;

  std::uint64_t uint(int width) {
    if (at + static_cast<std::size_t>(width) > bytes.size()) throw ProtocolError("binary snapshot truncated");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at++])) << (8 * b);
    }
    return v;
  }
  double f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }
  Vec3 triple() {
    const double x = f32(), y = f32(), z = f32();
    return {x, y, z};
  }
};

}  // namespace

ControlMessage parse_control_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  if (j.contains("v") && j.at("v") != kProtocolVersion) {
    throw ProtocolError("unsupported protocol version " + j.at("v").dump());
  }
  if (!j.contains("type") || !j.at("type").is_string()) throw ProtocolError("missing field 'type'");
  const std::string type = j.at("type").get<std::string>();
  ControlMessage m;
  if (type == "drag") {
    m.type = ControlMessage::Type::drag;
    m.index = index_field(j);
    m.value = vec_field(j, "delta");
  } else if (type == "set") {
    m.type = ControlMessage::Type::set;
    m.index = index_field(j);
    m.value = vec_field(j, "position");
  } else if (type == "pause") {
    m.type = ControlMessage::Type::pause;
  } else if (type == "resume") {
    m.type = ControlMessage::Type::resume;
  } else if (type == "reset") {
    m.type = ControlMessage::Type::reset;
  } else {
    throw ProtocolError("unknown message type '" + type + "'");
  }
  return m;
}

std::string to_json_text(const ControlMessage& m) {
  nlohmann::json j{{"v", kProtocolVersion}};
  switch (m.type) {
    case ControlMessage::Type::drag:
      j["type"] = "drag";
      j["index"] = m.index;
      j["delta"] = m.value;
      break;
    case ControlMessage::Type::set:
      j["type"] = "set";
      j["index"] = m.index;
      j["position"] = m.value;
      break;
    case ControlMessage::Type::pause: j["type"] = "pause"; break;
    case ControlMessage::Type::resume: j["type"] = "resume"; break;
    case ControlMessage::Type::reset: j["type"] = "reset"; break;
  }
  return j.dump();
}

std::string snapshot_json(const Snapshot& s) {
  nlohmann::json j{{"v", kProtocolVersion},
                   {"type", "snapshot"},
                   {"frame", s.frame},
                   {"time", s.time},
                   {"paused", s.paused},
                   {"positions", f32_triples(s.positions)},
                   {"controls", f32_triples(s.controls)}};
  if (!s.skin_centers.empty()) {
    std::vector<Vec3> colors;
    for (const auto& c : s.skin_colors) colors.push_back({c[0], c[1], c[2]});
    j["skin"] = {{"centers", f32_triples(s.skin_centers)}, {"colors", f32_triples(colors)}};
  }
  return j.dump();
}

std::string snapshot_binary(const Snapshot& s) {
  std::string out;
  out.reserve(36 + 12 * (s.positions.size() + s.controls.size() + 2 * s.skin_centers.size()));
  out += "STW1";
  put_u32(out, s.paused ? 1u : 0u);
  put_u64(out, s.frame);
  put_u64(out, std::bit_cast<std::uint64_t>(s.time));
  put_u32(out, static_cast<std::uint32_t>(s.positions.size()));
  put_u32(out, static_cast<std::uint32_t>(s.controls.size()));
  put_u32(out, static_cast<std::uint32_t>(s.skin_centers.size()));
  for (const auto* list : {&s.positions, &s.controls, &s.skin_centers}) {
    for (const Vec3& p : *list) {
      put_f32(out, p.x);
      put_f32(out, p.y);
      put_f32(out, p.z);
    }
  }
  for (const auto& c : s.skin_colors) {
    for (double v : c) put_f32(out, v);
  }
  return out;
}

Snapshot parse_snapshot_binary(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "STW1") throw ProtocolError("not a binary snapshot");
  Reader r{bytes, 4};
  Snapshot s;
  s.paused = (r.uint(4) & 1u) != 0;
  s.frame = r.uint(8);
  s.time = std::bit_cast<double>(r.uint(8));
  const auto n = r.uint(4), c = r.uint(4), k = r.uint(4);
  for (std::uint64_t i = 0; i < n; ++i) s.positions.push_back(r.triple());
  for (std::uint64_t i = 0; i < c; ++i) s.controls.push_back(r.triple());
  for (std::uint64_t i = 0; i < k; ++i) s.skin_centers.push_back(r.triple());
  for (std::uint64_t i = 0; i < k; ++i) {
    const Vec3 v = r.triple();
    s.skin_colors.push_back({v.x, v.y, v.z});
  }
  if (r.at != bytes.size()) throw ProtocolError("binary snapshot has trailing bytes");
  return s;
}

std::string error_json(std::string_view reason) {
  return nlohmann::json{{"v", kProtocolVersion}, {"type", "error"}, {"reason", reason}}.dump();
}

// --- session ---------------------------------------------------------------

SimulationSession::SimulationSession(SpringMassModel model, SystemState initial,
                                     std::vector<Vec3> initial_controls, SessionOptions options)
    : model_(std::move(model)),
      initial_(std::move(initial)),
      initial_controls_(std::move(initial_controls)),
      options_(std::move(options)),
      state_(initial_),
      controls_(initial_controls_) {
  if (initial_.size() != model_.n_nodes()) throw std::invalid_argument("session: state/model size mismatch");
  if (initial_controls_.size() != model_.n_ctrl()) {
    throw std::invalid_argument("session: control count does not match the model");
  }
  if (options_.skin) skin_ = options_.skin->particles;
}

void SimulationSession::submit(const ControlMessage& m) {
  if ((m.type == ControlMessage::Type::drag || m.type == ControlMessage::Type::set) &&
      m.index >= initial_controls_.size()) {
    throw ProtocolError("control index " + std::to_string(m.index) + " out of range (" +
                        std::to_string(initial_controls_.size()) + " control points)");
  }
  if (!is_finite(m.value)) throw ProtocolError("non-finite control value");
  std::lock_guard lock(mutex_);
  if (pending_.size() >= options_.max_pending) pending_.erase(pending_.begin());
  pending_.push_back(m);
}

Snapshot SimulationSession::tick() {
  std::lock_guard lock(mutex_);
  const std::vector<Vec3> before = controls_;
  std::vector<Vec3> drag(controls_.size());
  for (const ControlMessage& m : pending_) {
    switch (m.type) {
      case ControlMessage::Type::drag:
        drag[m.index] += m.value;
        break;
      case ControlMessage::Type::set:
        controls_[m.index] = m.value;
        drag[m.index] = {};
        break;
      case ControlMessage::Type::pause: paused_ = true; break;
      case ControlMessage::Type::resume: paused_ = false; break;
      case ControlMessage::Type::reset:
        state_ = initial_;
        controls_ = initial_controls_;
        std::fill(drag.begin(), drag.end(), Vec3{});
        if (options_.skin) skin_ = options_.skin->particles;
        break;
    }
  }
  pending_.clear();
  for (std::size_t i = 0; i < controls_.size(); ++i) {
    const double len = norm(drag[i]);
    if (len > options_.max_drag_per_tick) drag[i] = drag[i] * (options_.max_drag_per_tick / len);
    controls_[i] += drag[i];
  }

  if (!paused_) {
    const SystemState prev = state_;
    try {
      state_ = step(model_, state_, before, controls_, ws_);
      ++frame_;
      if (options_.skin) {
        const auto rot = estimate_node_rotations(prev.positions, state_.positions, options_.skin->neighborhoods);
        skin_ = deform_skin(skin_, options_.skin->binding, prev.positions, state_.positions, rot);
      }
    } catch (const SimulationDiverged& e) {
      logger()->error("session: {}; resetting to the initial state and pausing", e.what());
      state_ = initial_;
      controls_ = initial_controls_;
      paused_ = true;
    }
  }
  return snapshot_locked();
}

Snapshot SimulationSession::snapshot_locked() const {
  Snapshot s;
  s.frame = frame_;
  s.time = static_cast<double>(frame_) * model_.params().dt;
  s.paused = paused_;
  s.positions = state_.positions;
  s.controls = controls_;
  for (const SkinParticle& p : skin_) {
    s.skin_centers.push_back(p.center);
    s.skin_colors.push_back(p.color);
  }
  return s;
}

Snapshot SimulationSession::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_locked();
}

std::uint64_t SimulationSession::frame() const {
  std::lock_guard lock(mutex_);
  return frame_;
}

bool SimulationSession::paused() const {
  std::lock_guard lock(mutex_);
  return paused_;
}

SystemState SimulationSession::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

nlohmann::json SimulationSession::meta() const {
  return {{"v", kProtocolVersion},
          {"n_nodes", model_.n_nodes()},
          {"n_springs", model_.n_springs()},
          {"n_ctrl", model_.n_ctrl()},
          {"n_skin", options_.skin ? options_.skin->particles.size() : 0},
          {"dt", model_.params().dt},
          {"substeps", model_.params().substeps},
          {"ground_height", model_.ground_height()},
          {"max_drag_per_tick", options_.max_drag_per_tick}};
}

nlohmann::json SimulationSession::spring_list() const {
  nlohmann::json a = nlohmann::json::array();
  const auto si = model_.spring_i();
  const auto sj = model_.spring_j();
  for (std::size_t s = 0; s < si.size(); ++s) a.push_back({si[s], sj[s]});
  return a;
}

// --- server ----------------------------------------------------------------

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

struct Outgoing {
  std::shared_ptr<const std::string> data;
  bool binary = false;
  bool droppable = false;  // snapshots; errors and hellos are never dropped
};

class WsClient;

}  // namespace

struct Server::Impl {
  SimulationSession& session;
  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread io_thread, tick_thread;
  std::atomic<bool> running{false};
  std::atomic<std::uint64_t> ticks{0};
  std::uint16_t bound_port = 0;

  mutable std::mutex clients_mutex;
  std::vector<std::weak_ptr<WsClient>> clients;

  Impl(SimulationSession& s, ServerOptions o) : session(s), options(std::move(o)) {}

  void do_accept();
  void tick_loop();
  void add_client(const std::shared_ptr<WsClient>& c);
  std::size_t client_count() const;
};

namespace {

class WsClient : public std::enable_shared_from_this<WsClient> {
 public:
  WsClient(tcp::socket socket, Server::Impl& server, bool binary)
      : ws_(std::move(socket)), server_(server), binary_(binary) {}

  bool binary() const { return binary_; }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  // Thread-safe: hops onto the connection's executor.
  void deliver(std::shared_ptr<const std::string> data, bool binary, bool droppable) {
    net::post(ws_.get_executor(), [self = shared_from_this(), out = Outgoing{std::move(data), binary, droppable}] {
      self->enqueue(out);
    });
  }

  bool open() const { return open_; }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) {
      logger()->warn("ws accept failed: {}", ec.message());
      return;
    }
    open_ = true;
    server_.add_client(shared_from_this());
    nlohmann::json hello{{"v", kProtocolVersion},
                         {"type", "hello"},
                         {"format", binary_ ? "binary" : "json"},
                         {"meta", server_.session.meta()},
                         {"springs", server_.session.spring_list()}};
    enqueue({std::make_shared<const std::string>(hello.dump()), false, false});
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      open_ = false;
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      server_.session.submit(parse_control_message(text));
    } catch (const ProtocolError& e) {
      enqueue({std::make_shared<const std::string>(error_json(e.what())), false, false});
    }
    do_read();
  }

  void enqueue(Outgoing out) {
    if (!open_) return;
    if (out.droppable) {
      // Keep at most client_buffer - 1 queued snapshots besides the new one;
      // the front entry may be mid-write and stays.
      const std::size_t first = writing_ ? 1 : 0;
      std::size_t queued = 0;
      for (std::size_t i = first; i < queue_.size(); ++i) queued += queue_[i].droppable ? 1 : 0;
      const std::size_t cap = std::max<std::size_t>(server_.options.client_buffer, 1);
      for (std::size_t i = first; i < queue_.size() && queued + 1 > cap;) {
        if (queue_[i].droppable) {
          queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(i));
          --queued;
        } else {
          ++i;
        }
      }
    }
    queue_.push_back(std::move(out));
    if (!writing_) write_next();
  }

  void write_next() {
    writing_ = true;
    ws_.binary(queue_.front().binary);
    ws_.async_write(net::buffer(*queue_.front().data),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
  }

  void on_write(beast::error_code ec) {
    if (ec) {
      open_ = false;
      queue_.clear();
      writing_ = false;
      return;
    }
    queue_.pop_front();
    if (queue_.empty()) {
      writing_ = false;
    } else {
      write_next();
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server::Impl& server_;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> queue_;
  bool writing_ = false;
  bool binary_ = false;
  std::atomic<bool> open_{false};
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, Server::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void run() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;

    const std::string target(req_.target());
    const std::string path = target.substr(0, target.find('?'));
    const std::string query = target.find('?') == std::string::npos ? "" : target.substr(target.find('?') + 1);

    if (websocket::is_upgrade(req_)) {
      if (path != "/ws") return respond(http::status::not_found, error_json("no websocket at " + path));
      bool binary = server_.options.binary;
      if (query.find("format=binary") != std::string::npos) binary = true;
      if (query.find("format=json") != std::string::npos) binary = false;
      stream_.expires_never();
      std::make_shared<WsClient>(stream_.release_socket(), server_, binary)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get) {
      return respond(http::status::method_not_allowed, error_json("only GET is supported"));
    }
    if (path == "/health") {
      const nlohmann::json j{{"v", kProtocolVersion},
                             {"status", "ok"},
                             {"frame", server_.session.frame()},
                             {"paused", server_.session.paused()},
                             {"clients", server_.client_count()}};
      return respond(http::status::ok, j.dump());
    }
    if (path == "/meta") {
      nlohmann::json j = server_.session.meta();
      j["tick_rate"] = server_.options.tick_rate;
      j["formats"] = {"json", "binary"};
      j["default_format"] = server_.options.binary ? "binary" : "json";
      return respond(http::status::ok, j.dump());
    }
    respond(http::status::not_found, error_json("no route " + path));
  }

  void respond(http::status status, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "springtwin");
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  Server::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

void Server::Impl::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (!acceptor.is_open()) return;
    if (!ec) std::make_shared<HttpConnection>(std::move(socket), *this)->run();
    do_accept();
  });
}

void Server::Impl::add_client(const std::shared_ptr<WsClient>& c) {
  std::lock_guard lock(clients_mutex);
  clients.push_back(c);
}

std::size_t Server::Impl::client_count() const {
  std::lock_guard lock(clients_mutex);
  std::size_t n = 0;
  for (const auto& w : clients) {
    if (auto c = w.lock(); c && c->open()) ++n;
  }
  return n;
}

void Server::Impl::tick_loop() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / options.tick_rate));
  auto next = clock::now();
  while (running) {
    next += period;
    const Snapshot snap = session.tick();
    ++ticks;

    std::vector<std::shared_ptr<WsClient>> live;
    {
      std::lock_guard lock(clients_mutex);
      std::erase_if(clients, [](const std::weak_ptr<WsClient>& w) {
        auto c = w.lock();
        return !c || !c->open();
      });
      for (const auto& w : clients) {
        if (auto c = w.lock()) live.push_back(std::move(c));
      }
    }
    std::shared_ptr<const std::string> text, bin;
    for (const auto& c : live) {
      if (c->binary()) {
        if (!bin) bin = std::make_shared<const std::string>(snapshot_binary(snap));
        c->deliver(bin, true, true);
      } else {
        if (!text) text = std::make_shared<const std::string>(snapshot_json(snap));
        c->deliver(text, false, true);
      }
    }

    const auto now = clock::now();
    if (now > next + period) {
      logger()->debug("tick overran by {} periods", (now - next) / period);
      next = now;
    }
    std::this_thread::sleep_until(next);
  }
}

Server::Server(SimulationSession& session, ServerOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {
  if (!(impl_->options.tick_rate > 0.0)) throw std::invalid_argument("server: tick rate must be > 0");
}

Server::~Server() { stop(); }

void Server::start() {
  if (impl_->running) return;
  const tcp::endpoint ep{net::ip::make_address(impl_->options.address), impl_->options.port};
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
  impl_->running = true;
  impl_->do_accept();
  impl_->io_thread = std::thread([this] { impl_->ioc.run(); });
  impl_->tick_thread = std::thread([this] { impl_->tick_loop(); });
}

void Server::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  if (impl_->tick_thread.joinable()) impl_->tick_thread.join();
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

std::uint16_t Server::port() const { return impl_->bound_port; }
std::size_t Server::client_count() const { return impl_->client_count(); }
std::uint64_t Server::ticks() const { return impl_->ticks; }

}  // namespace springtwin
