#include <doctest.h>

#include <chrono>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "springtwin/service.hpp"
#include "springtwin/synth.hpp"

using namespace springtwin;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

struct Rig {
  SpringMassModel model;
  SystemState initial;
  std::vector<Vec3> controls;
};

Rig rope() {
  ScenarioTemplate t = template_from_name("rope-lift", 1);
  t.n_frames = 2;
  const SyntheticBundle b = generate_scenario(t);
  return {make_model(b.truth), b.truth.initial_state, b.truth.control.frames[0]};
}

SimulationSession make_session(SessionOptions o = {}) {
  Rig r = rope();
  return SimulationSession(r.model, r.initial, r.controls, std::move(o));
}

std::pair<http::status, nlohmann::json> http_get(std::uint16_t port, const std::string& target,
                                                 http::verb verb = http::verb::get) {
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  beast::tcp_stream stream(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return {res.result(), nlohmann::json::parse(res.body())};
}

struct WsClient {
  net::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit WsClient(std::uint16_t port, const std::string& target = "/ws") {
    tcp::resolver resolver(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", target);
  }
  std::string read() {
    beast::flat_buffer buf;
    ws.read(buf);
    return beast::buffers_to_string(buf.data());
  }
  // Skips snapshots until a message of `type` arrives.
  nlohmann::json read_type(const std::string& type) {
    for (int i = 0; i < 1000; ++i) {
      const std::string m = read();
      if (!ws.got_text()) continue;
      auto j = nlohmann::json::parse(m);
      if (j.value("type", "") == type) return j;
    }
    throw std::runtime_error("no " + type + " message");
  }
  void send(const std::string& text) {
    ws.text(true);
    ws.write(net::buffer(text));
  }
};

}  // namespace

TEST_CASE("protocol: control message parsing") {
  const auto d = parse_control_message(R"({"v":1,"type":"drag","index":0,"delta":[0.1,0,0]})");
  CHECK(d.type == ControlMessage::Type::drag);
  CHECK(d.value == Vec3{0.1, 0, 0});
  CHECK(parse_control_message(to_json_text(d)) == d);
  CHECK(parse_control_message(R"({"type":"set","index":1,"position":[1,2,3]})").value == Vec3{1, 2, 3});
  CHECK(parse_control_message(R"({"type":"pause"})").type == ControlMessage::Type::pause);
  for (const char* bad : {"not json", R"({"type":"fly"})", R"({"type":"drag","index":0})",
                          R"({"type":"drag","index":0,"delta":[1,2]})", R"({"v":2,"type":"pause"})",
                          R"({"type":"drag","index":-1,"delta":[0,0,0]})"}) {
    CHECK_THROWS_AS(parse_control_message(bad), ProtocolError);
  }
}

TEST_CASE("protocol: binary snapshot round trip") {
  Snapshot s;
  s.frame = 123456789012ull;
  s.time = 4.25;
  s.paused = true;
  s.positions = {{0.5, -1.25, 2.0}, {1e-3, 0, 3}};
  s.controls = {{0.1f, 0.2f, 0.3f}};
  s.skin_centers = {{1, 2, 3}};
  s.skin_colors = {{0.25, 0.5, 1.0}};
  const std::string bytes = snapshot_binary(s);
  CHECK(bytes.substr(0, 4) == "STW1");
  CHECK(bytes.size() == 4 + 4 + 8 + 8 + 12 + 12 * (2 + 1 + 2));
  const Snapshot back = parse_snapshot_binary(bytes);
  CHECK(back.frame == s.frame);
  CHECK(back.time == s.time);
  CHECK(back.paused);
  REQUIRE(back.positions.size() == 2);
  CHECK(back.positions[0] == s.positions[0]);
  CHECK(back.positions[1].x == static_cast<double>(static_cast<float>(1e-3)));
  CHECK(back.controls[0] == s.controls[0]);
  CHECK(back.skin_colors[0] == s.skin_colors[0]);
  CHECK_THROWS(parse_snapshot_binary(bytes.substr(0, bytes.size() - 1)));
}

TEST_CASE("session: quiescent ticks equal the offline rollout") {
  Rig r = rope();
  SimulationSession session(r.model, r.initial, r.controls);
  ControlScript still;
  still.n_ctrl = r.controls.size();
  still.frames.assign(101, r.controls);
  const auto offline = rollout(r.model, r.initial, still, 100);
  for (int t = 1; t <= 100; ++t) {
    session.tick();
    REQUIRE(session.state() == offline[static_cast<std::size_t>(t)]);
  }
  CHECK(session.frame() == 100);
}

TEST_CASE("session: drag is exact, accumulates within a tick, clamps") {
  SimulationSession s = make_session();
  const Vec3 c0 = s.snapshot().controls[0];
  s.submit({ControlMessage::Type::drag, 0, {0.1, 0, 0}});
  CHECK(s.tick().controls[0] == c0 + Vec3{0.1, 0, 0});

  const Vec3 c1 = s.snapshot().controls[0];
  s.submit({ControlMessage::Type::drag, 0, {0.05, 0, 0}});
  s.submit({ControlMessage::Type::drag, 0, {0.05, 0, 0}});
  CHECK(s.tick().controls[0] == c1 + (Vec3{0.05, 0, 0} + Vec3{0.05, 0, 0}));

  const Vec3 c2 = s.snapshot().controls[0];
  s.submit({ControlMessage::Type::drag, 0, {10, 0, 0}});
  CHECK(s.tick().controls[0].x == doctest::Approx(c2.x + SessionOptions{}.max_drag_per_tick));

  s.submit({ControlMessage::Type::set, 1, {0.3, 0.2, 0.1}});
  CHECK(s.tick().controls[1] == Vec3{0.3, 0.2, 0.1});

  CHECK_THROWS_AS(s.submit({ControlMessage::Type::drag, 99, {}}), ProtocolError);
  CHECK_THROWS_AS(s.submit({ControlMessage::Type::drag, 0, {std::nan(""), 0, 0}}), ProtocolError);
}

TEST_CASE("session: pause/resume continuity and reset") {
  SimulationSession s = make_session();
  for (int i = 0; i < 5; ++i) s.tick();
  const SystemState at5 = s.state();
  s.submit({ControlMessage::Type::pause, 0, {}});
  for (int i = 0; i < 10; ++i) {
    const Snapshot snap = s.tick();
    CHECK(snap.paused);
    CHECK(snap.frame == 5);
  }
  CHECK(s.state() == at5);
  s.submit({ControlMessage::Type::resume, 0, {}});
  CHECK(s.tick().frame == 6);

  // The resumed trajectory is the uninterrupted one.
  SimulationSession ref = make_session();
  for (int i = 0; i < 6; ++i) ref.tick();
  CHECK(ref.state() == s.state());

  s.submit({ControlMessage::Type::reset, 0, {}});
  s.submit({ControlMessage::Type::pause, 0, {}});
  s.tick();
  CHECK(s.state() == make_session().state());
}

TEST_CASE("server: health, meta, errors, websocket round trip, 4 clients, busy port") {
  SimulationSession session = make_session();
  ServerOptions opt;
  opt.tick_rate = 60.0;
  Server server(session, opt);
  server.start();
  const std::uint16_t port = server.port();
  REQUIRE(port != 0);

  auto [hs, health] = http_get(port, "/health");
  CHECK(hs == http::status::ok);
  CHECK(health["status"] == "ok");
  CHECK(health["v"] == 1);
  auto [ms, meta] = http_get(port, "/meta");
  CHECK(ms == http::status::ok);
  CHECK(meta["n_nodes"] == 40);
  CHECK(meta["tick_rate"] == 60.0);
  CHECK(http_get(port, "/nope").first == http::status::not_found);
  CHECK(http_get(port, "/health", http::verb::post).first == http::status::method_not_allowed);

  {
    std::vector<std::unique_ptr<WsClient>> clients;
    for (int i = 0; i < 4; ++i) clients.push_back(std::make_unique<WsClient>(port));
    for (auto& c : clients) {
      const auto hello = c->read_type("hello");
      CHECK(hello["meta"]["n_nodes"] == 40);
      CHECK(hello["springs"].size() == session.model().n_springs());
      CHECK(c->read_type("snapshot")["positions"].size() == 40);
    }
    for (int i = 0; i < 100 && server.client_count() < 4; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    CHECK(server.client_count() == 4);

    // Malformed message: error reply, connection stays usable.
    clients[0]->send("{broken");
    CHECK(clients[0]->read_type("error")["type"] == "error");

    // Drag +0.1 m in x on control 0; the first snapshot after it is applied shows it.
    clients[1]->send(R"({"v":1,"type":"pause"})");
    auto snap = clients[1]->read_type("snapshot");
    while (!snap["paused"].get<bool>()) snap = clients[1]->read_type("snapshot");
    const Vec3 before = session.snapshot().controls[0];
    clients[1]->send(R"({"v":1,"type":"drag","index":0,"delta":[0.1,0,0]})");
    for (int i = 0; i < 200; ++i) {
      snap = clients[1]->read_type("snapshot");
      if (snap["controls"][0][0].get<double>() != static_cast<double>(static_cast<float>(before.x))) break;
    }
    const Vec3 want = before + Vec3{0.1, 0, 0};
    CHECK(snap["controls"][0][0].get<double>() == static_cast<double>(static_cast<float>(want.x)));
    CHECK(snap["controls"][0][1].get<double>() == static_cast<double>(static_cast<float>(want.y)));
    CHECK(session.snapshot().controls[0] == want);

    WsClient bin(port, "/ws?format=binary");
    CHECK(bin.read_type("hello")["format"] == "binary");
    for (int i = 0; i < 10; ++i) {
      const std::string m = bin.read();
      if (bin.ws.got_binary()) {
        const Snapshot s = parse_snapshot_binary(m);
        CHECK(s.positions.size() == 40);
        break;
      }
    }
    for (auto& c : clients) c->ws.close(websocket::close_code::normal);
    bin.ws.close(websocket::close_code::normal);
  }

  // A second server on the same port cannot start.
  SimulationSession other = make_session();
  ServerOptions clash = opt;
  clash.port = port;
  Server second(other, clash);
  CHECK_THROWS(second.start());

  server.stop();
  CHECK(server.ticks() > 0);
}
