#include <chrono>
#include <fstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "doctest.h"
#include "fixtures.hpp"
#include "server.hpp"
#include "session.hpp"

using namespace qlk;
using json = nlohmann::json;

namespace {

struct Outbox {
  std::vector<json> msgs;
  Session::Sender sender() {
    return [this](const std::string& s) { msgs.push_back(json::parse(s)); };
  }
  const json& last() const { return msgs.back(); }
};

json frame(json j) {
  j["version"] = kProtocolVersion;
  return j;
}

std::string dump(json j) { return frame(std::move(j)).dump(); }

SessionOptions quick_options() {
  SessionOptions o;
  o.max_simulations = 40;
  return o;
}

}  // namespace

TEST_CASE("session opens with config then lobby snapshot") {
  Outbox out;
  Session s(fixtures::small_runtime(), quick_options(), out.sender());
  s.open();
  REQUIRE(out.msgs.size() == 2);
  const json& cfg = out.msgs[0];
  CHECK(cfg["type"] == "config");
  CHECK(cfg["version"] == kProtocolVersion);
  CHECK(cfg["action_set"]["human"].size() == 3);
  CHECK(cfg["action_set"]["robot"].size() == 6);
  CHECK(cfg["latent_types"].size() == 4);
  CHECK(cfg["lanes"]["human_lane_y"] == 3.6);
  const json& snap = out.msgs[1];
  CHECK(snap["type"] == "snapshot");
  CHECK(snap["phase"] == "lobby");
  CHECK(snap["t"] == 0);
  CHECK(snap["last_robot_action"].is_null());
  CHECK(snap["belief"]["latent"].size() == 4);
}

TEST_CASE("session rejects malformed frames and closes on version mismatch") {
  Outbox out;
  Session s(fixtures::small_runtime(), quick_options(), out.sender());
  CHECK(s.on_message("{not json"));
  CHECK(out.last()["type"] == "error");
  CHECK(s.on_message(R"({"type": "input", "accel": 1})"));
  CHECK(out.last()["type"] == "error");
  CHECK(s.on_message(dump({{"type", "input"}, {"accel", "fast"}})));
  CHECK(out.last()["type"] == "error");
  CHECK(s.on_message(dump({{"type", "control"}, {"action", "warp"}})));
  CHECK(out.last()["type"] == "error");
  const auto before = out.msgs.size();
  CHECK(s.on_message(dump({{"type", "chat"}})));
  CHECK(out.msgs.size() == before);
  CHECK_FALSE(s.on_message(R"({"type": "input", "version": 99, "accel": 0})"));
  CHECK(out.last()["message"].get<std::string>().find("version") != std::string::npos);
  CHECK(s.phase() == Phase::kLobby);
}

TEST_CASE("ticks snap and consume the latest input") {
  Outbox out;
  Session s(fixtures::small_runtime(), quick_options(), out.sender());
  s.tick();
  CHECK(s.trace().steps.empty());
  s.on_message(dump({{"type", "control"}, {"action", "start"}}));
  CHECK(s.phase() == Phase::kRunning);
  CHECK(out.last()["phase"] == "running");

  s.on_message(dump({{"type", "input"}, {"accel", -3.0}}));
  s.on_message(dump({{"type", "input"}, {"accel", 6.5}}));
  s.tick();
  REQUIRE(s.trace().steps.size() == 1);
  CHECK(s.trace().steps[0].human_action == 2);
  CHECK(out.last()["last_human_action"]["requested"] == 6.5);
  CHECK(out.last()["last_human_action"]["accel"] == 8.0);
  CHECK(out.last()["t"] == 1);
  CHECK(out.last()["diagnostics"]["sims"] == 40);

  if (s.phase() == Phase::kRunning) {
    s.tick();
    CHECK(s.trace().steps[1].human_action == 1);
    CHECK(out.last()["last_human_action"]["requested"].is_null());
  }
}

TEST_CASE("episode finishes, persists a live trace and restarts") {
  const auto dir = fixtures::scratch_dir("session_traces");
  Outbox out;
  SessionOptions o = quick_options();
  o.trace_dir = dir.string();
  o.controller = RobotController::kBlp1;
  Session s(fixtures::small_runtime(), o, out.sender());
  s.on_message(dump({{"type", "control"}, {"action", "start"}}));
  int guard = 0;
  while (s.phase() == Phase::kRunning && guard++ < 100) s.tick();
  REQUIRE(s.phase() == Phase::kFinished);
  CHECK(out.last()["outcome"].is_string());
  CHECK(out.last()["diagnostics"]["eta"] == 0.0);
  REQUIRE(s.trace_path());
  std::ifstream in(*s.trace_path());
  std::string line;
  std::getline(in, line);
  const json header = json::parse(line);
  CHECK(header["source"] == "live");
  CHECK(header["true_theta"].is_null());
  CHECK(header["controller"] == "blp1");
  CHECK(s.tick_durations().size() == s.trace().steps.size());

  s.on_message(dump({{"type", "control"}, {"action", "start"}}));
  CHECK(s.phase() == Phase::kRunning);
  CHECK(s.trace().steps.empty());
}

TEST_CASE("planner selection and disconnects") {
  Outbox out;
  Session s(fixtures::small_runtime(), quick_options(), out.sender());
  s.on_message(dump({{"type", "control"}, {"action", "select_planner"}, {"planner", "blp1"}}));
  CHECK(s.controller() == RobotController::kBlp1);
  s.on_message(dump({{"type", "control"}, {"action", "select_planner"}, {"planner", "qlk"}}));
  CHECK(out.last()["type"] == "error");
  s.on_message(dump({{"type", "control"}, {"action", "start"}}));
  s.on_message(dump({{"type", "control"}, {"action", "select_planner"}, {"planner", "ours"}}));
  CHECK(out.last()["type"] == "error");
  CHECK(s.controller() == RobotController::kBlp1);
  s.tick();
  s.on_message(dump({{"type", "control"}, {"action", "reset"}}));
  CHECK(s.phase() == Phase::kRunning);
  CHECK(s.trace().steps.empty());
  s.tick();
  s.disconnect();
  CHECK(s.aborted());
  CHECK(s.trace().aborted);
  CHECK(s.phase() == Phase::kFinished);

  SessionOptions bad = quick_options();
  bad.controller = RobotController::kQlk;
  CHECK_THROWS_AS(Session(fixtures::small_runtime(), bad, out.sender()), ConfigError);
}

// ---- network front end ----

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

http::response<http::string_body> http_get(int port, const std::string& target) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  sock.connect({net::ip::make_address("127.0.0.1"), static_cast<unsigned short>(port)});
  http::request<http::string_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  return res;
}

struct WsClient {
  net::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit WsClient(int port, const std::string& path = "/session") {
    ws.next_layer().connect({net::ip::make_address("127.0.0.1"), static_cast<unsigned short>(port)});
    ws.handshake("127.0.0.1", path);
  }
  json recv() {
    beast::flat_buffer b;
    ws.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  void send(const json& j) { ws.write(net::buffer(frame(j).dump())); }
  // Reads until a message satisfies pred (bounded).
  template <typename Pred>
  json recv_until(Pred pred, int max_msgs = 200) {
    for (int i = 0; i < max_msgs; ++i) {
      json m = recv();
      if (pred(m)) return m;
    }
    return nullptr;
  }
};

struct RunningServer {
  std::filesystem::path web = fixtures::scratch_dir("web");
  std::unique_ptr<Server> srv;

  RunningServer() {
    std::ofstream(web / "index.html") << "<!doctype html><title>merge</title>";
    std::filesystem::create_directories(web / "js");
    std::ofstream(web / "js" / "app.js") << "console.log('hi');";
    std::ofstream(web.parent_path() / "secret.txt") << "nope";
    ServerOptions o;
    o.port = 0;
    o.static_dir = web.string();
    o.tick_ms = 30;
    o.max_simulations = 20;
    o.quiet = true;
    srv = std::make_unique<Server>(fixtures::small_runtime(), o);
    srv->start();
  }
  int port() const { return srv->port(); }
};

}  // namespace

TEST_CASE("http: health, static files, traversal") {
  RunningServer rs;
  REQUIRE(rs.port() > 0);
  auto h = http_get(rs.port(), "/health");
  CHECK(h.result() == http::status::ok);
  const json hj = json::parse(h.body());
  CHECK(hj["status"] == "ok");
  CHECK(hj["protocol_version"] == kProtocolVersion);
  CHECK(hj["active_sessions"] == 0);

  auto idx = http_get(rs.port(), "/");
  CHECK(idx.result() == http::status::ok);
  CHECK(idx.body().find("merge") != std::string::npos);
  CHECK(std::string(idx[http::field::content_type]).find("text/html") == 0);
  auto js = http_get(rs.port(), "/js/app.js");
  CHECK(js.result() == http::status::ok);
  CHECK(std::string(js[http::field::content_type]).find("javascript") != std::string::npos);

  CHECK(http_get(rs.port(), "/missing.css").result() == http::status::not_found);
  CHECK(http_get(rs.port(), "/../secret.txt").result() == http::status::forbidden);
  CHECK(http_get(rs.port(), "/js/../../secret.txt").result() == http::status::forbidden);
}

TEST_CASE("websocket session round trip and single-session policy") {
  RunningServer rs;
  {
    WsClient a(rs.port());
    CHECK(a.recv()["type"] == "config");
    CHECK(a.recv()["phase"] == "lobby");

    {
      WsClient b(rs.port());
      const json refusal = b.recv();
      CHECK(refusal["type"] == "error");
      CHECK(refusal["message"].get<std::string>().find("already active") != std::string::npos);
    }

    a.send({{"type", "control"}, {"action", "start"}});
    CHECK(a.recv_until([](const json& m) { return m["phase"] == "running"; }) != nullptr);
    a.send({{"type", "input"}, {"accel", 8.0}});
    const json stepped = a.recv_until([](const json& m) { return m.value("t", 0) >= 1; });
    REQUIRE(stepped != nullptr);
    CHECK(stepped["last_robot_action"].is_object());
    CHECK(stepped["belief"]["latent"].size() == 4);
    a.ws.close(websocket::close_code::normal);
  }
  // The slot frees once the first session is gone.
  json health;
  for (int i = 0; i < 100; ++i) {
    health = json::parse(http_get(rs.port(), "/health").body());
    if (health["active_sessions"] == 0) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(health["active_sessions"] == 0);
  WsClient c(rs.port());
  CHECK(c.recv()["type"] == "config");
}

TEST_CASE("websocket upgrade elsewhere is refused") {
  RunningServer rs;
  CHECK_THROWS(WsClient(rs.port(), "/elsewhere"));
}
