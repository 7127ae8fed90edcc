#pragma once

#include <memory>
#include <string>

#include "runtime.hpp"
#include "session.hpp"

namespace qlk {

struct ServerOptions {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 picks an ephemeral port
  std::string static_dir = "web";
  int tick_ms = 500;
  double budget_ms = 250.0;
  long max_simulations = 0;
  bool multi_session = false;
  std::string trace_dir;
  RobotController controller = RobotController::kOurs;
  std::uint64_t seed = 1;
  bool quiet = false;

  static ServerOptions from_config(const Config& cfg);
};

// HTTP + WebSocket front end: GET /health, static files from static_dir,
// and the /session WebSocket endpoint. Each session runs its own
// environment loop thread; network I/O runs on a separate I/O thread.
class Server {
 public:
  Server(std::shared_ptr<const Runtime> rt, ServerOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts serving in the background.
  void start();
  int port() const;
  void stop();
  // Blocks until stop() is called (from another thread or a signal).
  void wait();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace qlk
