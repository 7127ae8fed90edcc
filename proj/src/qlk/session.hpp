#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "planner.hpp"
#include "runtime.hpp"
#include "sim.hpp"

namespace qlk {

inline constexpr int kProtocolVersion = 1;

enum class Phase { kLobby, kRunning, kFinished };
const char* to_string(Phase p);

struct SessionOptions {
  std::string id = "session-1";
  RobotController controller = RobotController::kOurs;
  double budget_ms = 250.0;
  // When > 0 the planner is capped by simulation count instead (tests).
  long max_simulations = 0;
  std::uint64_t seed = 1;
  // Directory for finished traces; empty disables persistence.
  std::string trace_dir;
};

// One participant's episode state machine. Not thread-safe: a single owner
// (the session loop) calls every method. Outgoing frames go through `send`.
class Session {
 public:
  using Sender = std::function<void(const std::string&)>;
  using Logger = std::function<void(const std::string&)>;

  Session(std::shared_ptr<const Runtime> rt, SessionOptions opts, Sender send,
          Logger log = {});

  // Sends the config message and the lobby snapshot.
  void open();
  // Handles one client text frame. Returns false when the session must be
  // closed (protocol version mismatch).
  bool on_message(const std::string& text);
  // One environment transition when running; no-op otherwise.
  void tick();
  // Client went away; a running episode is aborted and its trace flagged.
  void disconnect();

  Phase phase() const { return phase_; }
  const EpisodeTrace& trace() const { return trace_; }
  const Belief& belief() const { return belief_; }
  StateId state() const { return state_; }
  bool aborted() const { return aborted_; }
  RobotController controller() const { return opts_.controller; }
  // Wall-clock duration of each completed tick (ms).
  const std::vector<double>& tick_durations() const { return tick_ms_; }
  std::optional<std::string> trace_path() const { return trace_path_; }

  nlohmann::json config_message() const;
  nlohmann::json snapshot_message() const;

 private:
  void reset_episode();
  void finish(Outcome o);
  void send_error(const std::string& msg);
  void handle_control(const nlohmann::json& j);

  std::shared_ptr<const Runtime> rt_;
  SessionOptions opts_;
  Sender send_;
  Logger log_;
  Planner planner_;

  Phase phase_ = Phase::kLobby;
  StateId state_ = 0;
  Belief belief_;
  EpisodeTrace trace_;
  std::vector<JointState> visited_;
  int episode_ = 0;
  bool aborted_ = false;
  std::optional<std::string> trace_path_;

  std::optional<double> pending_accel_;  // raw value from the latest input
  std::optional<double> last_requested_;
  int last_human_action_ = -1;
  int last_robot_action_ = -1;
  double last_reward_ = 0.0;
  nlohmann::json last_diagnostics_;
  std::vector<double> tick_ms_;
};

}  // namespace qlk
