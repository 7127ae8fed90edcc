#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "belief.hpp"
#include "config.hpp"
#include "json.hpp"
#include "planner.hpp"
#include "runtime.hpp"

namespace qlk {

inline constexpr int kTraceSchemaVersion = 1;

enum class Outcome { kMerged, kCollision, kDeadlock, kTimeout };
const char* to_string(Outcome o);
Outcome parse_outcome(const std::string& s);

struct StepRecord {
  int t = 0;
  JointState state;
  JointState next_state;
  int robot_action = 0;
  int human_action = 0;
  Belief belief;  // posterior after observing next_state
  double reward = 0.0;
  double info_gain = 0.0;
  bool belief_reset = false;
  nlohmann::json diagnostics;  // null for non-planning controllers
};

struct EpisodeSpec {
  ScenarioConfig scenario;
  PlannerParams planner;
  std::uint64_t seed = 0;
  int id = 0;
  // Records full planner diagnostics per step (larger traces).
  bool record_diagnostics = true;
  // Live sessions: the human is a participant, true_theta is unknown.
  bool live = false;
};

struct EpisodeTrace {
  EpisodeSpec spec;
  JointState initial;
  std::vector<StepRecord> steps;
  Outcome outcome = Outcome::kTimeout;
  bool robot_ahead = false;  // at the merge step
  double min_gap = 0.0;      // min |x_R - x_H| over visited states
  bool near_miss = false;
  double max_step_risk = 0.0;  // max chosen_risk over planning steps
  long fallbacks = 0;
  bool aborted = false;  // client disconnected mid-episode
  std::vector<double> true_type_prob;  // P(theta_true | b_t), t = 0..steps

  std::optional<double> tm(double dt) const;
  // First t with P(theta_true | b_t) > threshold; the episode length when
  // never reached.
  int first_confident_step(double threshold = 0.8) const;
};

// Outcome of an episode that stopped after visiting `visited` (initial
// state first).
Outcome classify_outcome(const GameModel& g, const std::vector<JointState>& visited);
// Safe, sharing the human's lane band, bumper gap under one car length.
bool is_near_miss(const GameModel& g, const JointState& s);

EpisodeTrace run_episode(const Runtime& rt, const EpisodeSpec& spec,
                         PlannerObserver* observer = nullptr);

// Returns the observer to attach to the planner of episode `id` (may be
// null). Called from worker threads.
using ObserverFor = std::function<PlannerObserver*(int id)>;

// Runs episodes on `workers` threads (0 = hardware concurrency). Results
// are ordered by spec id.
std::vector<EpisodeTrace> run_batch(const Runtime& rt, const std::vector<EpisodeSpec>& specs,
                                    int workers = 0, const ObserverFor& observer_for = {});

// Scenario defaults from the config, with controller-specific planner
// settings applied (blp1 forces eta0 = 0).
EpisodeSpec make_spec(const Config& cfg, RobotController controller, std::uint64_t seed, int id);

struct CellMetrics {
  std::string controller;
  int k = 0;
  double lambda = 0.0;
  int episodes = 0;
  int merged = 0;
  int collisions = 0;
  int deadlocks = 0;
  int timeouts = 0;
  int near_misses = 0;
  double rs = 0.0;
  double tm_mean = 0.0;
  double tm_ci_low = 0.0;
  double tm_ci_high = 0.0;
  int tm_n = 0;
  double first_confident_mean = 0.0;
  std::vector<double> inference_curve;
};

std::vector<CellMetrics> aggregate(const std::vector<EpisodeTrace>& traces, double dt);
nlohmann::json report_json(const std::vector<CellMetrics>& cells);
std::string report_csv(const std::vector<CellMetrics>& cells);
std::string curves_csv(const std::vector<CellMetrics>& cells);

// The trace's closing summary record.
nlohmann::json summary_json(const GameModel& g, const EpisodeTrace& trace);

// JSON-lines trace: header, one step record per line, summary.
void write_trace(std::ostream& os, const Runtime& rt, const EpisodeTrace& trace);
void write_trace(const std::filesystem::path& path, const Runtime& rt, const EpisodeTrace& trace);

struct ReplayRow {
  int t;
  JointState state;
  int robot_action;
  int human_action;
  JointState recorded_next;
  JointState replayed_next;
  bool match;
};

struct ReplayResult {
  std::vector<ReplayRow> rows;
  std::string outcome;
  bool closed = true;
};

// Re-steps the dynamics from each record's state and actions.
ReplayResult replay_trace(const GameModel& model, std::istream& trace);
std::string replay_csv(const GameModel& model, const ReplayResult& r);
std::string replay_text(const GameModel& model, const ReplayResult& r);

}  // namespace qlk
