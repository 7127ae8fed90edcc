#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "config.hpp"
#include "game_model.hpp"
#include "types.hpp"

namespace qlk {

// Level-0 tables are lambda independent and stored with this lambda.
inline constexpr double kLevel0Lambda = 0.0;

struct ValueTable {
  Agent agent = Agent::kRobot;
  int level = 0;
  double lambda = 1.0;
  std::vector<double> values;
  int sweeps = 0;
  double residual = 0.0;
};

struct PolicyTable {
  Agent agent = Agent::kRobot;
  int level = 0;
  double lambda = 1.0;
  int num_actions = 0;
  std::vector<double> probs;  // row-major [state][action]

  std::span<const double> row(StateId s) const {
    return {probs.data() + static_cast<std::size_t>(s) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
  std::span<double> row(StateId s) {
    return {probs.data() + static_cast<std::size_t>(s) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
};

// Softmax with inverse temperature lambda over q (max-subtracted).
// Entries with mask[a] == false get probability zero. Throws on
// non-finite q entries or lambda <= 0.
std::vector<double> quantal_response(std::span<const double> q, double lambda,
                                     std::span<const bool> mask = {});

// Dense successor table s' = f(s, a_R, a_H) shared by all backups.
class TransitionTable {
 public:
  explicit TransitionTable(const GameModel& model);
  StateId next(StateId s, int robot_action, int human_action) const {
    return next_[(static_cast<std::size_t>(s) * nr_ + robot_action) * nh_ + human_action];
  }

 private:
  int nr_, nh_;
  std::vector<StateId> next_;
};

// Expected r_i(s') + gamma V(s') for agent i taking `own_action` in s while
// the opponent plays `opponent` (absorbing successors contribute r only).
double q_value(const GameModel& model, const TransitionTable& tt, Agent agent,
               const PolicyTable& opponent, const ValueTable& values, StateId s, int own_action,
               double gamma);
double q_value(const GameModel& model, Agent agent, const PolicyTable& opponent,
               const ValueTable& values, StateId s, int own_action, double gamma);

// Value iteration to sup-norm tolerance against a fixed opponent policy.
ValueTable value_iteration(const GameModel& model, const TransitionTable& tt, Agent agent,
                           const PolicyTable& opponent, int level, double lambda, double gamma,
                           double tolerance, int max_sweeps);

// max_s |B V(s) - V(s)|.
double bellman_residual(const GameModel& model, const TransitionTable& tt, Agent agent,
                        const PolicyTable& opponent, const ValueTable& values, double gamma);

PolicyTable extract_policy(const GameModel& model, const TransitionTable& tt, Agent agent,
                           const PolicyTable& opponent, const ValueTable& values, double lambda,
                           double gamma);

// Deterministic level-0 policy: greedy single-agent plan with the opponent
// as a static obstacle (or ignored, in never-yield mode). Ties go to the
// lowest action index.
struct Level0Result {
  PolicyTable policy;
  ValueTable values;
};
Level0Result solve_level0(const GameModel& model, Agent agent, const SolverConfig& cfg);

class QlkTables {
 public:
  std::uint64_t config_hash = 0;
  std::vector<ValueTable> values;
  std::vector<PolicyTable> policies;

  // Level 0 matches any lambda. Return nullptr when absent.
  const PolicyTable* find_policy(Agent agent, int level, double lambda) const;
  const ValueTable* find_value(Agent agent, int level, double lambda) const;
  // Throw MissingTablesError when absent.
  const PolicyTable& policy(Agent agent, int level, double lambda) const;
  const ValueTable& value(Agent agent, int level, double lambda) const;
};

struct SolveProgress {
  Agent agent;
  int level;
  double lambda;
  int sweeps;
};

// Quantal level-k dynamic programming. Solves levels 1..k_max for both
// agents and every lambda in Lambda U {1}, plus the robot at level k_max+1
// with lambda = 1 (terminal values of the planner).
QlkTables solve_qlk(const GameModel& model, const SolverConfig& cfg, std::uint64_t config_hash,
                    const std::function<void(const SolveProgress&)>& progress = {});

void save_tables(const QlkTables& tables, const GameModel& model,
                 const std::filesystem::path& path);
// Throws Error(kHashMismatch) when the file was produced for another config.
QlkTables load_tables(const GameModel& model, std::uint64_t expected_hash,
                      const std::filesystem::path& path);
// Reads only the header hash; nullopt when the file is missing/unreadable.
std::optional<std::uint64_t> peek_tables_hash(const std::filesystem::path& path);

}  // namespace qlk
