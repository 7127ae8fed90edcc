#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "types.hpp"

namespace qlk {

struct AxisSpec {
  double min = 0.0;
  double max = 0.0;
  int cells = 1;
};

struct GridSpec {
  AxisSpec x_robot{0.0, 78.0, 40};
  AxisSpec y_robot{0.0, 3.6, 6};
  AxisSpec x_human{0.0, 78.0, 40};
  AxisSpec v_robot{0.0, 20.0, 6};
  AxisSpec v_human{0.0, 20.0, 6};
};

struct Geometry {
  double lane_width = 3.6;
  double car_length = 7.0;
  double car_width = 2.0;
};

// A_H = accelerations; A_R = accelerations x lateral speeds.
struct ActionSpec {
  std::vector<double> accelerations{-8.0, 0.0, 8.0};
  std::vector<double> lateral_speeds{0.0, 1.44};
};

// State features, in vector order.
enum StateFeature : int {
  kCollision = 0,
  kRobotSpeed,
  kHumanSpeed,
  kTargetLane,
  kMerged,
  kNumStateFeatures
};

// Features of the joint action (comfort terms).
enum ActionFeature : int {
  kRobotAccelEffort = 0,
  kRobotLateralEffort,
  kHumanAccelEffort,
  kNumActionFeatures
};

inline constexpr int kNumFeatures = static_cast<int>(kNumStateFeatures) + static_cast<int>(kNumActionFeatures);

struct RewardWeights {
  std::array<double, kNumStateFeatures> state{};
  std::array<double, kNumActionFeatures> action{};
  bool deactivate_safety_feature = false;

  RewardWeights operator+(const RewardWeights& o) const;
};

struct GameConfig {
  GridSpec grid;
  double dt = 0.5;
  Geometry geometry;
  ActionSpec actions;
  RewardWeights robot_weights;
  RewardWeights human_weights;
};

enum class Level0Mode { kStaticObstacle, kNeverYield };

struct SolverConfig {
  double gamma = 0.95;
  double tolerance = 1e-6;
  int max_sweeps = 10000;
  int k_max = 2;
  std::vector<double> lambdas{0.5, 0.8, 1.0};
  Level0Mode level0 = Level0Mode::kNeverYield;
  // Adds k = 0 to the human hypothesis space used by the belief.
  bool include_level0_hypothesis = false;
};

enum class RolloutPolicy { kUniform, kQlk };

struct PlannerParams {
  int horizon = 8;
  double gamma = 0.95;
  double risk_total = 0.05;
  double risk_per_step = 1.0 / 160.0;
  // Unset means derived from the robot's step-reward range.
  std::optional<double> exploration;
  double eta0 = 1.0;
  double budget_ms = 125.0;
  // When > 0, the search stops after this many simulations instead of
  // (or before) the wall-clock budget. budget_ms <= 0 disables the clock.
  long max_simulations = 0;
  RolloutPolicy rollout = RolloutPolicy::kUniform;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class RobotController { kOurs, kBlp1, kQlk };

RobotController parse_controller(const std::string& s);
const char* to_string(RobotController c);

struct ScenarioConfig {
  JointState initial{12.0, 0.0, 12.0, 12.0, 12.0};
  // Human start is drawn uniformly within +-random_start_m of the robot.
  double random_start_m = 0.0;
  LatentState true_theta{1, 0.8};
  RobotController controller = RobotController::kOurs;
  // Used when controller == kQlk: the robot follows its own ql-k policy.
  LatentState robot_theta{2, 1.0};
  int episode_cap = 60;
  std::uint64_t seed = 7;
  int repetitions = 1;
};

struct BeliefConfig {
  // Optional floor applied to latent probabilities after each update.
  double floor = 0.0;
};

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  int tick_ms = 500;
  double budget_ms = 250.0;
  std::string static_dir = "web";
  bool multi_session = false;
};

struct Config {
  std::string name = "default";
  GameConfig game;
  SolverConfig solver;
  PlannerParams planner;
  BeliefConfig belief;
  ScenarioConfig scenario;
  ServiceConfig service;
};

Config parse_config(const nlohmann::json& doc);
Config load_config(const std::filesystem::path& path);
nlohmann::json to_json(const Config& cfg);

// Hash of every setting that influences the solved tables.
std::uint64_t config_hash(const Config& cfg);
std::string hash_hex(std::uint64_t h);

nlohmann::json to_json(const JointState& s);
JointState joint_state_from_json(const nlohmann::json& j);

}  // namespace qlk
