#include "config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"

namespace qlk {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kNumStateFeatures> kStateFeatureNames = {
    "collision", "robot_speed", "human_speed", "target_lane", "merged"};
constexpr std::array<const char*, kNumActionFeatures> kActionFeatureNames = {
    "robot_accel_effort", "robot_lateral_effort", "human_accel_effort"};

RewardWeights default_robot_weights() {
  RewardWeights w;
  w.state = {-1000.0, 30.0, 0.0, 0.0, 100.0};
  w.action = {-3.0, -1.0, 0.0};
  return w;
}

RewardWeights default_human_weights() {
  RewardWeights w;
  w.state = {-1000.0, 0.0, 30.0, 0.0, 0.0};
  w.action = {0.0, 0.0, -3.0};
  return w;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items()) {
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

AxisSpec parse_axis(const json& j, AxisSpec axis, const std::string& where) {
  check_keys(j, {"min", "max", "cells"}, where);
  read(j, "min", axis.min, where);
  read(j, "max", axis.max, where);
  read(j, "cells", axis.cells, where);
  if (axis.cells < 1) throw ConfigError(where + ": cells must be >= 1");
  if (axis.cells > 1 && !(axis.max > axis.min))
    throw ConfigError(where + ": max must exceed min");
  return axis;
}

RewardWeights parse_weights(const json& j, RewardWeights w, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool found = false;
    if (k == "deactivate_safety_feature") {
      w.deactivate_safety_feature = v.get<bool>();
      continue;
    }
    for (int i = 0; i < kNumStateFeatures; ++i) {
      if (k == kStateFeatureNames[i]) {
        w.state[i] = v.get<double>();
        found = true;
      }
    }
    for (int i = 0; i < kNumActionFeatures; ++i) {
      if (k == kActionFeatureNames[i]) {
        w.action[i] = v.get<double>();
        found = true;
      }
    }
    if (!found) throw ConfigError(where + ": unknown feature '" + k + "'");
  }
  return w;
}

json weights_to_json(const RewardWeights& w) {
  json j = json::object();
  for (int i = 0; i < kNumStateFeatures; ++i) j[kStateFeatureNames[i]] = w.state[i];
  for (int i = 0; i < kNumActionFeatures; ++i) j[kActionFeatureNames[i]] = w.action[i];
  j["deactivate_safety_feature"] = w.deactivate_safety_feature;
  return j;
}

json axis_to_json(const AxisSpec& a) {
  return json{{"min", a.min}, {"max", a.max}, {"cells", a.cells}};
}

LatentState parse_theta(const json& j, const std::string& where) {
  check_keys(j, {"k", "lambda"}, where);
  LatentState t;
  read(j, "k", t.level, where);
  read(j, "lambda", t.lambda, where);
  return t;
}

json game_to_json(const GameConfig& g) {
  json grid{{"x_robot", axis_to_json(g.grid.x_robot)},
            {"y_robot", axis_to_json(g.grid.y_robot)},
            {"x_human", axis_to_json(g.grid.x_human)},
            {"v_robot", axis_to_json(g.grid.v_robot)},
            {"v_human", axis_to_json(g.grid.v_human)}};
  return json{{"grid", grid},
              {"dt", g.dt},
              {"geometry",
               {{"lane_width", g.geometry.lane_width},
                {"car_length", g.geometry.car_length},
                {"car_width", g.geometry.car_width}}},
              {"actions",
               {{"accelerations", g.actions.accelerations},
                {"lateral_speeds", g.actions.lateral_speeds}}},
              {"rewards",
               {{"robot", weights_to_json(g.robot_weights)},
                {"human", weights_to_json(g.human_weights)}}}};
}

const char* level0_name(Level0Mode m) {
  return m == Level0Mode::kStaticObstacle ? "static-obstacle" : "never-yield";
}

json solver_to_json(const SolverConfig& s) {
  return json{{"gamma", s.gamma},
              {"tolerance", s.tolerance},
              {"max_sweeps", s.max_sweeps},
              {"k_max", s.k_max},
              {"lambdas", s.lambdas},
              {"level0", level0_name(s.level0)},
              {"include_level0_hypothesis", s.include_level0_hypothesis}};
}

}  // namespace

RewardWeights RewardWeights::operator+(const RewardWeights& o) const {
  RewardWeights r = *this;
  for (int i = 0; i < kNumStateFeatures; ++i) r.state[i] += o.state[i];
  for (int i = 0; i < kNumActionFeatures; ++i) r.action[i] += o.action[i];
  return r;
}

void PlannerParams::validate() const {
  if (horizon < 1) throw ConfigError("planner.horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("planner.gamma must be in [0,1)");
  if (!(risk_per_step > 0.0)) throw ConfigError("planner.risk_per_step must be > 0");
  if (horizon * risk_per_step > risk_total * (1.0 + 1e-12))
    throw ConfigError("planner: horizon * risk_per_step exceeds risk_total");
  if (budget_ms <= 0.0 && max_simulations <= 0)
    throw ConfigError("planner: need budget_ms > 0 or max_simulations > 0");
  if (eta0 < 0.0) throw ConfigError("planner.eta0 must be >= 0");
  if (exploration && *exploration < 0.0) throw ConfigError("planner.exploration must be >= 0");
}

RobotController parse_controller(const std::string& s) {
  if (s == "ours") return RobotController::kOurs;
  if (s == "blp1" || s == "BLP-1" || s == "blp-1") return RobotController::kBlp1;
  if (s == "qlk") return RobotController::kQlk;
  throw ConfigError("unknown robot controller '" + s + "' (expected ours|blp1|qlk)");
}

const char* to_string(RobotController c) {
  switch (c) {
    case RobotController::kOurs: return "ours";
    case RobotController::kBlp1: return "blp1";
    case RobotController::kQlk: return "qlk";
  }
  return "?";
}

json to_json(const JointState& s) {
  return json{{"x_r", s.x_r}, {"y_r", s.y_r}, {"x_h", s.x_h}, {"v_r", s.v_r}, {"v_h", s.v_h}};
}

JointState joint_state_from_json(const json& j) {
  JointState s;
  try {
    s.x_r = j.at("x_r").get<double>();
    s.y_r = j.at("y_r").get<double>();
    s.x_h = j.at("x_h").get<double>();
    s.v_r = j.at("v_r").get<double>();
    s.v_h = j.at("v_h").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("joint state: ") + e.what());
  }
  return s;
}

Config parse_config(const json& doc) {
  Config cfg;
  cfg.game.robot_weights = default_robot_weights();
  cfg.game.human_weights = default_human_weights();
  check_keys(doc,
             {"name", "grid", "dt", "geometry", "actions", "rewards", "solver", "planner",
              "belief", "scenario", "service"},
             "config");
  read(doc, "name", cfg.name, "config");

  auto& g = cfg.game;
  if (doc.contains("grid")) {
    const auto& j = doc["grid"];
    check_keys(j, {"x_robot", "y_robot", "x_human", "v_robot", "v_human"}, "grid");
    if (j.contains("x_robot")) g.grid.x_robot = parse_axis(j["x_robot"], g.grid.x_robot, "grid.x_robot");
    if (j.contains("y_robot")) g.grid.y_robot = parse_axis(j["y_robot"], g.grid.y_robot, "grid.y_robot");
    if (j.contains("x_human")) g.grid.x_human = parse_axis(j["x_human"], g.grid.x_human, "grid.x_human");
    if (j.contains("v_robot")) g.grid.v_robot = parse_axis(j["v_robot"], g.grid.v_robot, "grid.v_robot");
    if (j.contains("v_human")) g.grid.v_human = parse_axis(j["v_human"], g.grid.v_human, "grid.v_human");
  }
  read(doc, "dt", g.dt, "config");
  if (!(g.dt > 0.0)) throw ConfigError("dt must be > 0");
  if (doc.contains("geometry")) {
    const auto& j = doc["geometry"];
    check_keys(j, {"lane_width", "car_length", "car_width"}, "geometry");
    read(j, "lane_width", g.geometry.lane_width, "geometry");
    read(j, "car_length", g.geometry.car_length, "geometry");
    read(j, "car_width", g.geometry.car_width, "geometry");
  }
  if (doc.contains("actions")) {
    const auto& j = doc["actions"];
    check_keys(j, {"accelerations", "lateral_speeds"}, "actions");
    read(j, "accelerations", g.actions.accelerations, "actions");
    read(j, "lateral_speeds", g.actions.lateral_speeds, "actions");
  }
  if (g.actions.accelerations.empty() || g.actions.lateral_speeds.empty())
    throw ConfigError("actions: accelerations and lateral_speeds must be non-empty");
  if (doc.contains("rewards")) {
    const auto& j = doc["rewards"];
    check_keys(j, {"robot", "human"}, "rewards");
    if (j.contains("robot")) g.robot_weights = parse_weights(j["robot"], g.robot_weights, "rewards.robot");
    if (j.contains("human")) g.human_weights = parse_weights(j["human"], g.human_weights, "rewards.human");
  }

  auto& s = cfg.solver;
  if (doc.contains("solver")) {
    const auto& j = doc["solver"];
    check_keys(j, {"gamma", "tolerance", "max_sweeps", "k_max", "lambdas", "level0",
                   "include_level0_hypothesis"},
               "solver");
    read(j, "gamma", s.gamma, "solver");
    read(j, "tolerance", s.tolerance, "solver");
    read(j, "max_sweeps", s.max_sweeps, "solver");
    read(j, "k_max", s.k_max, "solver");
    read(j, "lambdas", s.lambdas, "solver");
    read(j, "include_level0_hypothesis", s.include_level0_hypothesis, "solver");
    std::string l0 = level0_name(s.level0);
    read(j, "level0", l0, "solver");
    if (l0 == "static-obstacle") s.level0 = Level0Mode::kStaticObstacle;
    else if (l0 == "never-yield") s.level0 = Level0Mode::kNeverYield;
    else throw ConfigError("solver.level0 must be static-obstacle or never-yield");
  }
  // Empty lambda sets and bad gamma are rejected by the solver itself.
  if (s.k_max < 1) throw ConfigError("solver.k_max must be >= 1");

  auto& p = cfg.planner;
  p.gamma = s.gamma;
  if (doc.contains("planner")) {
    const auto& j = doc["planner"];
    check_keys(j, {"horizon", "gamma", "risk_total", "risk_per_step", "exploration", "eta0",
                   "budget_ms", "max_simulations", "rollout", "seed"},
               "planner");
    read(j, "horizon", p.horizon, "planner");
    read(j, "gamma", p.gamma, "planner");
    read(j, "risk_total", p.risk_total, "planner");
    read(j, "risk_per_step", p.risk_per_step, "planner");
    if (j.contains("exploration") && !j["exploration"].is_null())
      p.exploration = j["exploration"].get<double>();
    read(j, "eta0", p.eta0, "planner");
    read(j, "budget_ms", p.budget_ms, "planner");
    read(j, "max_simulations", p.max_simulations, "planner");
    read(j, "seed", p.seed, "planner");
    std::string r = "uniform";
    read(j, "rollout", r, "planner");
    if (r == "uniform") p.rollout = RolloutPolicy::kUniform;
    else if (r == "qlk") p.rollout = RolloutPolicy::kQlk;
    else throw ConfigError("planner.rollout must be uniform or qlk");
  }
  p.validate();

  if (doc.contains("belief")) {
    const auto& j = doc["belief"];
    check_keys(j, {"floor"}, "belief");
    read(j, "floor", cfg.belief.floor, "belief");
  }

  auto& sc = cfg.scenario;
  if (doc.contains("scenario")) {
    const auto& j = doc["scenario"];
    check_keys(j, {"initial", "random_start_m", "true_theta", "controller", "robot_theta",
                   "episode_cap", "seed", "repetitions"},
               "scenario");
    if (j.contains("initial")) sc.initial = joint_state_from_json(j["initial"]);
    read(j, "random_start_m", sc.random_start_m, "scenario");
    if (j.contains("true_theta")) sc.true_theta = parse_theta(j["true_theta"], "scenario.true_theta");
    if (j.contains("robot_theta")) sc.robot_theta = parse_theta(j["robot_theta"], "scenario.robot_theta");
    std::string c = to_string(sc.controller);
    read(j, "controller", c, "scenario");
    sc.controller = parse_controller(c);
    read(j, "episode_cap", sc.episode_cap, "scenario");
    read(j, "seed", sc.seed, "scenario");
    read(j, "repetitions", sc.repetitions, "scenario");
  }
  if (sc.episode_cap < 1) throw ConfigError("scenario.episode_cap must be >= 1");

  auto& sv = cfg.service;
  if (doc.contains("service")) {
    const auto& j = doc["service"];
    check_keys(j, {"bind", "port", "tick_ms", "budget_ms", "static_dir", "multi_session"},
               "service");
    read(j, "bind", sv.bind, "service");
    read(j, "port", sv.port, "service");
    read(j, "tick_ms", sv.tick_ms, "service");
    read(j, "budget_ms", sv.budget_ms, "service");
    read(j, "static_dir", sv.static_dir, "service");
    read(j, "multi_session", sv.multi_session, "service");
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const Config& cfg) {
  json doc = game_to_json(cfg.game);
  doc["name"] = cfg.name;
  doc["solver"] = solver_to_json(cfg.solver);
  const auto& p = cfg.planner;
  doc["planner"] = json{{"horizon", p.horizon},
                        {"gamma", p.gamma},
                        {"risk_total", p.risk_total},
                        {"risk_per_step", p.risk_per_step},
                        {"exploration", p.exploration ? json(*p.exploration) : json(nullptr)},
                        {"eta0", p.eta0},
                        {"budget_ms", p.budget_ms},
                        {"max_simulations", p.max_simulations},
                        {"rollout", p.rollout == RolloutPolicy::kUniform ? "uniform" : "qlk"},
                        {"seed", p.seed}};
  doc["belief"] = json{{"floor", cfg.belief.floor}};
  const auto& sc = cfg.scenario;
  doc["scenario"] = json{{"initial", to_json(sc.initial)},
                         {"random_start_m", sc.random_start_m},
                         {"true_theta", {{"k", sc.true_theta.level}, {"lambda", sc.true_theta.lambda}}},
                         {"controller", to_string(sc.controller)},
                         {"robot_theta", {{"k", sc.robot_theta.level}, {"lambda", sc.robot_theta.lambda}}},
                         {"episode_cap", sc.episode_cap},
                         {"seed", sc.seed},
                         {"repetitions", sc.repetitions}};
  const auto& sv = cfg.service;
  doc["service"] = json{{"bind", sv.bind},
                        {"port", sv.port},
                        {"tick_ms", sv.tick_ms},
                        {"budget_ms", sv.budget_ms},
                        {"static_dir", sv.static_dir},
                        {"multi_session", sv.multi_session}};
  return doc;
}

std::uint64_t config_hash(const Config& cfg) {
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  json j{{"game", game_to_json(cfg.game)}, {"solver", solver_to_json(cfg.solver)}};
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace qlk
