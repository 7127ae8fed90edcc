#include "session.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "error.hpp"

namespace qlk {

namespace {

using json = nlohmann::json;

json message(const char* type) { return {{"type", type}, {"version", kProtocolVersion}}; }

json axis_json(const Axis& a) { return {{"min", a.min()}, {"max", a.max()}, {"cells", a.size()}}; }

}  // namespace

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kLobby: return "lobby";
    case Phase::kRunning: return "running";
    case Phase::kFinished: return "finished";
  }
  return "lobby";
}

Session::Session(std::shared_ptr<const Runtime> rt, SessionOptions opts, Sender send, Logger log)
    : rt_(std::move(rt)),
      opts_(std::move(opts)),
      send_(std::move(send)),
      log_(std::move(log)),
      planner_(rt_->human_model(), rt_->config().planner) {
  if (opts_.controller == RobotController::kQlk)
    throw ConfigError("sessions support the ours and blp1 planners only");
  reset_episode();
}

void Session::reset_episode() {
  const GameModel& g = rt_->model();
  PlannerParams pp = rt_->config().planner;
  pp.budget_ms = opts_.max_simulations > 0 ? 0.0 : opts_.budget_ms;
  pp.max_simulations = opts_.max_simulations;
  pp.seed = opts_.seed + static_cast<std::uint64_t>(episode_);
  if (opts_.controller == RobotController::kBlp1) pp.eta0 = 0.0;
  planner_.set_params(pp);

  state_ = g.to_index(rt_->config().scenario.initial);
  belief_ = Belief::uniform(state_, rt_->human_model().space().size());
  trace_ = EpisodeTrace{};
  trace_.spec.scenario = rt_->config().scenario;
  trace_.spec.scenario.controller = opts_.controller;
  trace_.spec.planner = pp;
  trace_.spec.seed = opts_.seed;
  trace_.spec.id = episode_;
  trace_.spec.live = true;
  trace_.initial = g.from_index(state_);
  trace_.min_gap = std::abs(trace_.initial.x_r - trace_.initial.x_h);
  visited_ = {trace_.initial};
  aborted_ = false;
  trace_path_.reset();
  pending_accel_.reset();
  last_requested_.reset();
  last_human_action_ = -1;
  last_robot_action_ = -1;
  last_reward_ = 0.0;
  last_diagnostics_ = nullptr;
}

json Session::config_message() const {
  const GameModel& g = rt_->model();
  const auto& geo = g.config().geometry;
  json robot_actions = json::array();
  for (int a = 0; a < g.num_actions(Agent::kRobot); ++a) {
    const RobotAction ra = g.robot_action(a);
    robot_actions.push_back({{"index", a}, {"accel", ra.accel}, {"lateral", ra.lateral}});
  }
  json latent = json::array();
  for (const auto& t : rt_->human_model().space().types())
    latent.push_back({{"k", t.level}, {"lambda", t.lambda}});
  json m = message("config");
  m["session"] = opts_.id;
  m["lanes"] = {{"count", 2},
                {"width", geo.lane_width},
                {"robot_lane_y", g.y_robot().min()},
                {"human_lane_y", g.human_lane_y()}};
  m["geometry"] = {{"car_length", geo.car_length}, {"car_width", geo.car_width}};
  m["grid"] = {{"x_robot", axis_json(g.x_robot())}, {"y_robot", axis_json(g.y_robot())},
               {"x_human", axis_json(g.x_human())}, {"v_robot", axis_json(g.v_robot())},
               {"v_human", axis_json(g.v_human())}};
  m["dt"] = g.dt();
  m["tick_ms"] = rt_->config().service.tick_ms;
  m["action_set"] = {{"human", g.config().actions.accelerations}, {"robot", robot_actions}};
  m["latent_types"] = latent;
  m["planner"] = to_string(opts_.controller);
  m["config_hash"] = hash_hex(rt_->hash());
  return m;
}

json Session::snapshot_message() const {
  const GameModel& g = rt_->model();
  json m = message("snapshot");
  m["t"] = static_cast<int>(trace_.steps.size());
  m["phase"] = to_string(phase_);
  m["planner"] = to_string(opts_.controller);
  m["state"] = to_json(g.from_index(state_));
  m["belief"] = to_json(g, rt_->human_model().space(), belief_);
  if (last_robot_action_ >= 0) {
    const RobotAction ra = g.robot_action(last_robot_action_);
    m["last_robot_action"] = {
        {"index", last_robot_action_}, {"accel", ra.accel}, {"lateral", ra.lateral}};
  } else {
    m["last_robot_action"] = nullptr;
  }
  if (last_human_action_ >= 0) {
    m["last_human_action"] = {{"index", last_human_action_},
                              {"accel", g.human_action(last_human_action_)},
                              {"requested", last_requested_ ? json(*last_requested_) : json(nullptr)}};
  } else {
    m["last_human_action"] = nullptr;
  }
  m["reward"] = last_reward_;
  m["diagnostics"] = last_diagnostics_;
  if (phase_ == Phase::kFinished) {
    m["outcome"] = to_string(trace_.outcome);
    const auto tm = trace_.tm(g.dt());
    m["tm"] = tm ? json(*tm) : json(nullptr);
  }
  return m;
}

void Session::open() {
  send_(config_message().dump());
  send_(snapshot_message().dump());
}

void Session::send_error(const std::string& msg) {
  json m = message("error");
  m["message"] = msg;
  send_(m.dump());
}

bool Session::on_message(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    send_error("malformed frame: not valid JSON");
    return true;
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    send_error("malformed frame: expected an object with a string 'type'");
    return true;
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    send_error("malformed frame: missing integer 'version'");
    return true;
  }
  if (j["version"].get<int>() != kProtocolVersion) {
    send_error("protocol version mismatch: server speaks " + std::to_string(kProtocolVersion));
    return false;
  }
  const std::string type = j["type"].get<std::string>();
  try {
    if (type == "input") {
      if (!j.contains("accel") || !j["accel"].is_number())
        throw Error(ErrorCode::kProtocol, "input: 'accel' must be a number");
      const double a = j["accel"].get<double>();
      if (!std::isfinite(a)) throw Error(ErrorCode::kProtocol, "input: 'accel' must be finite");
      pending_accel_ = a;
    } else if (type == "control") {
      handle_control(j);
    } else if (log_) {
      log_("ignoring unknown message type '" + type + "'");
    }
  } catch (const Error& e) {
    send_error(e.what());
  }
  return true;
}

void Session::handle_control(const json& j) {
  if (!j.contains("action") || !j["action"].is_string())
    throw Error(ErrorCode::kProtocol, "control: 'action' must be a string");
  const std::string action = j["action"].get<std::string>();
  if (action == "start") {
    if (phase_ == Phase::kFinished) {
      ++episode_;
      reset_episode();
    }
    phase_ = Phase::kRunning;
  } else if (action == "reset") {
    const bool was_running = phase_ == Phase::kRunning;
    ++episode_;
    reset_episode();
    phase_ = was_running ? Phase::kRunning : Phase::kLobby;
  } else if (action == "select_planner") {
    if (!j.contains("planner") || !j["planner"].is_string())
      throw Error(ErrorCode::kProtocol, "select_planner: 'planner' must be a string");
    RobotController c;
    try {
      c = parse_controller(j["planner"].get<std::string>());
    } catch (const Error&) {
      throw Error(ErrorCode::kProtocol, "select_planner: planner must be ours or blp1");
    }
    if (c == RobotController::kQlk)
      throw Error(ErrorCode::kProtocol, "select_planner: planner must be ours or blp1");
    if (phase_ == Phase::kRunning)
      throw Error(ErrorCode::kProtocol, "select_planner: not allowed while an episode is running");
    opts_.controller = c;
    ++episode_;
    reset_episode();
    phase_ = Phase::kLobby;
  } else {
    throw Error(ErrorCode::kProtocol, "control: unknown action '" + action + "'");
  }
  send_(snapshot_message().dump());
}

void Session::tick() {
  if (phase_ != Phase::kRunning) return;
  const auto start = std::chrono::steady_clock::now();
  const GameModel& g = rt_->model();
  const HumanModel& hm = rt_->human_model();

  StepRecord rec;
  rec.t = static_cast<int>(trace_.steps.size());
  rec.state = g.from_index(state_);
  const PlanResult pr = planner_.plan(belief_);
  rec.robot_action = pr.action;
  rec.diagnostics = to_json(g, pr.diagnostics);
  trace_.max_step_risk = std::max(trace_.max_step_risk, pr.diagnostics.chosen_risk);
  if (pr.diagnostics.fallback) ++trace_.fallbacks;

  // Inputs are consumed per tick; a silent tick means "maintain".
  last_requested_ = pending_accel_;
  rec.human_action = g.snap_human_action(pending_accel_.value_or(0.0));
  pending_accel_.reset();

  const StateId next = g.step(state_, rec.robot_action, rec.human_action);
  rec.next_state = g.from_index(next);
  rec.reward =
      g.transition_reward(rec.robot_action, rec.human_action, next, g.weights(Agent::kRobot));
  rec.info_gain = info_gain(hm, belief_, rec.robot_action);
  try {
    belief_ = update_belief(hm, belief_, rec.robot_action, next, rt_->config().belief.floor);
  } catch (const ZeroLikelihoodError&) {
    belief_ = Belief::uniform(next, hm.space().size());
    rec.belief_reset = true;
  }
  rec.belief = belief_;
  last_robot_action_ = rec.robot_action;
  last_human_action_ = rec.human_action;
  last_reward_ = rec.reward;
  last_diagnostics_ = rec.diagnostics;
  trace_.steps.push_back(std::move(rec));
  state_ = next;
  const JointState js = g.from_index(state_);
  visited_.push_back(js);
  trace_.min_gap = std::min(trace_.min_gap, std::abs(js.x_r - js.x_h));
  if (is_near_miss(g, js)) trace_.near_miss = true;

  if (g.is_absorbing(state_) ||
      static_cast<int>(trace_.steps.size()) >= rt_->config().scenario.episode_cap)
    finish(classify_outcome(g, visited_));
  tick_ms_.push_back(
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  send_(snapshot_message().dump());
}

void Session::finish(Outcome o) {
  trace_.outcome = o;
  if (o == Outcome::kMerged) trace_.robot_ahead = visited_.back().x_r > visited_.back().x_h;
  phase_ = Phase::kFinished;
  if (!opts_.trace_dir.empty()) {
    const auto path = std::filesystem::path(opts_.trace_dir) /
                      (opts_.id + "-episode-" + std::to_string(episode_) + ".jsonl");
    try {
      write_trace(path, *rt_, trace_);
      trace_path_ = path.string();
    } catch (const Error& e) {
      if (log_) log_(std::string("failed to persist trace: ") + e.what());
    }
  }
}

void Session::disconnect() {
  if (phase_ != Phase::kRunning) return;
  trace_.aborted = true;
  aborted_ = true;
  finish(classify_outcome(rt_->model(), visited_));
}

}  // namespace qlk
