#include "game_model.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace qlk {

namespace {
constexpr double kTieEps = 1e-9;
}

Axis::Axis(const AxisSpec& spec)
    : min_(spec.min), max_(spec.cells > 1 ? spec.max : spec.min), cells_(spec.cells) {
  if (cells_ < 1) throw ConfigError("axis must have at least one cell");
  step_ = cells_ > 1 ? (max_ - min_) / (cells_ - 1) : 0.0;
}

int Axis::snap(double v) const {
  if (cells_ == 1 || v <= min_) return 0;
  if (v >= max_) return cells_ - 1;
  const double f = (v - min_) / step_;
  const double lower = std::floor(f);
  int i = static_cast<int>(lower);
  if (f - lower > 0.5 + kTieEps) ++i;
  return std::clamp(i, 0, cells_ - 1);
}

bool Axis::on_grid(double v) const {
  const int i = snap(v);
  return std::abs(value(i) - v) <= 1e-6 * std::max(1.0, std::abs(step_));
}

bool rectangles_overlap(const Rect& a, const Rect& b) {
  return std::abs(a.cx - b.cx) < 0.5 * (a.length + b.length) &&
         std::abs(a.cy - b.cy) < 0.5 * (a.width + b.width);
}

GameModel::GameModel(GameConfig cfg)
    : cfg_(std::move(cfg)),
      xr_(cfg_.grid.x_robot),
      yr_(cfg_.grid.y_robot),
      xh_(cfg_.grid.x_human),
      vr_(cfg_.grid.v_robot),
      vh_(cfg_.grid.v_human) {
  const auto& acts = cfg_.actions;
  if (acts.accelerations.empty() || acts.lateral_speeds.empty())
    throw ConfigError("action sets must be non-empty");
  num_human_actions_ = static_cast<int>(acts.accelerations.size());
  num_robot_actions_ = num_human_actions_ * static_cast<int>(acts.lateral_speeds.size());
  for (double a : acts.accelerations) max_abs_accel_ = std::max(max_abs_accel_, std::abs(a));
  for (double w : acts.lateral_speeds) {
    max_abs_lateral_ = std::max(max_abs_lateral_, std::abs(w));
    if (w == 0.0) has_zero_lateral_ = true;
  }

  num_states_ = static_cast<std::size_t>(xr_.size()) * yr_.size() * xh_.size() * vr_.size() *
                vh_.size();
  if (num_states_ > 0xFFFFFFF0ull) throw ConfigError("grid too large");

  const double dt = cfg_.dt;
  const int na = num_human_actions_;
  const int nw = static_cast<int>(acts.lateral_speeds.size());
  xr_next_.resize(xr_.size() * vr_.size());
  for (int x = 0; x < xr_.size(); ++x)
    for (int v = 0; v < vr_.size(); ++v)
      xr_next_[x * vr_.size() + v] = xr_.snap(xr_.value(x) + vr_.value(v) * dt);
  xh_next_.resize(xh_.size() * vh_.size());
  for (int x = 0; x < xh_.size(); ++x)
    for (int v = 0; v < vh_.size(); ++v)
      xh_next_[x * vh_.size() + v] = xh_.snap(xh_.value(x) + vh_.value(v) * dt);
  vr_next_.resize(vr_.size() * na);
  for (int v = 0; v < vr_.size(); ++v)
    for (int a = 0; a < na; ++a)
      vr_next_[v * na + a] = vr_.snap(vr_.value(v) + acts.accelerations[a] * dt);
  vh_next_.resize(vh_.size() * na);
  for (int v = 0; v < vh_.size(); ++v)
    for (int a = 0; a < na; ++a)
      vh_next_[v * na + a] = vh_.snap(vh_.value(v) + acts.accelerations[a] * dt);
  yr_next_.resize(yr_.size() * nw);
  for (int y = 0; y < yr_.size(); ++y)
    for (int w = 0; w < nw; ++w)
      yr_next_[y * nw + w] = yr_.snap(yr_.value(y) + acts.lateral_speeds[w] * dt);

  safe_.resize(num_states_);
  absorbing_.resize(num_states_);
  for (StateId s = 0; s < num_states_; ++s) {
    const bool safe = is_safe(from_index(s));
    safe_[s] = safe;
    const GridIndex g = decompose(s);
    absorbing_[s] = !safe || g.yr == yr_.size() - 1 || g.xr == xr_.size() - 1;
  }
}

RobotAction GameModel::robot_action(int index) const {
  const int nw = static_cast<int>(cfg_.actions.lateral_speeds.size());
  return RobotAction{cfg_.actions.accelerations[index / nw],
                     cfg_.actions.lateral_speeds[index % nw]};
}

ActionPair GameModel::action_pair(int robot_index, int human_index) const {
  return ActionPair{robot_action(robot_index), human_action(human_index)};
}

int GameModel::snap_human_action(double accel) const {
  const auto& a = cfg_.actions.accelerations;
  int best = 0;
  for (int i = 1; i < static_cast<int>(a.size()); ++i) {
    const double d = std::abs(a[i] - accel), db = std::abs(a[best] - accel);
    if (d < db - kTieEps || (std::abs(d - db) <= kTieEps && a[i] < a[best])) best = i;
  }
  return best;
}

StateId GameModel::compose(const GridIndex& g) const {
  std::size_t id = g.xr;
  id = id * yr_.size() + g.yr;
  id = id * xh_.size() + g.xh;
  id = id * vr_.size() + g.vr;
  id = id * vh_.size() + g.vh;
  return static_cast<StateId>(id);
}

GridIndex GameModel::decompose(StateId id) const {
  GridIndex g;
  std::size_t r = id;
  g.vh = static_cast<int>(r % vh_.size());
  r /= vh_.size();
  g.vr = static_cast<int>(r % vr_.size());
  r /= vr_.size();
  g.xh = static_cast<int>(r % xh_.size());
  r /= xh_.size();
  g.yr = static_cast<int>(r % yr_.size());
  r /= yr_.size();
  g.xr = static_cast<int>(r);
  return g;
}

StateId GameModel::to_index(const JointState& s) const {
  return compose(GridIndex{xr_.snap(s.x_r), yr_.snap(s.y_r), xh_.snap(s.x_h), vr_.snap(s.v_r),
                           vh_.snap(s.v_h)});
}

JointState GameModel::from_index(StateId id) const {
  const GridIndex g = decompose(id);
  return JointState{xr_.value(g.xr), yr_.value(g.yr), xh_.value(g.xh), vr_.value(g.vr),
                    vh_.value(g.vh)};
}

JointState GameModel::snap(const JointState& s) const { return from_index(to_index(s)); }

bool GameModel::is_valid(const JointState& s) const {
  return xr_.on_grid(s.x_r) && yr_.on_grid(s.y_r) && xh_.on_grid(s.x_h) && vr_.on_grid(s.v_r) &&
         vh_.on_grid(s.v_h) && s.x_r >= xr_.min() - 1e-9 && s.x_r <= xr_.max() + 1e-9 &&
         s.y_r >= yr_.min() - 1e-9 && s.y_r <= yr_.max() + 1e-9 &&
         s.x_h >= xh_.min() - 1e-9 && s.x_h <= xh_.max() + 1e-9 &&
         s.v_r >= vr_.min() - 1e-9 && s.v_r <= vr_.max() + 1e-9 &&
         s.v_h >= vh_.min() - 1e-9 && s.v_h <= vh_.max() + 1e-9;
}

JointState GameModel::step_dynamics(const JointState& s, const ActionPair& a, double dt) const {
  JointState raw{s.x_r + s.v_r * dt, s.y_r + a.robot.lateral * dt, s.x_h + s.v_h * dt,
                 s.v_r + a.robot.accel * dt, s.v_h + a.human_accel * dt};
  return snap(raw);
}

StateId GameModel::step(StateId s, int robot_action, int human_action) const {
  const int nw = static_cast<int>(cfg_.actions.lateral_speeds.size());
  const int na = num_human_actions_;
  const GridIndex g = decompose(s);
  const int ra = robot_action / nw, rw = robot_action % nw;
  GridIndex n;
  n.xr = xr_next_[g.xr * vr_.size() + g.vr];
  n.yr = yr_next_[g.yr * nw + rw];
  n.xh = xh_next_[g.xh * vh_.size() + g.vh];
  n.vr = vr_next_[g.vr * na + ra];
  n.vh = vh_next_[g.vh * na + human_action];
  return compose(n);
}

StateId GameModel::step_frozen(StateId s, Agent mover, int action) const {
  const int nw = static_cast<int>(cfg_.actions.lateral_speeds.size());
  const int na = num_human_actions_;
  GridIndex n = decompose(s);
  if (mover == Agent::kRobot) {
    const int ra = action / nw, rw = action % nw;
    const GridIndex g = n;
    n.xr = xr_next_[g.xr * vr_.size() + g.vr];
    n.yr = yr_next_[g.yr * nw + rw];
    n.vr = vr_next_[g.vr * na + ra];
  } else {
    const GridIndex g = n;
    n.xh = xh_next_[g.xh * vh_.size() + g.vh];
    n.vh = vh_next_[g.vh * na + action];
  }
  return compose(n);
}

StateFeatures GameModel::feature_vector(const JointState& s) const {
  StateFeatures f{};
  f[kCollision] = is_safe(s) ? 0.0 : 1.0;
  f[kRobotSpeed] = vr_.max() > 0.0 ? s.v_r / vr_.max() : 0.0;
  f[kHumanSpeed] = vh_.max() > 0.0 ? s.v_h / vh_.max() : 0.0;
  const double boundary = human_lane_y() - 0.5 * cfg_.geometry.lane_width;
  f[kTargetLane] = s.y_r >= boundary - 1e-9 ? 1.0 : 0.0;
  f[kMerged] = std::abs(s.y_r - yr_.max()) <= 1e-9 ? 1.0 : 0.0;
  return f;
}

StateFeatures GameModel::feature_vector(StateId s) const {
  StateFeatures f = feature_vector(from_index(s));
  f[kCollision] = safe_[s] ? 0.0 : 1.0;
  return f;
}

ActionFeatures GameModel::action_features(const ActionPair& a) const {
  ActionFeatures f{};
  f[kRobotAccelEffort] = max_abs_accel_ > 0.0 ? std::abs(a.robot.accel) / max_abs_accel_ : 0.0;
  f[kRobotLateralEffort] =
      max_abs_lateral_ > 0.0 ? std::abs(a.robot.lateral) / max_abs_lateral_ : 0.0;
  f[kHumanAccelEffort] = max_abs_accel_ > 0.0 ? std::abs(a.human_accel) / max_abs_accel_ : 0.0;
  return f;
}

ActionFeatures GameModel::action_features(int robot_index, int human_index) const {
  return action_features(action_pair(robot_index, human_index));
}

namespace {
double dot_state(const StateFeatures& f, const RewardWeights& w) {
  double r = 0.0;
  for (int i = 0; i < kNumStateFeatures; ++i) {
    if (i == kCollision && w.deactivate_safety_feature) continue;
    r += w.state[i] * f[i];
  }
  return r;
}
}  // namespace

double GameModel::reward(const JointState& s, const RewardWeights& w) const {
  return dot_state(feature_vector(s), w);
}

double GameModel::reward(StateId s, const RewardWeights& w) const {
  return dot_state(feature_vector(s), w);
}

double GameModel::action_reward(int robot_index, int human_index, const RewardWeights& w) const {
  const ActionFeatures f = action_features(robot_index, human_index);
  double r = 0.0;
  for (int i = 0; i < kNumActionFeatures; ++i) r += w.action[i] * f[i];
  return r;
}

bool GameModel::is_safe(const JointState& s) const {
  const auto& g = cfg_.geometry;
  return !rectangles_overlap(Rect{s.x_r, s.y_r, g.car_length, g.car_width},
                             Rect{s.x_h, human_lane_y(), g.car_length, g.car_width});
}

bool GameModel::action_valid(Agent agent, StateId s, int action) const {
  if (action < 0 || action >= num_actions(agent)) return false;
  if (agent == Agent::kHuman) return true;
  // No lateral motion once fully in the upper lane (when staying put is an option).
  if (has_zero_lateral_ && robot_action(action).lateral != 0.0 && decompose(s).yr == yr_.size() - 1)
    return false;
  return true;
}

}  // namespace qlk
