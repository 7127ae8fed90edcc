#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "config.hpp"
#include "types.hpp"

namespace qlk {

// Uniformly spaced grid axis. Off-grid values snap to the nearest point,
// ties toward the smaller index, and saturate at the bounds.
class Axis {
 public:
  Axis() = default;
  explicit Axis(const AxisSpec& spec);

  int size() const { return cells_; }
  double min() const { return min_; }
  double max() const { return max_; }
  double step() const { return step_; }
  double value(int i) const { return min_ + step_ * i; }
  int snap(double v) const;
  bool on_grid(double v) const;

 private:
  double min_ = 0.0;
  double max_ = 0.0;
  double step_ = 0.0;
  int cells_ = 1;
};

struct GridIndex {
  int xr = 0, yr = 0, xh = 0, vr = 0, vh = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

struct RobotAction {
  double accel = 0.0;    // m/s^2
  double lateral = 0.0;  // m/s, positive toward the upper lane
};

struct ActionPair {
  RobotAction robot;
  double human_accel = 0.0;
};

struct Rect {
  double cx, cy, length, width;
};

// True iff the interiors of two axis-aligned rectangles intersect.
bool rectangles_overlap(const Rect& a, const Rect& b);

using StateFeatures = std::array<double, kNumStateFeatures>;
using ActionFeatures = std::array<double, kNumActionFeatures>;

// The two-player merge game: grid, action sets, dynamics, rewards and the
// safe set. Immutable after construction; safe to share across threads.
class GameModel {
 public:
  explicit GameModel(GameConfig cfg);

  const GameConfig& config() const { return cfg_; }
  double dt() const { return cfg_.dt; }

  const Axis& x_robot() const { return xr_; }
  const Axis& y_robot() const { return yr_; }
  const Axis& x_human() const { return xh_; }
  const Axis& v_robot() const { return vr_; }
  const Axis& v_human() const { return vh_; }
  // The human drives along the upper-lane centre line.
  double human_lane_y() const { return yr_.max(); }

  std::size_t num_states() const { return num_states_; }
  int num_actions(Agent a) const {
    return a == Agent::kRobot ? num_robot_actions_ : num_human_actions_;
  }
  // Robot action index = accel_index * |lateral| + lateral_index.
  RobotAction robot_action(int index) const;
  double human_action(int index) const { return cfg_.actions.accelerations[index]; }
  ActionPair action_pair(int robot_index, int human_index) const;
  // Nearest A_H element (ties toward the smaller index).
  int snap_human_action(double accel) const;

  StateId compose(const GridIndex& g) const;
  GridIndex decompose(StateId id) const;
  StateId to_index(const JointState& s) const;
  JointState from_index(StateId id) const;
  JointState snap(const JointState& s) const;
  bool is_valid(const JointState& s) const;

  // Euler step followed by per-axis nearest-grid snapping.
  JointState step_dynamics(const JointState& s, const ActionPair& a, double dt) const;
  // Same map on grid indices with the configured dt (table driven).
  StateId step(StateId s, int robot_action, int human_action) const;
  // Single-agent step in which the opponent is a static obstacle.
  StateId step_frozen(StateId s, Agent mover, int action) const;

  StateFeatures feature_vector(const JointState& s) const;
  StateFeatures feature_vector(StateId s) const;
  ActionFeatures action_features(const ActionPair& a) const;
  ActionFeatures action_features(int robot_index, int human_index) const;

  double reward(const JointState& s, const RewardWeights& w) const;
  double reward(StateId s, const RewardWeights& w) const;
  double action_reward(int robot_index, int human_index, const RewardWeights& w) const;
  // Reward for moving into `next` under joint action (robot_index, human_index).
  double transition_reward(int robot_index, int human_index, StateId next,
                           const RewardWeights& w) const {
    return reward(next, w) + action_reward(robot_index, human_index, w);
  }

  bool is_safe(const JointState& s) const;
  bool is_safe(StateId s) const { return safe_[s] != 0; }
  bool is_merged(StateId s) const { return decompose(s).yr == yr_.size() - 1; }
  bool at_road_end(StateId s) const { return decompose(s).xr == xr_.size() - 1; }
  // Merged, collided, or robot at the longitudinal end of the grid.
  bool is_absorbing(StateId s) const { return absorbing_[s] != 0; }
  bool action_valid(Agent agent, StateId s, int action) const;

  const RewardWeights& weights(Agent a) const {
    return a == Agent::kRobot ? cfg_.robot_weights : cfg_.human_weights;
  }

 private:
  GameConfig cfg_;
  Axis xr_, yr_, xh_, vr_, vh_;
  std::size_t num_states_ = 0;
  int num_robot_actions_ = 0;
  int num_human_actions_ = 0;
  double max_abs_accel_ = 0.0;
  double max_abs_lateral_ = 0.0;
  bool has_zero_lateral_ = false;

  // Per-axis successor tables for the configured dt.
  std::vector<int> xr_next_;  // [xr * |vr| + vr]
  std::vector<int> xh_next_;  // [xh * |vh| + vh]
  std::vector<int> vr_next_;  // [vr * |A| + a]
  std::vector<int> vh_next_;  // [vh * |A| + a]
  std::vector<int> yr_next_;  // [yr * |W| + w]

  std::vector<std::uint8_t> safe_;
  std::vector<std::uint8_t> absorbing_;
};

}  // namespace qlk
