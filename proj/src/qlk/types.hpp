#pragma once

#include <cstdint>
#include <string>

namespace qlk {

enum class Agent : std::uint8_t { kRobot = 0, kHuman = 1 };

inline Agent opponent(Agent a) {
  return a == Agent::kRobot ? Agent::kHuman : Agent::kRobot;
}

inline const char* to_string(Agent a) { return a == Agent::kRobot ? "robot" : "human"; }

// Fully observable physical state. The human is fixed laterally in the
// upper lane, so only the robot carries a lateral coordinate.
struct JointState {
  double x_r = 0.0;  // robot longitudinal position [m]
  double y_r = 0.0;  // robot lateral position [m]
  double x_h = 0.0;  // human longitudinal position [m]
  double v_r = 0.0;  // robot speed [m/s]
  double v_h = 0.0;  // human speed [m/s]

  friend bool operator==(const JointState&, const JointState&) = default;
};

using StateId = std::uint32_t;

// Latent cognitive state of the human: intelligence level and rationality.
struct LatentState {
  int level = 1;
  double lambda = 1.0;

  friend bool operator==(const LatentState&, const LatentState&) = default;
};

}  // namespace qlk
