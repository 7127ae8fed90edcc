#include <cmath>
#include <random>

#include "doctest.h"
#include "error.hpp"
#include "fixtures.hpp"
#include "game_model.hpp"

using namespace qlk;

TEST_CASE("axis snapping: nearest point, ties low, saturation") {
  const Axis a(AxisSpec{0.0, 10.0, 11});
  CHECK(a.step() == doctest::Approx(1.0));
  CHECK(a.snap(2.4) == 2);
  CHECK(a.snap(2.5) == 2);
  CHECK(a.snap(2.5001) == 3);
  CHECK(a.snap(-3.0) == 0);
  CHECK(a.snap(42.0) == 10);
  CHECK(a.on_grid(7.0));
  CHECK_FALSE(a.on_grid(7.3));
  const Axis one(AxisSpec{4.0, 4.0, 1});
  CHECK(one.snap(100.0) == 0);
  CHECK(one.value(0) == 4.0);
  CHECK_THROWS_AS(Axis(AxisSpec{0.0, 1.0, 0}), ConfigError);
}

TEST_CASE("rectangle overlap is strict") {
  const Rect a{0.0, 0.0, 7.0, 2.0};
  CHECK(rectangles_overlap(a, Rect{6.9, 0.0, 7.0, 2.0}));
  CHECK_FALSE(rectangles_overlap(a, Rect{7.0, 0.0, 7.0, 2.0}));
  CHECK_FALSE(rectangles_overlap(a, Rect{0.0, 2.0, 7.0, 2.0}));
  CHECK(rectangles_overlap(a, Rect{0.0, 1.99, 7.0, 2.0}));
}

TEST_CASE("index round trip over the full default grid") {
  const GameModel g(fixtures::default_game());
  CHECK(g.num_states() == 40u * 6u * 40u * 6u * 6u);
  CHECK(g.num_actions(Agent::kRobot) == 6);
  CHECK(g.num_actions(Agent::kHuman) == 3);
  for (StateId s = 0; s < g.num_states(); ++s) {
    const JointState js = g.from_index(s);
    REQUIRE(g.to_index(js) == s);
    REQUIRE(g.compose(g.decompose(s)) == s);
    REQUIRE(g.is_valid(js));
  }
}

TEST_CASE("table step equals the snapped Euler step and stays on the grid") {
  const GameModel g(fixtures::default_game());
  const int nr = g.num_actions(Agent::kRobot), nh = g.num_actions(Agent::kHuman);
  for (StateId s = 0; s < g.num_states(); ++s) {
    const JointState js = g.from_index(s);
    for (int a = 0; a < nr; ++a)
      for (int h = 0; h < nh; ++h) {
        const StateId n = g.step(s, a, h);
        REQUIRE(n < g.num_states());
        REQUIRE(n == g.to_index(g.step_dynamics(js, g.action_pair(a, h), g.dt())));
      }
  }
}

TEST_CASE("worked transition from the default start") {
  const GameModel g(fixtures::default_game());
  const JointState s{12.0, 0.0, 12.0, 12.0, 12.0};
  // Robot: accelerate and move up; human: brake.
  const int a = 2 * 2 + 1, h = 0;
  CHECK(g.robot_action(a).accel == 8.0);
  CHECK(g.robot_action(a).lateral == doctest::Approx(1.44));
  const JointState n = g.from_index(g.step(g.to_index(s), a, h));
  CHECK(n.x_r == doctest::Approx(18.0));
  CHECK(n.y_r == doctest::Approx(0.72));
  CHECK(n.x_h == doctest::Approx(18.0));
  CHECK(n.v_r == doctest::Approx(16.0));
  CHECK(n.v_h == doctest::Approx(8.0));
  // Speeds saturate at the axis bounds.
  const JointState fast = g.step_dynamics({0, 0, 40, 20, 0}, g.action_pair(4, 0), g.dt());
  CHECK(fast.v_r == 20.0);
  CHECK(fast.v_h == 0.0);
}

TEST_CASE("safe set examples") {
  const GameModel g(fixtures::default_game());
  CHECK(g.is_safe(JointState{30, 0.0, 30, 0, 0}));
  CHECK_FALSE(g.is_safe(JointState{30, 1.8, 30, 0, 0}));
  CHECK_FALSE(g.is_safe(JointState{30, 3.6, 36, 0, 0}));
  CHECK(g.is_safe(JointState{30, 3.6, 37, 0, 0}));
  CHECK(g.is_safe(JointState{30, 1.44, 30, 0, 0}));
  CHECK_FALSE(g.is_safe(JointState{30, 2.16, 30, 0, 0}));
}

TEST_CASE("features and absorbing states") {
  const GameModel g(fixtures::default_game());
  const auto f = g.feature_vector(JointState{10, 2.16, 40, 8, 20});
  CHECK(f[kCollision] == 0.0);
  CHECK(f[kRobotSpeed] == doctest::Approx(0.4));
  CHECK(f[kHumanSpeed] == doctest::Approx(1.0));
  CHECK(f[kTargetLane] == 1.0);
  CHECK(f[kMerged] == 0.0);
  CHECK(g.feature_vector(JointState{10, 1.44, 40, 8, 20})[kTargetLane] == 0.0);
  CHECK(g.feature_vector(JointState{10, 3.6, 40, 8, 20})[kMerged] == 1.0);

  const auto af = g.action_features(g.action_pair(1, 0));
  CHECK(af[kRobotAccelEffort] == doctest::Approx(1.0));
  CHECK(af[kRobotLateralEffort] == doctest::Approx(1.0));
  CHECK(af[kHumanAccelEffort] == doctest::Approx(1.0));
  const auto idle = g.action_features(g.action_pair(2, 1));
  for (double x : idle) CHECK(x == 0.0);

  CHECK(g.is_absorbing(g.to_index({10, 3.6, 40, 8, 20})));
  CHECK(g.is_absorbing(g.to_index({78, 0, 40, 8, 20})));
  CHECK(g.is_absorbing(g.to_index({30, 2.16, 30, 8, 8})));
  CHECK_FALSE(g.is_absorbing(g.to_index({30, 0, 30, 8, 8})));

  const StateId merged = g.to_index({10, 3.6, 40, 8, 20});
  for (int a = 0; a < g.num_actions(Agent::kRobot); ++a)
    CHECK(g.action_valid(Agent::kRobot, merged, a) == (g.robot_action(a).lateral == 0.0));
  CHECK_FALSE(g.action_valid(Agent::kHuman, merged, 3));
}

TEST_CASE("reward is linear in the weights") {
  const GameModel g(fixtures::small_config().game);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<StateId> pick(0, static_cast<StateId>(g.num_states() - 1));
  for (int trial = 0; trial < 200; ++trial) {
    RewardWeights w1, w2;
    for (double& x : w1.state) x = u(rng);
    for (double& x : w1.action) x = u(rng);
    for (double& x : w2.state) x = u(rng);
    for (double& x : w2.action) x = u(rng);
    const double c = u(rng);
    RewardWeights wc = w1;
    for (double& x : wc.state) x *= c;
    for (double& x : wc.action) x *= c;
    const StateId s = pick(rng);
    const int a = trial % g.num_actions(Agent::kRobot), h = trial % g.num_actions(Agent::kHuman);
    CHECK(g.transition_reward(a, h, s, w1 + w2) ==
          doctest::Approx(g.transition_reward(a, h, s, w1) + g.transition_reward(a, h, s, w2)));
    CHECK(g.transition_reward(a, h, s, wc) == doctest::Approx(c * g.transition_reward(a, h, s, w1)));

    const auto f = g.feature_vector(s);
    double dot = 0.0;
    for (int i = 0; i < kNumStateFeatures; ++i) dot += w1.state[i] * f[i];
    CHECK(g.reward(s, w1) == doctest::Approx(dot));
  }
}

TEST_CASE("deactivating the safety feature drops only the collision term") {
  const GameModel g(fixtures::default_game());
  RewardWeights w = g.weights(Agent::kRobot);
  const StateId crash = g.to_index({30, 2.16, 30, 8, 8});
  const double on = g.reward(crash, w);
  w.deactivate_safety_feature = true;
  CHECK(g.reward(crash, w) == doctest::Approx(on - w.state[kCollision]));
  const StateId clear = g.to_index({30, 0, 50, 8, 8});
  CHECK(g.reward(clear, w) == doctest::Approx(g.reward(clear, g.weights(Agent::kRobot))));
}
