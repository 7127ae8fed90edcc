#include <fstream>

#include "doctest.h"
#include "error.hpp"
#include "fixtures.hpp"

using namespace qlk;
using json = nlohmann::json;

namespace {

std::filesystem::path shipped(const std::string& name) {
  return std::filesystem::path(QLK_SOURCE_DIR) / "configs" / name;
}

void expect_config_error(const char* text, const std::string& fragment) {
  try {
    parse_config(json::parse(text));
    FAIL("expected ConfigError for " << text);
  } catch (const ConfigError& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
  }
}

}  // namespace

TEST_CASE("empty document gives the documented defaults") {
  const Config c = parse_config(json::object());
  CHECK(c.name == "default");
  CHECK(c.game.grid.x_robot.cells == 40);
  CHECK(c.game.grid.y_robot.cells == 6);
  CHECK(c.game.dt == 0.5);
  CHECK(c.game.actions.accelerations == std::vector<double>{-8, 0, 8});
  CHECK(c.game.robot_weights.state[kCollision] == -1000.0);
  CHECK(c.game.human_weights.state[kHumanSpeed] == 30.0);
  CHECK(c.solver.k_max == 2);
  CHECK(c.solver.level0 == Level0Mode::kNeverYield);
  CHECK(c.planner.horizon == 8);
  CHECK(c.planner.risk_per_step == doctest::Approx(1.0 / 160.0));
  CHECK_FALSE(c.planner.exploration.has_value());
  CHECK(c.planner.budget_ms == 125.0);
  CHECK(c.scenario.true_theta.level == 1);
  CHECK(c.service.port == 8080);
}

TEST_CASE("unknown keys and bad values are rejected") {
  expect_config_error(R"({"grdi": {}})", "unknown key 'grdi'");
  expect_config_error(R"({"planner": {"horizn": 4}})", "unknown key 'horizn'");
  expect_config_error(R"({"rewards": {"robot": {"comfort": 1}}})", "unknown feature 'comfort'");
  expect_config_error(R"({"grid": {"x_robot": {"min": 5, "max": 1, "cells": 3}}})", "max must exceed min");
  expect_config_error(R"({"grid": {"v_human": {"min": 0, "max": 1, "cells": 0}}})", "cells");
  expect_config_error(R"({"dt": 0})", "dt");
  expect_config_error(R"({"actions": {"lateral_speeds": []}})", "non-empty");
  expect_config_error(R"({"solver": {"level0": "polite"}})", "level0");
  expect_config_error(R"({"solver": {"k_max": 0}})", "k_max");
  expect_config_error(R"({"planner": {"risk_per_step": 0.01}})", "risk_total");
  expect_config_error(R"({"planner": {"budget_ms": 0}})", "budget_ms");
  expect_config_error(R"({"planner": {"rollout": "greedy"}})", "rollout");
  expect_config_error(R"({"planner": {"horizon": "long"}})", "planner.horizon");
  expect_config_error(R"({"scenario": {"controller": "human"}})", "controller");
  expect_config_error(R"({"scenario": {"episode_cap": 0}})", "episode_cap");
  expect_config_error(R"([1, 2])", "expected an object");
}

TEST_CASE("normalized json round trips") {
  const Config a = fixtures::small_config();
  const json ja = to_json(a);
  const Config b = parse_config(ja);
  CHECK(to_json(b) == ja);
  CHECK(config_hash(a) == config_hash(b));

  Config e = a;
  e.planner.exploration = 12.5;
  CHECK(parse_config(to_json(e)).planner.exploration == 12.5);
}

TEST_CASE("table hash covers the game and solver only") {
  const Config base = fixtures::small_config();
  const auto h = config_hash(base);
  CHECK(hash_hex(h).size() == 16);

  Config c = base;
  c.planner.horizon = 3;
  c.planner.eta0 = 0.0;
  c.scenario.seed = 99;
  c.service.port = 1;
  c.name = "renamed";
  CHECK(config_hash(c) == h);

  c = base;
  c.game.robot_weights.state[kMerged] += 1.0;
  CHECK(config_hash(c) != h);
  c = base;
  c.solver.lambdas.push_back(2.0);
  CHECK(config_hash(c) != h);
  c = base;
  c.game.grid.x_human.cells += 1;
  CHECK(config_hash(c) != h);
  c = base;
  c.game.geometry.car_length = 5.0;
  CHECK(config_hash(c) != h);
}

TEST_CASE("load_config accepts comments and reports io errors") {
  const auto dir = fixtures::scratch_dir("config_load");
  const auto path = dir / "c.json";
  std::ofstream(path) << "// desk setup\n{\"name\": \"x\", /* inline */ \"dt\": 0.25}\n";
  const Config c = load_config(path);
  CHECK(c.name == "x");
  CHECK(c.game.dt == 0.25);

  std::ofstream(dir / "broken.json") << "{\"dt\": ";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  try {
    load_config(dir / "absent.json");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("shipped configs parse") {
  const Config def = load_config(shipped("default.json"));
  CHECK(def.service.static_dir == "../web");
  Config def_norm = def;
  def_norm.service.static_dir = "web";
  CHECK(to_json(def_norm) == to_json(parse_config(json::object())));

  const Config plan = load_config(shipped("planner.json"));
  CHECK(plan.name == "planner");
  CHECK(plan.game.robot_weights.state[kRobotSpeed] == 10.0);
  CHECK(plan.game.robot_weights.state[kMerged] == 400.0);
  CHECK(config_hash(plan) != config_hash(def));
  // Everything but the robot's weights matches the default.
  Config p2 = plan;
  p2.name = def.name;
  p2.game.robot_weights = def.game.robot_weights;
  CHECK(to_json(p2) == to_json(def));

  const Config desk = load_config(shipped("desk.json"));
  CHECK(GameModel(desk.game).num_states() == 8u * 3u * 8u * 3u * 3u);
}
