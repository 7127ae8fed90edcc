#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "belief.hpp"
#include "config.hpp"
#include "game_model.hpp"
#include "json.hpp"
#include "qlk_solver.hpp"
#include "runtime.hpp"

namespace fixtures {

// 4x2x4x2x2 grid: two lateral cells, so one lateral step completes a merge.
inline nlohmann::json mini_doc() {
  return nlohmann::json::parse(R"({
    "name": "mini",
    "grid": {
      "x_robot": {"min": 0, "max": 6, "cells": 4},
      "y_robot": {"min": 0, "max": 3.6, "cells": 2},
      "x_human": {"min": 0, "max": 6, "cells": 4},
      "v_robot": {"min": 0, "max": 4, "cells": 2},
      "v_human": {"min": 0, "max": 4, "cells": 2}
    },
    "dt": 0.5,
    "geometry": {"lane_width": 3.6, "car_length": 3, "car_width": 2},
    "actions": {"accelerations": [-8, 0, 8], "lateral_speeds": [0, 7.2]},
    "solver": {"k_max": 2, "lambdas": [0.5, 1.0], "tolerance": 1e-9},
    "scenario": {"initial": {"x_r": 0, "y_r": 0, "x_h": 0, "v_r": 4, "v_h": 4}, "episode_cap": 12}
  })");
}

// 8x3x8x3x3 grid, large enough for episodes with a real merge decision.
inline nlohmann::json small_doc() {
  return nlohmann::json::parse(R"({
    "name": "small",
    "grid": {
      "x_robot": {"min": 0, "max": 28, "cells": 8},
      "y_robot": {"min": 0, "max": 3.6, "cells": 3},
      "x_human": {"min": 0, "max": 28, "cells": 8},
      "v_robot": {"min": 0, "max": 8, "cells": 3},
      "v_human": {"min": 0, "max": 8, "cells": 3}
    },
    "dt": 0.5,
    "geometry": {"lane_width": 3.6, "car_length": 4, "car_width": 2},
    "actions": {"accelerations": [-8, 0, 8], "lateral_speeds": [0, 3.6]},
    "solver": {"k_max": 2, "lambdas": [0.5, 1.0]},
    "planner": {"budget_ms": 0, "max_simulations": 300},
    "scenario": {"initial": {"x_r": 4, "y_r": 0, "x_h": 4, "v_r": 4, "v_h": 4},
                 "episode_cap": 30, "true_theta": {"k": 1, "lambda": 1.0}}
  })");
}

// Game with the shipped default weights.
inline qlk::GameConfig default_game() { return qlk::parse_config(nlohmann::json::object()).game; }

inline qlk::Config mini_config() { return qlk::parse_config(mini_doc()); }
inline qlk::Config small_config() { return qlk::parse_config(small_doc()); }

// Solved runtime for a config, cached per process.
inline std::shared_ptr<const qlk::Runtime> make_runtime(const qlk::Config& cfg) {
  auto model = std::make_shared<const qlk::GameModel>(cfg.game);
  auto tables =
      std::make_shared<const qlk::QlkTables>(qlk::solve_qlk(*model, cfg.solver, qlk::config_hash(cfg)));
  return std::make_shared<const qlk::Runtime>(cfg, model, tables);
}

inline std::shared_ptr<const qlk::Runtime> small_runtime() {
  static const auto rt = make_runtime(small_config());
  return rt;
}

inline std::shared_ptr<const qlk::Runtime> mini_runtime() {
  static const auto rt = make_runtime(mini_config());
  return rt;
}

// Two human types on the mini grid with hand-set action distributions.
// From v_h = 4 braking and coasting reach different successors.
struct TwoTypes {
  qlk::GameModel g{mini_config().game};
  qlk::QlkTables tables;
  std::unique_ptr<qlk::HumanModel> hm;
  qlk::StateId s = g.to_index({0, 0, 4, 0, 4});
  int a_r = 2;  // zero acceleration, no lateral motion

  TwoTypes(std::vector<double> row_a, std::vector<double> row_b) {
    for (auto [lambda, row] : {std::pair{0.5, row_a}, std::pair{1.0, row_b}}) {
      qlk::PolicyTable pt;
      pt.agent = qlk::Agent::kHuman;
      pt.level = 1;
      pt.lambda = lambda;
      pt.num_actions = g.num_actions(qlk::Agent::kHuman);
      pt.probs.assign(g.num_states() * pt.num_actions, 0.0);
      for (qlk::StateId x = 0; x < g.num_states(); ++x) pt.row(x)[1] = 1.0;
      std::copy(row.begin(), row.end(), pt.row(s).begin());
      tables.policies.push_back(std::move(pt));
    }
    hm = std::make_unique<qlk::HumanModel>(g, tables, qlk::LatentSpace({{1, 0.5}, {1, 1.0}}));
  }
  qlk::StateId succ(int a_h) const { return g.step(s, a_r, a_h); }
};

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(QLK_TEST_DATA_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
