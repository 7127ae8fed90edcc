#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "sim.hpp"

using namespace qlk;

namespace {

EpisodeSpec small_spec(RobotController ctl, std::uint64_t seed, int id = 0) {
  const auto rt = fixtures::small_runtime();
  EpisodeSpec s = make_spec(rt->config(), ctl, seed, id);
  s.planner.budget_ms = 0;
  s.planner.max_simulations = 150;
  return s;
}

}  // namespace

TEST_CASE("outcome classification and precedence") {
  const GameModel g(fixtures::default_game());
  CHECK(classify_outcome(g, {{10, 0, 10, 8, 8}, {14, 3.6, 14, 8, 8}}) == Outcome::kCollision);
  CHECK(classify_outcome(g, {{10, 0, 40, 8, 8}, {14, 3.6, 44, 8, 8}}) == Outcome::kMerged);

  std::vector<JointState> stuck;
  for (int t = 0; t < 9; ++t) stuck.push_back({10.0 + 4 * t, 1.44, 10.0 + 4 * t, 8, 8});
  CHECK(classify_outcome(g, stuck) == Outcome::kDeadlock);
  // One short of the window is not enough evidence.
  stuck.erase(stuck.begin());
  CHECK(classify_outcome(g, stuck) == Outcome::kTimeout);

  std::vector<JointState> drifting;
  for (int t = 0; t < 9; ++t) drifting.push_back({10.0 + 4 * t, 0, 10.0 + 2 * t, 8, 4});
  CHECK(classify_outcome(g, drifting) == Outcome::kTimeout);

  for (auto o : {Outcome::kMerged, Outcome::kCollision, Outcome::kDeadlock, Outcome::kTimeout})
    CHECK(parse_outcome(to_string(o)) == o);
  CHECK_THROWS_AS(parse_outcome("crashed"), Error);
}

TEST_CASE("near-miss examples") {
  const GameModel g(fixtures::default_game());
  CHECK(is_near_miss(g, {30, 3.6, 40, 8, 8}));
  CHECK(is_near_miss(g, {30, 2.88, 20, 8, 8}));
  CHECK_FALSE(is_near_miss(g, {30, 3.6, 45, 8, 8}));
  CHECK_FALSE(is_near_miss(g, {30, 1.44, 40, 8, 8}));
  // Overlap is a collision, not a near miss.
  CHECK_FALSE(is_near_miss(g, {30, 3.6, 34, 8, 8}));
}

TEST_CASE("time-to-merge and first confident step") {
  EpisodeTrace tr;
  tr.steps.resize(6);
  tr.true_type_prob = {0.25, 0.4, 0.7, 0.85, 0.9, 0.95, 0.97};
  tr.outcome = Outcome::kMerged;
  CHECK(*tr.tm(0.5) == doctest::Approx(3.0));
  CHECK(tr.first_confident_step() == 3);
  CHECK(tr.first_confident_step(0.96) == 6);
  tr.true_type_prob = {0.25, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  CHECK(tr.first_confident_step() == 6);
  tr.outcome = Outcome::kTimeout;
  CHECK_FALSE(tr.tm(0.5).has_value());
}

TEST_CASE("episodes are reproducible and internally consistent") {
  const auto rt = fixtures::small_runtime();
  const GameModel& g = rt->model();
  for (auto ctl : {RobotController::kOurs, RobotController::kBlp1, RobotController::kQlk}) {
    const EpisodeSpec spec = small_spec(ctl, 42);
    const EpisodeTrace a = run_episode(*rt, spec), b = run_episode(*rt, spec);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      CHECK(a.steps[t].robot_action == b.steps[t].robot_action);
      CHECK(a.steps[t].human_action == b.steps[t].human_action);
    }
    CHECK(a.outcome == b.outcome);

    CHECK(static_cast<int>(a.steps.size()) <= spec.scenario.episode_cap);
    CHECK(a.true_type_prob.size() == a.steps.size() + 1);
    std::vector<JointState> visited{a.initial};
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      const auto& r = a.steps[t];
      CHECK(r.state == visited.back());
      CHECK(g.to_index(r.next_state) ==
            g.step(g.to_index(r.state), r.robot_action, r.human_action));
      CHECK(r.belief.state == g.to_index(r.next_state));
      if (t + 1 < a.steps.size()) CHECK_FALSE(g.is_absorbing(g.to_index(r.next_state)));
      visited.push_back(r.next_state);
    }
    CHECK(a.outcome == classify_outcome(g, visited));
    if (ctl != RobotController::kQlk) CHECK(a.max_step_risk < spec.planner.risk_per_step);
  }
}

TEST_CASE("random start places the human within the window") {
  const auto rt = fixtures::small_runtime();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    EpisodeSpec s = small_spec(RobotController::kQlk, seed);
    s.scenario.random_start_m = 8.0;
    const EpisodeTrace tr = run_episode(*rt, s);
    // Snapping moves the draw by at most half a cell.
    CHECK(std::abs(tr.initial.x_h - tr.initial.x_r) <= 8.0 + 0.5 * rt->model().x_human().step());
  }
}

TEST_CASE("batch results match sequential runs in id order") {
  const auto rt = fixtures::small_runtime();
  std::vector<EpisodeSpec> specs;
  for (int i = 0; i < 6; ++i) specs.push_back(small_spec(RobotController::kOurs, 100 + i, 5 - i));
  const auto par = run_batch(*rt, specs, 3);
  REQUIRE(par.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(par[i].spec.id == i);
    const EpisodeTrace seq = run_episode(*rt, specs[5 - i]);
    CHECK(seq.steps.size() == par[i].steps.size());
    CHECK(seq.outcome == par[i].outcome);
  }
}

TEST_CASE("aggregate: success rate over all, time-to-merge over merged") {
  std::vector<EpisodeTrace> traces(4);
  for (int i = 0; i < 4; ++i) {
    traces[i].spec.scenario.controller = RobotController::kOurs;
    traces[i].spec.scenario.true_theta = {1, 0.8};
    traces[i].steps.resize(4 + 2 * i);
    traces[i].true_type_prob.assign(traces[i].steps.size() + 1, 0.5);
  }
  traces[0].outcome = Outcome::kMerged;
  traces[1].outcome = Outcome::kMerged;
  traces[2].outcome = Outcome::kDeadlock;
  traces[3].outcome = Outcome::kCollision;
  traces[1].true_type_prob[2] = 0.9;
  const auto cells = aggregate(traces, 0.5);
  REQUIRE(cells.size() == 1);
  const auto& m = cells[0];
  CHECK(m.episodes == 4);
  CHECK(m.merged == 2);
  CHECK(m.deadlocks == 1);
  CHECK(m.collisions == 1);
  CHECK(m.rs == doctest::Approx(0.5));
  CHECK(m.tm_n == 2);
  CHECK(m.tm_mean == doctest::Approx((2.0 + 3.0) / 2));
  // Censored at episode length: 4, 2, 8, 10.
  CHECK(m.first_confident_mean == doctest::Approx((4 + 2 + 8 + 10) / 4.0));
  CHECK(m.inference_curve.size() == 11);

  const auto j = report_json(cells);
  CHECK(j["cells"][0]["rs"] == 0.5);
  CHECK(report_csv(cells).rfind("controller,k,lambda,episodes", 0) == 0);
  CHECK(curves_csv(cells).find("ours,1,0.8,0,0.5") != std::string::npos);
}

TEST_CASE("trace round trip and replay") {
  const auto rt = fixtures::small_runtime();
  const EpisodeTrace tr = run_episode(*rt, small_spec(RobotController::kBlp1, 7));
  std::stringstream ss;
  write_trace(ss, *rt, tr);
  const std::string text = ss.str();

  std::istringstream lines(text);
  std::string line;
  std::vector<nlohmann::json> recs;
  while (std::getline(lines, line)) recs.push_back(nlohmann::json::parse(line));
  REQUIRE(recs.size() == tr.steps.size() + 2);
  CHECK(recs.front()["type"] == "header");
  CHECK(recs.front()["schema_version"] == kTraceSchemaVersion);
  CHECK(recs.front()["eta0"] == 0.0);
  CHECK(recs.front()["controller"] == "blp1");
  CHECK(recs.back()["type"] == "summary");
  CHECK(recs.back()["outcome"] == to_string(tr.outcome));

  std::istringstream in(text);
  const ReplayResult rr = replay_trace(rt->model(), in);
  CHECK(rr.closed);
  CHECK(rr.rows.size() == tr.steps.size());
  CHECK(rr.outcome == to_string(tr.outcome));
  CHECK(replay_csv(rt->model(), rr).find("match") != std::string::npos);

  // Corrupt one recorded successor.
  REQUIRE(recs.size() > 2);
  recs[1]["next_state"]["x_h"] = recs[1]["next_state"]["x_h"].get<double>() + 8.0;
  std::string bad;
  for (const auto& r : recs) bad += r.dump() + "\n";
  std::istringstream bin(bad);
  CHECK_FALSE(replay_trace(rt->model(), bin).closed);
}
