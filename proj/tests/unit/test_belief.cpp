#include <cmath>
#include <map>
#include <random>

#include "belief.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace qlk;

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double z = 0.0;
  for (double& x : p) z += (x = e(rng));
  for (double& x : p) x /= z;
  return p;
}

}  // namespace

TEST_CASE("transition probabilities sum human actions per successor") {
  fixtures::TwoTypes t({0.6, 0.4, 0.0}, {0.0, 1.0, 0.0});
  REQUIRE(t.succ(0) != t.succ(1));
  CHECK(transition_prob(*t.hm, t.s, 0, t.a_r, t.succ(0), 0) == doctest::Approx(0.6));
  CHECK(transition_prob(*t.hm, t.s, 0, t.a_r, t.succ(1), 0) == doctest::Approx(0.4));
  CHECK(transition_prob(*t.hm, t.s, 0, t.a_r, t.succ(0), 1) == 0.0);
  CHECK(transition_prob(*t.hm, t.s, 1, t.a_r, t.succ(1), 1) == 1.0);
  CHECK(transition_prob(*t.hm, t.s, 1, t.a_r, t.succ(0), 1) == 0.0);
}

TEST_CASE("two-type prediction, observation and update") {
  fixtures::TwoTypes t({0.8, 0.2, 0.0}, {0.2, 0.8, 0.0});
  const Belief b = Belief::uniform(t.s, 2);
  const PredictedBelief pred = predict_belief(*t.hm, b, t.a_r);
  CHECK(pred.total() == doctest::Approx(1.0));
  std::map<std::pair<StateId, int>, double> joint;
  for (const auto& e : pred.entries) joint[{e.state, e.theta}] += e.p;
  CHECK(joint[{t.succ(0), 0}] == doctest::Approx(0.4));
  CHECK(joint[{t.succ(1), 0}] == doctest::Approx(0.1));
  CHECK(joint[{t.succ(0), 1}] == doctest::Approx(0.1));
  CHECK(joint[{t.succ(1), 1}] == doctest::Approx(0.4));
  const auto obs = pred.observation_distribution();
  REQUIRE(obs.size() == 2);
  CHECK(obs[0].second == doctest::Approx(0.5));
  CHECK(obs[1].second == doctest::Approx(0.5));

  CHECK(observation_prob(*t.hm, t.succ(0), b, t.a_r) == doctest::Approx(0.5));
  CHECK(observation_prob(*t.hm, t.s, b, t.a_r) == 0.0);

  const Belief post = update_belief(*t.hm, b, t.a_r, t.succ(0));
  CHECK(post.state == t.succ(0));
  CHECK(post.latent[0] == doctest::Approx(0.8));
  CHECK(post.latent[1] == doctest::Approx(0.2));

  CHECK(entropy(b) == doctest::Approx(std::log(2.0)));
  CHECK(entropy(post) == doctest::Approx(0.5004).epsilon(1e-4));
  CHECK(info_gain(*t.hm, b, t.a_r) == doctest::Approx(0.1927).epsilon(1e-3));
  CHECK(info_gain(*t.hm, b, t.a_r) ==
        doctest::Approx(std::log(2.0) + 0.8 * std::log(0.8) + 0.2 * std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("update: degenerate priors and likelihoods") {
  fixtures::TwoTypes t({0.8, 0.2, 0.0}, {0.2, 0.8, 0.0});
  const Belief point{t.s, {1.0, 0.0}};
  const Belief post = update_belief(*t.hm, point, t.a_r, t.succ(1));
  CHECK(post.latent[0] == 1.0);
  CHECK(post.latent[1] == 0.0);
  CHECK(info_gain(*t.hm, point, t.a_r) == doctest::Approx(0.0));
  CHECK(entropy(point) == 0.0);

  fixtures::TwoTypes same({0.3, 0.7, 0.0}, {0.3, 0.7, 0.0});
  const Belief prior{same.s, {0.35, 0.65}};
  const Belief p2 = update_belief(*same.hm, prior, same.a_r, same.succ(0));
  CHECK(p2.latent[0] == doctest::Approx(0.35));
  CHECK(info_gain(*same.hm, prior, same.a_r) == doctest::Approx(0.0).epsilon(1e-12));

  try {
    update_belief(*t.hm, point, t.a_r, t.s);
    FAIL("expected ZeroLikelihoodError");
  } catch (const ZeroLikelihoodError& e) {
    CHECK(e.code() == ErrorCode::kZeroLikelihood);
    CHECK(e.observed() == t.s);
    CHECK(e.robot_action() == t.a_r);
    CHECK(e.prior().latent == point.latent);
  }
}

TEST_CASE("floor keeps every type alive") {
  fixtures::TwoTypes t({1.0, 0.0, 0.0}, {0.5, 0.5, 0.0});
  const Belief post = update_belief(*t.hm, Belief::uniform(t.s, 2), t.a_r, t.succ(1), 0.01);
  CHECK(post.latent[0] > 0.0);
  CHECK(post.latent[0] + post.latent[1] == doctest::Approx(1.0));
}

TEST_CASE("belief reward weights successor rewards") {
  fixtures::TwoTypes t({0.5, 0.5, 0.0}, {0.5, 0.5, 0.0});
  const Belief b = Belief::uniform(t.s, 2);
  RewardWeights w;
  CHECK(belief_reward(*t.hm, b, t.a_r, w) == 0.0);
  // Human speed feature is 0 after braking and 1 after coasting.
  w.state[kHumanSpeed] = 2.0;
  CHECK(belief_reward(*t.hm, b, t.a_r, w) == doctest::Approx(1.0));
  w.state[kHumanSpeed] = 0.0;
  w.action[kRobotAccelEffort] = -3.0;
  // Braking robot: comfort term applies to every branch.
  CHECK(belief_reward(*t.hm, b, 0, w) == doctest::Approx(-3.0));
  const Belief point{t.s, {1.0, 0.0}};
  fixtures::TwoTypes det({0.0, 1.0, 0.0}, {0.0, 1.0, 0.0});
  const RewardWeights& rw = det.g.weights(Agent::kRobot);
  CHECK(belief_reward(*det.hm, point, det.a_r, rw) ==
        doctest::Approx(det.g.transition_reward(det.a_r, 1, det.succ(1), rw)));
}

TEST_CASE("entropy examples") {
  const std::vector<double> six(6, 1.0 / 6.0);
  CHECK(entropy(six) == doctest::Approx(std::log(6.0)));
  CHECK(entropy(six) == doctest::Approx(1.7918).epsilon(1e-4));
  const std::vector<double> p{0.8, 0.2};
  CHECK(entropy(p) == doctest::Approx(0.5004).epsilon(1e-4));
  const std::vector<double> q{0.0, 1.0};
  CHECK(entropy(q) == 0.0);
}

TEST_CASE("belief properties on the small game") {
  const auto rt = fixtures::small_runtime();
  const HumanModel& hm = rt->human_model();
  const GameModel& g = rt->model();
  const std::size_t nt = hm.space().size();
  REQUIRE(nt == 4);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<StateId> pick(0, static_cast<StateId>(g.num_states() - 1));
  int checked = 0;
  while (checked < 300) {
    const StateId s = pick(rng);
    if (g.is_absorbing(s)) continue;
    ++checked;
    const Belief b{s, random_simplex(rng, nt)};
    const int a = checked % g.num_actions(Agent::kRobot);
    const PredictedBelief pred = predict_belief(hm, b, a);
    CHECK(pred.total() == doctest::Approx(1.0).epsilon(1e-9));

    // Static latents.
    const auto lm = pred.latent_marginal(nt);
    for (std::size_t i = 0; i < nt; ++i) CHECK(lm[i] == doctest::Approx(b.latent[i]).epsilon(1e-9));

    // Mixing the posteriors by observation probability gives back the prediction.
    std::map<std::pair<StateId, int>, double> mix, direct;
    for (const auto& e : pred.entries) direct[{e.state, e.theta}] += e.p;
    double obs_total = 0.0;
    for (const auto& [o, po] : pred.observation_distribution()) {
      CHECK(observation_prob(hm, o, b, a) == doctest::Approx(po).epsilon(1e-12));
      obs_total += po;
      const Belief post = update_belief(hm, b, a, o);
      double z = 0.0;
      for (double x : post.latent) z += x;
      CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
      for (std::size_t i = 0; i < nt; ++i)
        if (po * post.latent[i] > 0.0) mix[{o, static_cast<int>(i)}] += po * post.latent[i];
    }
    CHECK(obs_total == doctest::Approx(1.0).epsilon(1e-9));
    for (const auto& [key, p] : direct) CHECK(std::abs(mix[key] - p) < 1e-9);
    for (const auto& [key, p] : mix) CHECK(std::abs(direct[key] - p) < 1e-9);

    CHECK(info_gain(hm, b, a) >= -1e-9);
    CHECK(entropy(b) <= std::log(static_cast<double>(nt)) + 1e-12);
  }
}

TEST_CASE("belief snapshot json") {
  const auto rt = fixtures::small_runtime();
  const auto& g = rt->model();
  const Belief b = Belief::uniform(g.to_index(rt->config().scenario.initial), 4);
  const auto j = to_json(g, rt->human_model().space(), b);
  CHECK(j["state"]["x_r"] == 4.0);
  REQUIRE(j["latent"].size() == 4);
  CHECK(j["latent"][0]["k"] == 1);
  CHECK(j["latent"][0]["lambda"] == 0.5);
  CHECK(j["latent"][0]["p"].get<double>() == doctest::Approx(0.25));
}
