#include "belief.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace qlk {

LatentSpace::LatentSpace(std::vector<LatentState> types) : types_(std::move(types)) {
  if (types_.empty()) throw ConfigError("latent space must not be empty");
}

LatentSpace LatentSpace::from_solver(const SolverConfig& cfg) {
  std::vector<LatentState> t;
  if (cfg.include_level0_hypothesis) t.push_back({0, kLevel0Lambda});
  for (int k = 1; k <= cfg.k_max; ++k)
    for (double l : cfg.lambdas) t.push_back({k, l});
  return LatentSpace(std::move(t));
}

int LatentSpace::index_of(const LatentState& t) const {
  for (std::size_t i = 0; i < types_.size(); ++i) {
    const auto& u = types_[i];
    if (u.level == t.level && (u.level == 0 || std::abs(u.lambda - t.lambda) < 1e-12))
      return static_cast<int>(i);
  }
  return -1;
}

HumanModel::HumanModel(const GameModel& model, const QlkTables& tables, LatentSpace space)
    : model_(&model), tables_(&tables), space_(std::move(space)) {
  for (const auto& t : space_.types())
    policies_.push_back(&tables.policy(Agent::kHuman, t.level, t.lambda));
}

Belief Belief::uniform(StateId s, std::size_t num_types) {
  return Belief{s, std::vector<double>(num_types, 1.0 / static_cast<double>(num_types))};
}

double PredictedBelief::total() const {
  double t = 0.0;
  for (const auto& e : entries) t += e.p;
  return t;
}

std::vector<std::pair<StateId, double>> PredictedBelief::observation_distribution() const {
  std::map<StateId, double> m;
  for (const auto& e : entries) m[e.state] += e.p;
  return {m.begin(), m.end()};
}

std::vector<double> PredictedBelief::latent_marginal(std::size_t num_types) const {
  std::vector<double> m(num_types, 0.0);
  for (const auto& e : entries) m[e.theta] += e.p;
  return m;
}

double transition_prob(const HumanModel& hm, StateId s, int theta, int robot_action, StateId next,
                       int next_theta) {
  if (theta != next_theta) return 0.0;
  const auto pi = hm.policy(theta, s);
  double p = 0.0;
  for (int ah = 0; ah < static_cast<int>(pi.size()); ++ah)
    if (hm.game().step(s, robot_action, ah) == next) p += pi[ah];
  return p;
}

PredictedBelief predict_belief(const HumanModel& hm, const Belief& b, int robot_action) {
  PredictedBelief out;
  for (std::size_t th = 0; th < b.latent.size(); ++th) {
    if (b.latent[th] <= 0.0) continue;
    const auto pi = hm.policy(th, b.state);
    for (int ah = 0; ah < static_cast<int>(pi.size()); ++ah) {
      if (pi[ah] <= 0.0) continue;
      const double p = b.latent[th] * pi[ah];
      if (p <= 0.0) continue;  // underflow
      const StateId next = hm.game().step(b.state, robot_action, ah);
      auto it = std::find_if(out.entries.begin(), out.entries.end(), [&](const PredictedEntry& e) {
        return e.state == next && e.theta == static_cast<int>(th);
      });
      if (it != out.entries.end())
        it->p += p;
      else
        out.entries.push_back({next, static_cast<int>(th), p});
    }
  }
  return out;
}

double observation_prob(const HumanModel& hm, StateId o, const Belief& b, int robot_action) {
  double p = 0.0;
  for (const auto& e : predict_belief(hm, b, robot_action).entries)
    if (e.state == o) p += e.p;
  return p;
}

Belief condition(const PredictedBelief& pred, StateId o, std::size_t num_types, double floor) {
  Belief post{o, std::vector<double>(num_types, 0.0)};
  double z = 0.0;
  for (const auto& e : pred.entries) {
    if (e.state != o) continue;
    post.latent[e.theta] += e.p;
    z += e.p;
  }
  if (!(z > 0.0)) throw Error(ErrorCode::kZeroLikelihood, "observation has zero likelihood");
  for (double& p : post.latent) p /= z;
  if (floor > 0.0) {
    double s = 0.0;
    for (double& p : post.latent) s += (p = std::max(p, floor));
    for (double& p : post.latent) p /= s;
  }
  return post;
}

Belief update_belief(const HumanModel& hm, const Belief& b, int robot_action, StateId o,
                     double floor) {
  const PredictedBelief pred = predict_belief(hm, b, robot_action);
  try {
    return condition(pred, o, b.latent.size(), floor);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kZeroLikelihood) throw;
    const JointState js = hm.game().from_index(o);
    std::string msg = "zero-likelihood observation (x_r=" + std::to_string(js.x_r) +
                      ", y_r=" + std::to_string(js.y_r) + ", x_h=" + std::to_string(js.x_h) +
                      ", v_r=" + std::to_string(js.v_r) + ", v_h=" + std::to_string(js.v_h) +
                      ") after robot action " + std::to_string(robot_action);
    throw ZeroLikelihoodError(msg, b, robot_action, o);
  }
}

double belief_reward(const HumanModel& hm, const Belief& b, int robot_action,
                     const RewardWeights& w) {
  const GameModel& g = hm.game();
  double r = 0.0;
  for (std::size_t th = 0; th < b.latent.size(); ++th) {
    if (b.latent[th] <= 0.0) continue;
    const auto pi = hm.policy(th, b.state);
    for (int ah = 0; ah < static_cast<int>(pi.size()); ++ah) {
      if (pi[ah] <= 0.0) continue;
      r += b.latent[th] * pi[ah] *
           g.transition_reward(robot_action, ah, g.step(b.state, robot_action, ah), w);
    }
  }
  return r;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double entropy(const Belief& b) { return entropy(b.latent); }

double entropy(const PredictedBelief& b) {
  double h = 0.0;
  for (const auto& e : b.entries)
    if (e.p > 0.0) h -= e.p * std::log(e.p);
  return h;
}

double info_gain(const HumanModel& hm, const Belief& b, int robot_action) {
  const PredictedBelief pred = predict_belief(hm, b, robot_action);
  double expected = 0.0;
  for (const auto& [o, po] : pred.observation_distribution()) {
    if (po <= 0.0) continue;
    expected += po * entropy(condition(pred, o, b.latent.size()));
  }
  return entropy(b) - expected;
}

double compute_risk(const GameModel& model, const PredictedBelief& b) {
  double r = 0.0;
  for (const auto& e : b.entries)
    if (!model.is_safe(e.state)) r += e.p;
  return r;
}

nlohmann::json to_json(const GameModel& model, const LatentSpace& space, const Belief& b) {
  nlohmann::json latent = nlohmann::json::array();
  for (std::size_t i = 0; i < space.size(); ++i)
    latent.push_back({{"k", space[i].level}, {"lambda", space[i].lambda}, {"p", b.latent[i]}});
  return {{"state", to_json(model.from_index(b.state))}, {"latent", latent}};
}

}  // namespace qlk
