#include "planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace qlk {

namespace {

using Clock = std::chrono::steady_clock;

// Samples an index from a discrete distribution given as (key, p) pairs.
template <typename Pairs>
std::size_t sample_index(const Pairs& dist, std::mt19937_64& rng) {
  double total = 0.0;
  for (const auto& kv : dist) total += kv.second;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i].second;
    if (u < acc) return i;
  }
  return dist.size() - 1;
}

double level_value(const HumanModel& hm, int human_level, StateId s) {
  return hm.tables().value(Agent::kRobot, human_level + 1, 1.0).values[s];
}

}  // namespace

double adaptive_eta(const Belief& b, double eta0) {
  if (b.latent.size() < 2) return 0.0;
  return eta0 * entropy(b) / std::log(static_cast<double>(b.latent.size()));
}

double augmented_reward(const HumanModel& hm, const Belief& b, int robot_action, double eta) {
  const double r = belief_reward(hm, b, robot_action, hm.game().weights(Agent::kRobot));
  if (eta == 0.0) return r;
  return r + eta * info_gain(hm, b, robot_action);
}

double terminal_value(const HumanModel& hm, const Belief& b) {
  double v = 0.0;
  for (std::size_t th = 0; th < b.latent.size(); ++th)
    if (b.latent[th] > 0.0) v += b.latent[th] * level_value(hm, hm.space()[th].level, b.state);
  return v;
}

double terminal_value(const HumanModel& hm, const PredictedBelief& b) {
  const auto latent = b.latent_marginal(hm.space().size());
  const auto states = b.observation_distribution();
  double v = 0.0;
  for (std::size_t th = 0; th < latent.size(); ++th) {
    if (latent[th] <= 0.0) continue;
    double inner = 0.0;
    for (const auto& [s, ps] : states) inner += ps * level_value(hm, hm.space()[th].level, s);
    v += latent[th] * inner;
  }
  return v;
}

int infeasible_fallback(const HumanModel& hm, const Belief& b, std::vector<double>* risks) {
  const GameModel& g = hm.game();
  const int n = g.num_actions(Agent::kRobot);
  std::vector<double> r(n, std::numeric_limits<double>::infinity());
  for (int a = 0; a < n; ++a)
    if (g.action_valid(Agent::kRobot, b.state, a))
      r[a] = compute_risk(g, predict_belief(hm, b, a));
  int best = -1;
  for (int a = 0; a < n; ++a) {
    if (!g.action_valid(Agent::kRobot, b.state, a)) continue;
    if (best < 0) {
      best = a;
      continue;
    }
    const RobotAction ca = g.robot_action(a), cb = g.robot_action(best);
    constexpr double eps = 1e-12;
    if (r[a] < r[best] - eps) {
      best = a;
    } else if (std::abs(r[a] - r[best]) <= eps) {
      if (ca.accel < cb.accel - eps ||
          (std::abs(ca.accel - cb.accel) <= eps && std::abs(ca.lateral) < std::abs(cb.lateral)))
        best = a;
    }
  }
  if (risks) *risks = std::move(r);
  return best;
}

double default_exploration(const GameModel& model) {
  const RewardWeights& w = model.weights(Agent::kRobot);
  double range = 0.0;
  for (int i = 0; i < kNumStateFeatures; ++i) {
    if (i == kCollision && w.deactivate_safety_feature) continue;
    range += std::abs(w.state[i]);
  }
  for (double x : w.action) range += std::abs(x);
  return range > 0.0 ? range : 1.0;
}

nlohmann::json to_json(const GameModel& model, const PlanDiagnostics& d) {
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : d.root_children)
    children.push_back({{"seq", {c.action}}, {"V", c.value}, {"N", c.visits}, {"risk", c.risk}});
  const RobotAction a = model.robot_action(d.chosen);
  return {{"sims", d.simulations},
          {"chosen", d.chosen},
          {"chosen_action", {{"accel", a.accel}, {"lateral", a.lateral}}},
          {"chosen_risk", d.chosen_risk},
          {"root_children", children},
          {"eta", d.eta},
          {"fallback", d.fallback},
          {"elapsed_ms", d.elapsed_ms}};
}

Planner::Planner(const HumanModel& hm, PlannerParams params) : hm_(&hm) { set_params(params); }

void Planner::set_params(const PlannerParams& p) {
  p.validate();
  params_ = p;
  exploration_ = p.exploration ? *p.exploration : default_exploration(hm_->game());
  rng_.seed(p.seed);
}

std::vector<int> Planner::sequence(int node) const {
  std::vector<int> seq;
  for (int n = node; n > 0; n = nodes_[n].parent) seq.push_back(nodes_[n].action);
  std::reverse(seq.begin(), seq.end());
  return seq;
}

double Planner::step_reward(const Belief& b, int action) {
  return augmented_reward(*hm_, b, action, adaptive_eta(b, params_.eta0));
}

Belief Planner::sample_next(const Belief& b, int action, PredictedBelief* pred_out) {
  PredictedBelief pred = predict_belief(*hm_, b, action);
  const auto obs = pred.observation_distribution();
  const StateId o = obs[sample_index(obs, rng_)].first;
  Belief next = condition(pred, o, b.latent.size());
  if (pred_out) *pred_out = std::move(pred);
  return next;
}

void Planner::expand(int node, const Belief& b, int depth) {
  const GameModel& g = hm_->game();
  nodes_[node].expanded = true;
  for (int a = 0; a < g.num_actions(Agent::kRobot); ++a) {
    if (!g.action_valid(Agent::kRobot, b.state, a)) continue;
    const double risk = compute_risk(g, predict_belief(*hm_, b, a));
    if (!(risk < params_.risk_per_step)) {
      if (observer_) observer_->on_prune(sequence(node), a, risk);
      continue;
    }
    Node child;
    child.parent = node;
    child.action = a;
    child.depth = depth + 1;
    child.risk = risk;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(child));
    nodes_[node].children.push_back(id);
    if (observer_) observer_->on_expand(sequence(id), depth + 1, risk);
  }
  nodes_[node].infeasible = nodes_[node].children.empty();
}

int Planner::select_child(int node) {
  const Node& n = nodes_[node];
  const double log_n = std::log(static_cast<double>(std::max<long>(n.visits, 1)));
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c : n.children) {
    const Node& ch = nodes_[c];
    if (ch.visits == 0) return c;
    double score = ch.value + exploration_ * std::sqrt(log_n / static_cast<double>(ch.visits));
    if (ch.infeasible) score -= exploration_;
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

int Planner::sample_rollout_action(const Belief& b, int depth) {
  (void)depth;
  const GameModel& g = hm_->game();
  const int n = g.num_actions(Agent::kRobot);
  if (params_.rollout == RolloutPolicy::kQlk) {
    // Sample a human hypothesis from the belief, then the robot's
    // best-response level against it.
    std::vector<std::pair<int, double>> types;
    for (std::size_t th = 0; th < b.latent.size(); ++th)
      if (b.latent[th] > 0.0) types.emplace_back(static_cast<int>(th), b.latent[th]);
    const int th = types[sample_index(types, rng_)].first;
    const auto& pol =
        hm_->tables().policy(Agent::kRobot, hm_->space()[th].level + 1, 1.0).row(b.state);
    std::vector<std::pair<int, double>> acts;
    for (int a = 0; a < n; ++a)
      if (pol[a] > 0.0) acts.emplace_back(a, pol[a]);
    return acts[sample_index(acts, rng_)].first;
  }
  std::vector<int> feasible, valid;
  for (int a = 0; a < n; ++a) {
    if (!g.action_valid(Agent::kRobot, b.state, a)) continue;
    valid.push_back(a);
    if (compute_risk(g, predict_belief(*hm_, b, a)) < params_.risk_per_step) feasible.push_back(a);
  }
  const auto& pool = feasible.empty() ? valid : feasible;
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng_)];
}

double Planner::rollout(const Belief& b, int depth) {
  if (depth >= params_.horizon) return terminal_value(*hm_, b);
  if (hm_->game().is_absorbing(b.state)) return 0.0;
  const int a = sample_rollout_action(b, depth);
  const double r = step_reward(b, a);
  const Belief next = sample_next(b, a);
  return r + params_.gamma * rollout(next, depth + 1);
}

double Planner::simulate(int node, const Belief& b, int depth) {
  if (depth >= params_.horizon) return terminal_value(*hm_, b);
  if (hm_->game().is_absorbing(b.state)) return 0.0;
  if (!nodes_[node].expanded) {
    expand(node, b, depth);
    return rollout(b, depth);
  }
  if (nodes_[node].children.empty()) return rollout(b, depth);
  const int child = select_child(node);
  const int a = nodes_[child].action;
  const double r = step_reward(b, a);
  const Belief next = sample_next(b, a);
  const double ret = r + params_.gamma * simulate(child, next, depth + 1);
  Node& ch = nodes_[child];
  ch.visits += 1;
  ch.value += (ret - ch.value) / static_cast<double>(ch.visits);
  if (observer_) observer_->on_backup(sequence(child), ret, ch.value, ch.visits);
  return ret;
}

PlanResult Planner::plan(const Belief& b) {
  const auto start = Clock::now();
  const GameModel& g = hm_->game();
  nodes_.clear();
  nodes_.push_back(Node{});
  PlanResult out;
  PlanDiagnostics& d = out.diagnostics;
  d.eta = adaptive_eta(b, params_.eta0);

  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };
  auto timed_out = [&] {
    if (params_.max_simulations > 0 && nodes_[0].visits >= params_.max_simulations) return true;
    return params_.budget_ms > 0.0 && elapsed_ms() >= params_.budget_ms;
  };

  if (!g.is_absorbing(b.state)) {
    // The first simulation only expands the root; keep going until at least
    // one root child carries a return.
    for (;;) {
      const bool any_visited = std::any_of(nodes_[0].children.begin(), nodes_[0].children.end(),
                                           [&](int c) { return nodes_[c].visits > 0; });
      if (any_visited && timed_out()) break;
      if (nodes_[0].expanded && nodes_[0].children.empty()) break;
      simulate(0, b, 0);
      nodes_[0].visits += 1;
    }
  }
  d.simulations = nodes_[0].visits;

  int best = -1;
  for (int c : nodes_[0].children) {
    const Node& ch = nodes_[c];
    d.root_children.push_back({ch.action, ch.value, ch.visits, ch.risk});
    if (ch.visits == 0) continue;
    if (best < 0 || ch.value > nodes_[best].value) best = c;
  }
  if (best >= 0) {
    out.action = nodes_[best].action;
    d.chosen_risk = nodes_[best].risk;
  } else {
    std::vector<double> risks;
    out.action = infeasible_fallback(*hm_, b, &risks);
    d.chosen_risk = risks[out.action];
    d.fallback = !g.is_absorbing(b.state);
  }
  d.chosen = out.action;
  d.elapsed_ms = elapsed_ms();
  return out;
}

}  // namespace qlk
