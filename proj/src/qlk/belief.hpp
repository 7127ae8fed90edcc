#pragma once

#include <span>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "game_model.hpp"
#include "json.hpp"
#include "qlk_solver.hpp"
#include "types.hpp"

namespace qlk {

// Finite hypothesis space Theta over the human's (level, rationality).
class LatentSpace {
 public:
  LatentSpace() = default;
  explicit LatentSpace(std::vector<LatentState> types);
  // {1..k_max} x Lambda, plus level 0 when configured.
  static LatentSpace from_solver(const SolverConfig& cfg);

  std::size_t size() const { return types_.size(); }
  const LatentState& operator[](std::size_t i) const { return types_[i]; }
  const std::vector<LatentState>& types() const { return types_; }
  // -1 when absent.
  int index_of(const LatentState& t) const;

 private:
  std::vector<LatentState> types_;
};

// Human policy per hypothesis, bound to a set of solved tables.
class HumanModel {
 public:
  HumanModel(const GameModel& model, const QlkTables& tables, LatentSpace space);

  const GameModel& game() const { return *model_; }
  const QlkTables& tables() const { return *tables_; }
  const LatentSpace& space() const { return space_; }
  std::span<const double> policy(std::size_t theta, StateId s) const {
    return policies_[theta]->row(s);
  }

 private:
  const GameModel* model_;
  const QlkTables* tables_;
  LatentSpace space_;
  std::vector<const PolicyTable*> policies_;
};

// Root form: the observed state is exact; uncertainty is only over Theta.
struct Belief {
  StateId state = 0;
  std::vector<double> latent;

  static Belief uniform(StateId s, std::size_t num_types);
};

// Predicted form: sparse mass over (state, theta) pairs.
struct PredictedEntry {
  StateId state;
  int theta;
  double p;
};

struct PredictedBelief {
  std::vector<PredictedEntry> entries;

  double total() const;
  // Physical marginal, one entry per distinct successor (ascending id).
  std::vector<std::pair<StateId, double>> observation_distribution() const;
  std::vector<double> latent_marginal(std::size_t num_types) const;
};

class ZeroLikelihoodError : public Error {
 public:
  ZeroLikelihoodError(const std::string& what, Belief prior, int robot_action, StateId observed)
      : Error(ErrorCode::kZeroLikelihood, what),
        prior_(std::move(prior)),
        robot_action_(robot_action),
        observed_(observed) {}
  const Belief& prior() const { return prior_; }
  int robot_action() const { return robot_action_; }
  StateId observed() const { return observed_; }

 private:
  Belief prior_;
  int robot_action_;
  StateId observed_;
};

// P((s', theta') | (s, theta), a_R) under static latents.
double transition_prob(const HumanModel& hm, StateId s, int theta, int robot_action, StateId next,
                       int next_theta);

PredictedBelief predict_belief(const HumanModel& hm, const Belief& b, int robot_action);

double observation_prob(const HumanModel& hm, StateId o, const Belief& b, int robot_action);

// Posterior after observing o. `floor` > 0 lifts every latent probability to
// at least floor before renormalising.
Belief update_belief(const HumanModel& hm, const Belief& b, int robot_action, StateId o,
                     double floor = 0.0);
Belief condition(const PredictedBelief& pred, StateId o, std::size_t num_types,
                 double floor = 0.0);

// Expected one-step robot reward; includes the joint-action comfort terms.
double belief_reward(const HumanModel& hm, const Belief& b, int robot_action,
                     const RewardWeights& w);

double entropy(std::span<const double> p);
double entropy(const Belief& b);
double entropy(const PredictedBelief& b);

double info_gain(const HumanModel& hm, const Belief& b, int robot_action);

// Probability mass on states that fail is_safe.
double compute_risk(const GameModel& model, const PredictedBelief& b);

// {state, latent: [{k, lambda, p}]}
nlohmann::json to_json(const GameModel& model, const LatentSpace& space, const Belief& b);

}  // namespace qlk
