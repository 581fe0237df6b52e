#pragma once

// Receding-horizon planning under an ensemble model.
//
// A candidate action sequence a_0..a_{H-1} is scored by rolling it out
// under the ensemble-mean transition and accumulating the penalized reward
//
//   sum_k gamma^k [ r(s_k, a_k) - lambda * u(s_k, a_k) ]
//
// and the cross-entropy method searches for the best sequence.

#include "wombet/envs.hpp"
#include "wombet/transition.hpp"
#include "wombet/world_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace wombet {

using RewardFn = std::function<double(const Eigen::VectorXd& state, const Eigen::VectorXd& action)>;

enum class Propagation {
  ensemble_mean,   // s_{k+1} = mean over members of the member means
  sampled_member,  // s_{k+1} = mean of one uniformly drawn member per candidate and step
};

struct PlannerConfig {
  int horizon = 30;  // long enough to see a full pendulum swing-up
  double penalty = 1.0;  // lambda
  int population = 256;
  double elite_fraction = 0.1;
  int iterations = 5;
  double init_std = 0.5;
  double std_floor = 0.05;
  double gamma = 0.99;
  Propagation propagation = Propagation::ensemble_mean;

  int elite_count() const;
};

void validate(const PlannerConfig& cfg);

struct PlanResult {
  Eigen::MatrixXd actions;                 // action_dim x H, best sequence found
  double penalized_return = 0.0;           // of `actions`
  Eigen::MatrixXd mean_actions;            // final sampling mean, used for warm starts
  Eigen::MatrixXd mean_states;             // state_dim x (H + 1), rollout of mean_actions
  std::vector<double> uncertainties;       // u along that rollout
};

// Penalized model return of one sequence. Non-finite rollouts give -inf.
double evaluate_sequence(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0,
                         const Eigen::MatrixXd& actions, double penalty, double gamma);

// Batched scoring: actions[k] is (action_dim x P) for step k.
Eigen::RowVectorXd evaluate_sequences(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0,
                                      const std::vector<Eigen::MatrixXd>& actions, double penalty, double gamma,
                                      Propagation propagation = Propagation::ensemble_mean,
                                      std::mt19937_64* rng = nullptr);

// CEM search. warm_start, if given, is an (action_dim x H) initial mean.
// Throws PlannerFailure if every candidate of an iteration scores -inf.
PlanResult plan(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0, int action_dim,
                const PlannerConfig& cfg, std::uint64_t seed, const Eigen::MatrixXd* warm_start = nullptr);

enum class DatagenMode { real_mpc, synthetic };

inline const char* to_string(DatagenMode m) { return m == DatagenMode::real_mpc ? "real-mpc" : "synthetic"; }

// One MPC episode in the source task. In real_mpc mode every executed
// action is a real environment step; in synthetic mode transitions come
// from synthetic_step under the model. Rewards are the source reward.
Trajectory mpc_rollout(const TaskPair& pair, const EnsembleModel& model, const PlannerConfig& cfg, DatagenMode mode,
                       int episode_len, std::uint64_t seed);

}  // namespace wombet
