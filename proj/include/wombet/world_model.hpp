#pragma once

// Probabilistic ensemble dynamics model.
//
// Each member maps normalized (encode(s), a) to a normalized Gaussian over
// the state delta (mean, log-variance). Members are trained independently
// on bootstrap resamples by Gaussian negative log-likelihood.

#include "wombet/checkpoint.hpp"
#include "wombet/nn.hpp"
#include "wombet/transition.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace wombet {

enum class UncertaintyMode {
  pairwise_mean_distance,  // max over member pairs of |mean_i - mean_j|
  max_std_norm,            // max over members of |std_i|
};

// Per-member next-state predictions for a batch (state_dim x B each).
struct EnsembleBatch {
  std::vector<Eigen::MatrixXd> means;
  std::vector<Eigen::MatrixXd> variances;
};

// What the planner needs from a dynamics ensemble. Implemented by the
// learned model and by analytic ensembles in tests.
class Ensemble {
 public:
  virtual ~Ensemble() = default;
  virtual int size() const = 0;
  virtual EnsembleBatch predict_batch(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const = 0;
  virtual UncertaintyMode uncertainty_mode() const { return UncertaintyMode::pairwise_mean_distance; }
};

Eigen::MatrixXd ensemble_mean(const EnsembleBatch& batch);
// u(s, a) per column, >= 0, exactly 0 when all members agree.
Eigen::RowVectorXd ensemble_uncertainty(const EnsembleBatch& batch, UncertaintyMode mode);

struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Normalizer fit(const Eigen::MatrixXd& columns);
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& x) const;
};

struct WorldModelConfig {
  int ensemble_size = 5;
  std::vector<int> hidden = {64, 64};
  double learning_rate = 1e-3;
  int batch_size = 256;
  double log_var_min = -10.0;  // normalized space
  double log_var_max = 1.0;
  double holdout_fraction = 0.1;
  UncertaintyMode uncertainty = UncertaintyMode::pairwise_mean_distance;
};

struct ModelTrainReport {
  std::vector<double> holdout_nll;  // per member, normalized space
  std::vector<double> holdout_mse;  // per member, raw next-state space
  int epochs = 0;

  double mean_nll() const;
  double mean_mse() const;
};

struct MemberPrediction {
  Eigen::VectorXd mean;      // next state
  Eigen::VectorXd variance;  // next-state variance
};

class EnsembleModel : public Ensemble {
 public:
  EnsembleModel(int state_dim, int action_dim, std::vector<bool> angular, WorldModelConfig config,
                std::uint64_t seed);

  int size() const override { return static_cast<int>(members.size()); }
  EnsembleBatch predict_batch(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const override;
  UncertaintyMode uncertainty_mode() const override { return config.uncertainty; }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const std::vector<bool>& angular() const { return angular_; }
  Eigen::Index input_dim() const;

  // Raw network input (encode(s) stacked on a), before normalization.
  Eigen::MatrixXd features(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;

  WorldModelConfig config;
  std::vector<nn::Mlp<float>> members;
  Normalizer input_norm;
  Normalizer target_norm;  // over state deltas
  bool fitted = false;

 private:
  int state_dim_;
  int action_dim_;
  std::vector<bool> angular_;
};

// Retrains every member from scratch on bootstrap resamples of the
// training split. Requires at least 2 * batch_size transitions.
ModelTrainReport fit(EnsembleModel& model, std::span<const Transition> data, int epochs, std::uint64_t seed);

// Held-out metrics of the current parameters on the given transitions.
ModelTrainReport evaluate(const EnsembleModel& model, std::span<const Transition> data);

std::vector<MemberPrediction> predict(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a);

double uncertainty(const Ensemble& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a);

// Samples a next state from a uniformly chosen member's Gaussian.
Eigen::VectorXd synthetic_step(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                               std::mt19937_64& rng);
Eigen::VectorXd synthetic_step(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                               std::uint64_t seed);

ParameterFile to_checkpoint(const EnsembleModel& model);
EnsembleModel from_checkpoint(const ParameterFile& file);

}  // namespace wombet
