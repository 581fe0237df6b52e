#include "support.hpp"

#include "wombet/envs.hpp"
#include "wombet/experiment.hpp"
#include "wombet/world_model.hpp"

#include <doctest.h>

using namespace wombet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Members are fixed affine maps; used to test the uncertainty measures.
class AffineEnsemble : public Ensemble {
 public:
  std::vector<double> offsets;
  std::vector<double> variances;
  int size() const override { return static_cast<int>(offsets.size()); }
  EnsembleBatch predict_batch(const MatrixXd& s, const MatrixXd&) const override {
    EnsembleBatch b;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      b.means.push_back(s.array() + offsets[i]);
      b.variances.push_back(MatrixXd::Constant(s.rows(), s.cols(), variances[i]));
    }
    return b;
  }
};

}  // namespace

TEST_CASE("uncertainty is zero for agreeing members and matches brute force otherwise") {
  AffineEnsemble e;
  e.offsets = {0.0, 0.0, 0.0};
  e.variances = {0.1, 0.2, 0.3};
  const MatrixXd s = MatrixXd::Random(2, 4);
  const auto batch = e.predict_batch(s, MatrixXd::Zero(1, 4));
  CHECK(ensemble_uncertainty(batch, UncertaintyMode::pairwise_mean_distance).maxCoeff() == 0.0);

  e.offsets = {0.0, 0.3, -0.1};
  const auto b2 = e.predict_batch(s, MatrixXd::Zero(1, 4));
  const auto u = ensemble_uncertainty(b2, UncertaintyMode::pairwise_mean_distance);
  // Offsets shift both coordinates: the largest pair is 0.4 apart per dim.
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(u(c) == doctest::Approx(0.4 * std::sqrt(2.0)));
  const auto us = ensemble_uncertainty(b2, UncertaintyMode::max_std_norm);
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(us(c) == doctest::Approx(std::sqrt(2 * 0.3)));
}

TEST_CASE("a fitted ensemble predicts pendulum steps and reports finite holdout metrics") {
  const TaskPair pair = pendulum_pair();
  const auto data = collect_random(pair, TaskId::source, 3000, 5);
  WorldModelConfig cfg;
  cfg.ensemble_size = 3;
  cfg.hidden = {64, 64};
  EnsembleModel model(2, 1, pair.dynamics.angular, cfg, 11);
  const auto report = fit(model, data, 20, 12);
  CHECK(model.fitted);
  CHECK(report.holdout_nll.size() == 3);
  CHECK(std::isfinite(report.mean_nll()));

  // Error against a do-nothing predictor on fresh transitions.
  const auto fresh = collect_random(pair, TaskId::source, 500, 99);
  double model_err = 0.0, still_err = 0.0;
  for (const auto& t : fresh) {
    VectorXd mean = VectorXd::Zero(2);
    for (const auto& p : predict(model, t.state, t.action)) mean += p.mean / 3.0;
    model_err += (mean - t.next_state).squaredNorm();
    still_err += (t.state - t.next_state).squaredNorm();
  }
  CHECK(model_err < 0.2 * still_err);
}

TEST_CASE("fit is deterministic and checkpoints restore identical predictions") {
  const TaskPair pair = pendulum_pair();
  const auto data = collect_random(pair, TaskId::source, 1000, 6);
  WorldModelConfig cfg;
  cfg.ensemble_size = 2;
  cfg.hidden = {16, 16};
  cfg.batch_size = 64;
  EnsembleModel a(2, 1, pair.dynamics.angular, cfg, 1), b(2, 1, pair.dynamics.angular, cfg, 1);
  fit(a, data, 3, 2);
  fit(b, data, 3, 2);
  const MatrixXd s = MatrixXd::Random(2, 5), act = MatrixXd::Random(1, 5);
  const auto pa = a.predict_batch(s, act), pb = b.predict_batch(s, act);
  CHECK(pa.means[1] == pb.means[1]);

  const EnsembleModel c = from_checkpoint(decode_parameters(encode_parameters(to_checkpoint(a))));
  const auto pc = c.predict_batch(s, act);
  for (int m = 0; m < 2; ++m) {
    CHECK(pa.means[m] == pc.means[m]);
    CHECK(pa.variances[m] == pc.variances[m]);
  }
}

TEST_CASE("fit needs enough data") {
  const TaskPair pair = pendulum_pair();
  const auto data = collect_random(pair, TaskId::source, 100, 6);
  EnsembleModel m(2, 1, pair.dynamics.angular, WorldModelConfig{}, 1);
  CHECK_THROWS_AS(fit(m, data, 1, 1), PreconditionError);
}
