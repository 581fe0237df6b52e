#include "support.hpp"

#include "wombet/errors.hpp"
#include "wombet/experiment.hpp"
#include "wombet/planner.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace wombet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// 1D integrator s' = s + a. The second member adds `gap` to the step when
// s > 1, so the members disagree exactly on s > 1.
class SplitEnsemble : public Ensemble {
 public:
  double gap = 0.5;
  int size() const override { return 2; }
  EnsembleBatch predict_batch(const MatrixXd& s, const MatrixXd& a) const override {
    EnsembleBatch b;
    const MatrixXd base = s + a;
    MatrixXd other = base;
    for (Eigen::Index c = 0; c < s.cols(); ++c)
      if (s(0, c) > 1.0) other(0, c) += gap;
    b.means = {base, other};
    b.variances = {MatrixXd::Zero(1, s.cols()), MatrixXd::Zero(1, s.cols())};
    return b;
  }
};

const RewardFn kRightward = [](const VectorXd& s, const VectorXd&) { return s(0); };

// Independent scoring of one sequence under the split ensemble.
double brute_score(const std::vector<double>& actions, double lambda, double gamma, double gap) {
  double s = 0.0, ret = 0.0, disc = 1.0;
  for (double a : actions) {
    const double u = s > 1.0 ? gap : 0.0;
    ret += disc * (s - lambda * u);
    s = s + a + 0.5 * (s > 1.0 ? gap : 0.0);
    disc *= gamma;
  }
  return ret;
}

}  // namespace

TEST_CASE("sequence scores equal the hand-rolled penalized return") {
  SplitEnsemble e;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const MatrixXd a = support::uniform_matrix(1, 4, -1, 1, rng);
    const std::vector<double> av(a.data(), a.data() + 4);
    for (double lambda : {0.0, 2.0, 50.0})
      CHECK(evaluate_sequence(e, kRightward, VectorXd::Zero(1), a, lambda, 0.9) ==
            doctest::Approx(brute_score(av, lambda, 0.9, e.gap)).epsilon(1e-12));
  }
}

TEST_CASE("a heavily penalized planner keeps the scored trajectory out of the disagreement region") {
  SplitEnsemble e;
  PlannerConfig cfg;
  cfg.horizon = 3;
  cfg.gamma = 0.9;
  cfg.population = 256;
  cfg.iterations = 8;

  // Grid oracle over the same objective.
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> best_seq;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j)
      for (int k = 0; k <= 20; ++k) {
        const std::vector<double> seq = {-1 + 0.1 * i, -1 + 0.1 * j, -1 + 0.1 * k};
        const double v = brute_score(seq, 100.0, cfg.gamma, e.gap);
        if (v > best) best = v, best_seq = seq;
      }
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < best_seq.size(); ++k) {
    s += best_seq[k];
    CHECK(s <= 1.0 + 1e-12);
  }

  cfg.penalty = 100.0;
  const PlanResult res = plan(e, kRightward, VectorXd::Zero(1), 1, cfg, 7);
  // States that are scored (k < H) stay in s <= 1; the final state is unscored.
  for (int k = 0; k < cfg.horizon; ++k) CHECK(res.mean_states(0, k) <= 1.0 + 1e-9);
  for (int k = 0; k < cfg.horizon; ++k) CHECK(res.uncertainties[static_cast<std::size_t>(k)] == 0.0);
  CHECK(res.penalized_return >= best - 0.05);

  // Contrast: without the penalty the planner walks into the region.
  cfg.penalty = 0.0;
  const PlanResult free = plan(e, kRightward, VectorXd::Zero(1), 1, cfg, 7);
  CHECK(free.mean_states(0, cfg.horizon - 1) > 1.5);
}

TEST_CASE("planning is deterministic for a seed and respects the action box") {
  SplitEnsemble e;
  PlannerConfig cfg;
  cfg.horizon = 5;
  const auto a = plan(e, kRightward, VectorXd::Zero(1), 1, cfg, 3);
  const auto b = plan(e, kRightward, VectorXd::Zero(1), 1, cfg, 3);
  CHECK(a.actions == b.actions);
  CHECK(a.actions.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(a.actions.cols() == 5);
}

TEST_CASE("a planner whose every candidate is non-finite fails loudly") {
  SplitEnsemble e;
  PlannerConfig cfg;
  cfg.horizon = 2;
  const RewardFn nan_reward = [](const VectorXd&, const VectorXd&) { return std::nan(""); };
  CHECK_THROWS_AS(plan(e, nan_reward, VectorXd::Zero(1), 1, cfg, 1), PlannerFailure);
}

TEST_CASE("planner config validation") {
  PlannerConfig cfg;
  cfg.population = 10;
  CHECK(cfg.elite_count() == 2);
  CHECK_NOTHROW(validate(cfg));
  cfg.population = 1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.horizon = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("MPC on a fitted pendulum model at least halves the random policy's cost") {
  ExperimentConfig cfg;
  cfg.planner.population = 64;
  cfg.planner.iterations = 3;
  cfg.planner.penalty = 1.0;
  cfg.datagen_episodes = 1;
  cfg.datagen_episode_len = 5;
  const SourcePhase sp = run_source_phase(cfg, 3);
  const int len = cfg.pair.dynamics.horizon;

  std::vector<double> mpc, random;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Trajectory t = mpc_rollout(cfg.pair, sp.model, cfg.planner, DatagenMode::real_mpc, len, 1000 + seed);
    REQUIRE(t.steps.size() == static_cast<std::size_t>(len));
    double r = 0.0;
    for (const auto& s : t.steps) r += s.reward;
    mpc.push_back(r);
    r = 0.0;
    for (const auto& s : collect_random(cfg.pair, TaskId::source, len, 2000 + seed)) r += s.reward;
    random.push_back(r);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  MESSAGE("median return: MPC " << median(mpc) << ", random " << median(random));
  CHECK(median(random) < 0.0);
  CHECK(median(mpc) >= 0.5 * median(random));
}
