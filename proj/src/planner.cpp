#include "wombet/planner.hpp"

#include "wombet/errors.hpp"
#include "wombet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wombet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

int PlannerConfig::elite_count() const {
  return std::max(2, static_cast<int>(std::lround(elite_fraction * population)));
}

void validate(const PlannerConfig& cfg) {
  if (cfg.horizon < 1) throw ConfigError("planner horizon must be >= 1");
  if (cfg.penalty < 0.0) throw ConfigError("planner penalty must be >= 0");
  if (cfg.iterations < 1) throw ConfigError("planner iterations must be >= 1");
  if (cfg.population < cfg.elite_count()) throw ConfigError("planner population must be >= elite count");
  if (!(cfg.init_std > 0.0) || cfg.std_floor < 0.0) throw ConfigError("planner std settings must be positive");
}

Eigen::RowVectorXd evaluate_sequences(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0,
                                      const std::vector<Eigen::MatrixXd>& actions, double penalty, double gamma,
                                      Propagation propagation, std::mt19937_64* rng) {
  if (actions.empty()) throw PreconditionError("evaluate_sequences: empty horizon");
  const Eigen::Index pop = actions.front().cols();
  Eigen::MatrixXd states = s0.replicate(1, pop);
  Eigen::RowVectorXd ret = Eigen::RowVectorXd::Zero(pop);
  std::vector<char> dead(static_cast<std::size_t>(pop), 0);
  double discount = 1.0;
  for (const auto& a : actions) {
    const EnsembleBatch pred = model.predict_batch(states, a);
    const Eigen::RowVectorXd u = ensemble_uncertainty(pred, model.uncertainty_mode());
    for (Eigen::Index j = 0; j < pop; ++j) {
      if (dead[static_cast<std::size_t>(j)]) continue;
      const double r = reward(states.col(j), a.col(j));
      ret(j) += discount * (r - penalty * u(j));
    }
    if (propagation == Propagation::sampled_member && rng != nullptr) {
      std::uniform_int_distribution<std::size_t> pick(0, pred.means.size() - 1);
      for (Eigen::Index j = 0; j < pop; ++j) states.col(j) = pred.means[pick(*rng)].col(j);
    } else {
      states = ensemble_mean(pred);
    }
    for (Eigen::Index j = 0; j < pop; ++j) {
      auto& d = dead[static_cast<std::size_t>(j)];
      if (!d && (!states.col(j).allFinite() || !std::isfinite(ret(j)))) d = 1;
      if (d) {
        states.col(j) = s0;
        ret(j) = kNegInf;
      }
    }
    discount *= gamma;
  }
  return ret;
}

double evaluate_sequence(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0,
                         const Eigen::MatrixXd& actions, double penalty, double gamma) {
  std::vector<Eigen::MatrixXd> steps;
  steps.reserve(static_cast<std::size_t>(actions.cols()));
  for (Eigen::Index k = 0; k < actions.cols(); ++k) {
    if ((actions.col(k).array().abs() > 1.0).any()) throw PreconditionError("evaluate_sequence: action out of bounds");
    steps.emplace_back(actions.col(k));
  }
  return evaluate_sequences(model, reward, s0, steps, penalty, gamma)(0);
}

PlanResult plan(const Ensemble& model, const RewardFn& reward, const Eigen::VectorXd& s0, int action_dim,
                const PlannerConfig& cfg, std::uint64_t seed, const Eigen::MatrixXd* warm_start) {
  validate(cfg);
  const int h = cfg.horizon;
  const int pop = cfg.population;
  const int elites = cfg.elite_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(action_dim, h);
  if (warm_start != nullptr) {
    if (warm_start->rows() != action_dim || warm_start->cols() != h)
      throw PreconditionError("plan: warm start has the wrong shape");
    mean = *warm_start;
  }
  Eigen::MatrixXd stddev = Eigen::MatrixXd::Constant(action_dim, h, cfg.init_std);

  PlanResult result;
  result.penalized_return = kNegInf;
  result.actions = mean;

  std::vector<Eigen::MatrixXd> samples(static_cast<std::size_t>(h), Eigen::MatrixXd(action_dim, pop));
  std::vector<int> order(static_cast<std::size_t>(pop));
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int p = 0; p < pop; ++p)
      for (int k = 0; k < h; ++k)
        for (int j = 0; j < action_dim; ++j)
          samples[static_cast<std::size_t>(k)](j, p) =
              std::clamp(mean(j, k) + stddev(j, k) * normal(rng), -1.0, 1.0);

    const Eigen::RowVectorXd ret =
        evaluate_sequences(model, reward, s0, samples, cfg.penalty, cfg.gamma, cfg.propagation, &rng);
    if (!(ret.array() > kNegInf).any()) throw PlannerFailure("every CEM candidate scored -inf");

    // Descending by return; ties keep index order.
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return ret(a) > ret(b); });

    if (ret(order.front()) > result.penalized_return) {
      result.penalized_return = ret(order.front());
      for (int k = 0; k < h; ++k) result.actions.col(k) = samples[static_cast<std::size_t>(k)].col(order.front());
    }

    for (int k = 0; k < h; ++k) {
      const auto& s = samples[static_cast<std::size_t>(k)];
      Eigen::VectorXd m = Eigen::VectorXd::Zero(action_dim);
      for (int e = 0; e < elites; ++e) m += s.col(order[static_cast<std::size_t>(e)]);
      m /= elites;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(action_dim);
      for (int e = 0; e < elites; ++e) v += (s.col(order[static_cast<std::size_t>(e)]) - m).cwiseAbs2();
      v /= elites;
      mean.col(k) = m;
      stddev.col(k) = v.cwiseSqrt().cwiseMax(cfg.std_floor);
    }
  }

  result.mean_actions = mean;
  result.mean_states.resize(s0.size(), h + 1);
  result.mean_states.col(0) = s0;
  result.uncertainties.reserve(static_cast<std::size_t>(h));
  for (int k = 0; k < h; ++k) {
    const Eigen::MatrixXd s = result.mean_states.col(k);
    const auto pred = model.predict_batch(s, Eigen::MatrixXd(mean.col(k)));
    result.uncertainties.push_back(ensemble_uncertainty(pred, model.uncertainty_mode())(0));
    const Eigen::MatrixXd next = ensemble_mean(pred);
    if (!next.allFinite()) {
      result.mean_states.rightCols(h - k).setConstant(std::numeric_limits<double>::quiet_NaN());
      result.uncertainties.resize(static_cast<std::size_t>(h), std::numeric_limits<double>::infinity());
      break;
    }
    result.mean_states.col(k + 1) = next;
  }
  return result;
}

Trajectory mpc_rollout(const TaskPair& pair, const EnsembleModel& model, const PlannerConfig& cfg, DatagenMode mode,
                       int episode_len, std::uint64_t seed) {
  Trajectory traj;
  if (episode_len <= 0) return traj;

  const RewardFn reward_fn = [&pair](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return reward(pair, TaskId::source, s, a);
  };
  const int m = pair.dynamics.action_dim;
  Environment env(pair, TaskId::source);
  Eigen::VectorXd s = env.reset(derive_seed(seed, 0));
  auto model_rng = make_rng(seed, 1);

  Eigen::MatrixXd warm;
  bool have_warm = false;
  for (int t = 0; t < episode_len; ++t) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
    try {
      const PlanResult res =
          plan(model, reward_fn, s, m, cfg, derive_seed(seed, 2 + static_cast<std::uint64_t>(t)),
               have_warm ? &warm : nullptr);
      a = res.actions.col(0);
      warm.resize(m, cfg.horizon);
      warm.leftCols(cfg.horizon - 1) = res.mean_actions.rightCols(cfg.horizon - 1);
      warm.col(cfg.horizon - 1).setZero();
      have_warm = true;
    } catch (const PlannerFailure&) {
      ++traj.planner_failures;
      have_warm = false;
    }

    Transition tr;
    tr.state = s;
    tr.action = a;
    tr.from_source = true;
    tr.uncertainty = uncertainty(model, s, a);
    if (mode == DatagenMode::real_mpc) {
      try {
        const StepResult step = env.step(a);
        tr.reward = step.reward;
        tr.next_state = step.next_state;
      } catch (const EnvironmentFault&) {
        traj.fault = true;
        break;
      }
    } else {
      tr.reward = reward(pair, TaskId::source, s, a);
      tr.next_state = synthetic_step(model, s, a, model_rng);
      if (!tr.next_state.allFinite()) {
        traj.fault = true;
        break;
      }
    }
    s = tr.next_state;
    traj.steps.push_back(std::move(tr));
  }
  traj.real_steps = env.steps_taken();
  refresh_statistics(traj, pair.gamma);
  return traj;
}

}  // namespace wombet
