#pragma once

// SAC-style actor-critic with an N-member layer-normalized critic ensemble.
//
// Critic target:
//   y = r - 1[source] * lambda_q * u
//         + (1 - done) * gamma * (min_i Qbar_i(s', a') - temp * log pi(a'|s')),
//   a' ~ pi(.|s').
// Actor: minimize E[temp * log pi(a|s) - min_i Q_i(s, a)], a reparameterized.

#include "wombet/checkpoint.hpp"
#include "wombet/envs.hpp"
#include "wombet/errors.hpp"
#include "wombet/nn.hpp"
#include "wombet/transition.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace wombet {

struct AgentConfig {
  std::vector<int> actor_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};
  int critics = 2;
  bool critic_layer_norm = true;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double temperature_lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  double penalty = 1.0;  // lambda_q
  bool entropy = true;
  double init_temperature = 0.2;
  double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN: -action_dim
  double reward_scale = 1.0;  // applied to r (and to the penalty) inside targets
};

void validate(const AgentConfig& cfg);

template <typename Scalar>
using QFn = std::function<void(const nn::Matrix<Scalar>& actions, nn::RowVector<Scalar>& q, nn::Matrix<Scalar>& dq_da)>;

template <typename Scalar>
struct ActorHead {
  nn::Matrix<Scalar> mean;     // m x B
  nn::Matrix<Scalar> log_std;  // m x B, clamped
  nn::Matrix<Scalar> d_log_std;
  nn::Tape<Scalar> tape;
};

template <typename Scalar>
ActorHead<Scalar> actor_head(const nn::Mlp<Scalar>& actor, const nn::Matrix<Scalar>& obs) {
  auto fr = nn::forward(actor, obs);
  const Eigen::Index m = fr.output.rows() / 2;
  ActorHead<Scalar> h;
  h.mean = fr.output.topRows(m);
  auto sc = nn::soft_clamp<Scalar>(fr.output.bottomRows(m), nn::kLogStdMin, nn::kLogStdMax);
  h.log_std = std::move(sc.value);
  h.d_log_std = std::move(sc.derivative);
  h.tape = std::move(fr.tape);
  return h;
}

template <typename Scalar>
struct ActorLoss {
  Scalar loss = 0;
  nn::Gradients<Scalar> grads;
  nn::RowVector<Scalar> log_prob;
  nn::Matrix<Scalar> actions;
};

// Reparameterized actor loss mean_b(temp * log pi(a_b|s_b) - Q(s_b, a_b))
// with a = tanh(mean + std * noise). q_fn returns Q and dQ/da per column.
template <typename Scalar>
ActorLoss<Scalar> actor_loss_and_grad(const nn::Mlp<Scalar>& actor, const nn::Matrix<Scalar>& obs,
                                      const nn::Matrix<Scalar>& noise, const QFn<Scalar>& q_fn, Scalar temperature,
                                      bool entropy = true) {
  const ActorHead<Scalar> h = actor_head(actor, obs);
  const auto s = nn::tanh_gaussian_sample<Scalar>(h.mean, h.log_std, noise);
  nn::RowVector<Scalar> q;
  nn::Matrix<Scalar> dq;
  q_fn(s.action, q, dq);
  const Scalar temp = entropy ? temperature : Scalar(0);
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(obs.cols());

  ActorLoss<Scalar> out;
  out.loss = (temp * s.log_prob - q).sum() * inv_b;
  const nn::Matrix<Scalar> sigma = h.log_std.array().exp().matrix();
  const auto a = s.action.array();
  const auto dq_du = (dq.array() * (Scalar(1) - a.square()));  // dQ/da * da/du
  const nn::Matrix<Scalar> d_mean = ((temp * Scalar(2) * a - dq_du) * inv_b).matrix();
  const auto se = sigma.array() * noise.array();
  const nn::Matrix<Scalar> d_ls =
      ((temp * (Scalar(-1) + Scalar(2) * a * se) - dq_du * se) * inv_b * h.d_log_std.array()).matrix();
  nn::Matrix<Scalar> d_out(2 * h.mean.rows(), obs.cols());
  d_out.topRows(h.mean.rows()) = d_mean;
  d_out.bottomRows(h.mean.rows()) = d_ls;
  out.grads = nn::backward(actor, h.tape, d_out);
  out.log_prob = s.log_prob;
  out.actions = s.action;
  return out;
}

template <typename Scalar>
struct CriticLoss {
  Scalar loss = 0;
  nn::Gradients<Scalar> grads;
};

// mean_b (Q(x_b) - y_b)^2 for critic input x = [obs; a].
template <typename Scalar>
CriticLoss<Scalar> critic_loss_and_grad(const nn::Mlp<Scalar>& critic, const nn::Matrix<Scalar>& input,
                                        const nn::RowVector<Scalar>& target) {
  auto fr = nn::forward(critic, input);
  const nn::RowVector<Scalar> diff = fr.output.row(0) - target;
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(input.cols());
  CriticLoss<Scalar> out;
  out.loss = diff.squaredNorm() * inv_b;
  out.grads = nn::backward(critic, fr.tape, nn::Matrix<Scalar>(Scalar(2) * inv_b * diff));
  return out;
}

template <typename Scalar>
struct Agent {
  AgentConfig config;
  std::vector<bool> angular;
  int state_dim = 0;
  int action_dim = 0;
  nn::Mlp<Scalar> actor;
  std::vector<nn::Mlp<Scalar>> critics;
  std::vector<nn::Mlp<Scalar>> target_critics;
  nn::AdamState<Scalar> actor_opt;
  std::vector<nn::AdamState<Scalar>> critic_opts;
  double log_temperature = 0.0;
  double temp_m = 0.0, temp_v = 0.0;
  long temp_step = 0;
  long updates = 0;

  Agent() = default;
  Agent(int state_dim_, int action_dim_, std::vector<bool> angular_, AgentConfig cfg, std::uint64_t seed);

  double temperature() const { return std::exp(log_temperature); }
  double target_entropy() const {
    return std::isnan(config.target_entropy) ? -static_cast<double>(action_dim) : config.target_entropy;
  }
  nn::Matrix<Scalar> observe(const nn::Matrix<Scalar>& states) const {
    return encode_observations<Scalar>(angular, states);
  }
  nn::Matrix<Scalar> critic_input(const nn::Matrix<Scalar>& obs, const nn::Matrix<Scalar>& actions) const {
    nn::Matrix<Scalar> x(obs.rows() + actions.rows(), obs.cols());
    x.topRows(obs.rows()) = obs;
    x.bottomRows(actions.rows()) = actions;
    return x;
  }
};

template <typename Scalar>
Agent<Scalar>::Agent(int state_dim_, int action_dim_, std::vector<bool> angular_, AgentConfig cfg,
                     std::uint64_t seed)
    : config(std::move(cfg)), angular(std::move(angular_)), state_dim(state_dim_), action_dim(action_dim_) {
  validate(config);
  if (static_cast<int>(angular.size()) != state_dim) throw PreconditionError("agent: angular mask size");
  std::mt19937_64 rng(seed);
  Eigen::Index obs_dim = 0;
  for (bool a : angular) obs_dim += a ? 2 : 1;

  std::vector<nn::LayerSpec> specs;
  for (int w : config.actor_hidden) specs.push_back({w, nn::Activation::relu, false});
  specs.push_back({2 * action_dim, nn::Activation::identity, false});
  actor = nn::make_mlp<Scalar>(obs_dim, specs, rng);
  actor_opt = nn::AdamState<Scalar>::for_network(actor, config.actor_lr);

  specs.clear();
  for (int w : config.critic_hidden) specs.push_back({w, nn::Activation::relu, config.critic_layer_norm});
  specs.push_back({1, nn::Activation::identity, false});
  for (int i = 0; i < config.critics; ++i) {
    critics.push_back(nn::make_mlp<Scalar>(obs_dim + action_dim, specs, rng));
    critic_opts.push_back(nn::AdamState<Scalar>::for_network(critics.back(), config.critic_lr));
  }
  target_critics = critics;
  log_temperature = std::log(config.init_temperature);
}

// Q values of every member, one row per member.
template <typename Scalar>
nn::Matrix<Scalar> critic_values(const std::vector<nn::Mlp<Scalar>>& nets, const nn::Matrix<Scalar>& input) {
  nn::Matrix<Scalar> q(static_cast<Eigen::Index>(nets.size()), input.cols());
  for (std::size_t i = 0; i < nets.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = nn::predict(nets[i], input).row(0);
  return q;
}

template <typename Scalar>
nn::Matrix<Scalar> standard_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Matrix<Scalar> n(rows, cols);
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = static_cast<Scalar>(normal(rng));
  return n;
}

// The Bellman target. The source penalty and reward are scaled by
// config.reward_scale.
template <typename Scalar>
nn::RowVector<Scalar> bellman_target(const Agent<Scalar>& agent, const Batch<Scalar>& batch, std::mt19937_64& rng) {
  const auto obs_next = agent.observe(batch.next_states);
  const ActorHead<Scalar> h = actor_head(agent.actor, obs_next);
  const auto noise = standard_noise<Scalar>(h.mean.rows(), h.mean.cols(), rng);
  const auto s = nn::tanh_gaussian_sample<Scalar>(h.mean, h.log_std, noise);
  const nn::Matrix<Scalar> q = critic_values(agent.target_critics, agent.critic_input(obs_next, s.action));
  const nn::RowVector<Scalar> min_q = q.colwise().minCoeff();
  const Scalar temp = agent.config.entropy ? static_cast<Scalar>(agent.temperature()) : Scalar(0);
  const Scalar scale = static_cast<Scalar>(agent.config.reward_scale);
  const Scalar lambda = static_cast<Scalar>(agent.config.penalty);
  const Scalar gamma = static_cast<Scalar>(agent.config.gamma);
  const auto immediate = scale * (batch.rewards.array() - batch.source.array() * lambda * batch.uncertainty.array());
  return (immediate + (Scalar(1) - batch.done.array()) * gamma * (min_q.array() - temp * s.log_prob.array())).matrix();
}

// One Adam step per critic towards the shared targets. Returns per-member
// mean squared TD loss (before the step).
template <typename Scalar>
std::vector<double> critic_update(Agent<Scalar>& agent, const Batch<Scalar>& batch,
                                  const nn::RowVector<Scalar>& targets, long batch_id = -1) {
  const auto x = agent.critic_input(agent.observe(batch.states), batch.actions);
  std::vector<double> losses;
  std::vector<nn::Gradients<Scalar>> grads;
  for (const auto& c : agent.critics) {
    auto l = critic_loss_and_grad(c, x, targets);
    if (!std::isfinite(static_cast<double>(l.loss))) throw DivergenceError("critic loss is not finite", batch_id);
    losses.push_back(static_cast<double>(l.loss));
    grads.push_back(std::move(l.grads));
  }
  for (std::size_t i = 0; i < agent.critics.size(); ++i) nn::adam_step(agent.critics[i], grads[i], agent.critic_opts[i]);
  return losses;
}

template <typename Scalar>
std::vector<double> critic_update(Agent<Scalar>& agent, const Batch<Scalar>& batch, std::mt19937_64& rng,
                                  long batch_id = -1) {
  return critic_update(agent, batch, bellman_target(agent, batch, rng), batch_id);
}

// Q = min_i Q_i(s, a) with dQ/da taken through the minimizing member.
template <typename Scalar>
QFn<Scalar> min_critic_fn(const Agent<Scalar>& agent, const nn::Matrix<Scalar>& obs) {
  return [&agent, obs](const nn::Matrix<Scalar>& actions, nn::RowVector<Scalar>& q, nn::Matrix<Scalar>& dq) {
    const auto x = agent.critic_input(obs, actions);
    const Eigen::Index n = static_cast<Eigen::Index>(agent.critics.size());
    std::vector<nn::ForwardResult<Scalar>> fr;
    nn::Matrix<Scalar> all(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      fr.push_back(nn::forward(agent.critics[static_cast<std::size_t>(i)], x));
      all.row(i) = fr.back().output.row(0);
    }
    q.resize(x.cols());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index b = 0; b < x.cols(); ++b) q(b) = all.col(b).minCoeff(&arg[static_cast<std::size_t>(b)]);
    dq = nn::Matrix<Scalar>::Zero(actions.rows(), x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      nn::Matrix<Scalar> sel = nn::Matrix<Scalar>::Zero(1, x.cols());
      bool any = false;
      for (Eigen::Index b = 0; b < x.cols(); ++b)
        if (arg[static_cast<std::size_t>(b)] == i) sel(0, b) = Scalar(1), any = true;
      if (!any) continue;
      nn::Matrix<Scalar> dx;
      nn::backward(agent.critics[static_cast<std::size_t>(i)], fr[static_cast<std::size_t>(i)].tape, sel, &dx);
      dq += dx.bottomRows(actions.rows());
    }
  };
}

struct ActorStats {
  double loss = 0.0;
  double entropy = 0.0;  // -mean log pi
  double temperature = 0.0;
};

// One actor step and, with entropy on, one temperature step.
template <typename Scalar>
ActorStats actor_update(Agent<Scalar>& agent, const Batch<Scalar>& batch, std::mt19937_64& rng, long batch_id = -1) {
  const auto obs = agent.observe(batch.states);
  const auto noise = standard_noise<Scalar>(agent.action_dim, obs.cols(), rng);
  auto res = actor_loss_and_grad<Scalar>(agent.actor, obs, noise, min_critic_fn(agent, obs),
                                         static_cast<Scalar>(agent.temperature()), agent.config.entropy);
  if (!std::isfinite(static_cast<double>(res.loss))) throw DivergenceError("actor loss is not finite", batch_id);
  nn::adam_step(agent.actor, res.grads, agent.actor_opt);

  ActorStats st;
  st.loss = static_cast<double>(res.loss);
  st.entropy = -static_cast<double>(res.log_prob.mean());
  if (agent.config.entropy) {
    // loss(log temp) = -log temp * mean(log pi + target entropy)
    const double g = -(static_cast<double>(res.log_prob.mean()) + agent.target_entropy());
    ++agent.temp_step;
    agent.temp_m = 0.9 * agent.temp_m + 0.1 * g;
    agent.temp_v = 0.999 * agent.temp_v + 0.001 * g * g;
    const double mh = agent.temp_m / (1.0 - std::pow(0.9, static_cast<double>(agent.temp_step)));
    const double vh = agent.temp_v / (1.0 - std::pow(0.999, static_cast<double>(agent.temp_step)));
    agent.log_temperature -= agent.config.temperature_lr * mh / (std::sqrt(vh) + 1e-8);
    agent.log_temperature = std::clamp(agent.log_temperature, -20.0, 5.0);
  }
  st.temperature = agent.temperature();
  return st;
}

template <typename Scalar>
void polyak_update(Agent<Scalar>& agent) {
  for (std::size_t i = 0; i < agent.critics.size(); ++i)
    nn::polyak_average(agent.target_critics[i], agent.critics[i], agent.config.tau);
}

// Mean |Q_0(s, a) - y| on a batch; parameters are untouched.
template <typename Scalar>
double td_error(const Agent<Scalar>& agent, const Batch<Scalar>& batch, std::mt19937_64& rng) {
  const auto y = bellman_target(agent, batch, rng);
  const auto x = agent.critic_input(agent.observe(batch.states), batch.actions);
  const nn::RowVector<Scalar> q = nn::predict(agent.critics.front(), x).row(0);
  return static_cast<double>((q - y).cwiseAbs().mean()) / agent.config.reward_scale;
}

struct UpdateStats {
  std::vector<double> critic_loss;
  ActorStats actor;
};

template <typename Scalar>
UpdateStats train_step(Agent<Scalar>& agent, const Batch<Scalar>& batch, std::mt19937_64& rng, long batch_id = -1) {
  UpdateStats st;
  st.critic_loss = critic_update(agent, batch, rng, batch_id);
  st.actor = actor_update(agent, batch, rng, batch_id);
  polyak_update(agent);
  ++agent.updates;
  return st;
}

// Deterministic action tanh(mean) for one state.
template <typename Scalar>
Eigen::VectorXd mean_action(const Agent<Scalar>& agent, const Eigen::VectorXd& state) {
  const nn::Matrix<Scalar> s = state.cast<Scalar>();
  const nn::Matrix<Scalar> out = nn::predict(agent.actor, agent.observe(s));
  return out.topRows(agent.action_dim).array().tanh().matrix().template cast<double>();
}

template <typename Scalar>
Eigen::VectorXd sample_action(const Agent<Scalar>& agent, const Eigen::VectorXd& state, std::mt19937_64& rng) {
  const nn::Matrix<Scalar> s = state.cast<Scalar>();
  const ActorHead<Scalar> h = actor_head(agent.actor, agent.observe(s));
  const auto noise = standard_noise<Scalar>(agent.action_dim, 1, rng);
  return nn::tanh_gaussian_sample<Scalar>(h.mean, h.log_std, noise).action.template cast<double>();
}

ParameterFile to_checkpoint(const Agent<float>& agent);
Agent<float> agent_from_checkpoint(const ParameterFile& file);

}  // namespace wombet
