#include "wombet/envs.hpp"

#include "wombet/errors.hpp"

#include <cmath>
#include <numbers>

namespace wombet {

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Eigen::VectorXd derivative(const EnvSpec& spec, const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  Eigen::VectorXd ds(s.size());
  switch (spec.system) {
    case System::pendulum: {
      // theta = 0 is upright.
      const double inertia = spec.mass * spec.length * spec.length;
      ds(0) = s(1);
      ds(1) = spec.gravity / spec.length * std::sin(s(0)) - spec.friction * s(1) / inertia +
              spec.max_force * a(0) / inertia;
      break;
    }
    case System::point_mass: {
      const Eigen::Index half = s.size() / 2;
      ds.head(half) = s.tail(half);
      ds.tail(half) = (spec.max_force * a - spec.friction * s.tail(half)) / spec.mass;
      break;
    }
  }
  return ds;
}

}  // namespace

TaskPair pendulum_pair() {
  TaskPair p;
  p.id = "pendulum";
  p.dynamics.system = System::pendulum;
  p.dynamics.state_dim = 2;
  p.dynamics.action_dim = 1;
  p.dynamics.horizon = 200;
  p.dynamics.dt = 0.05;
  p.dynamics.substeps = 1;
  p.dynamics.mass = 1.0;
  p.dynamics.length = 1.0;
  p.dynamics.gravity = 10.0;
  p.dynamics.friction = 0.0;
  p.dynamics.max_force = 5.0;  // enough torque for a swing-up in two or three pumps
  p.dynamics.angular = {true, false};

  const double pi = std::numbers::pi;
  p.source.reward = {"pendulum_source", vec({0.0}), 0.1, 0.001};
  p.source.initial = {vec({pi - 0.3, -0.05}), vec({pi + 0.3, 0.05})};
  p.target.reward = {"pendulum_target", vec({0.0}), 0.5, 0.001};
  p.target.initial = {vec({pi - 1.0, -0.5}), vec({pi + 1.0, 0.5})};
  p.gamma = 0.99;
  return p;
}

TaskPair point_mass_pair() {
  TaskPair p;
  p.id = "point_mass";
  p.dynamics.system = System::point_mass;
  p.dynamics.state_dim = 4;
  p.dynamics.action_dim = 2;
  p.dynamics.horizon = 100;
  p.dynamics.dt = 0.1;
  p.dynamics.substeps = 1;
  p.dynamics.mass = 1.0;
  p.dynamics.friction = 0.5;
  p.dynamics.max_force = 1.0;
  p.dynamics.angular = {false, false, false, false};

  p.source.reward = {"point_mass_source", vec({0.0, 0.0}), 0.1, 0.001};
  p.source.initial = {vec({0.8, -0.2, -0.05, -0.05}), vec({1.2, 0.2, 0.05, 0.05})};
  p.target.reward = {"point_mass_target", vec({0.0, 0.0}), 0.5, 0.001};
  p.target.initial = {vec({-1.5, -1.5, -0.5, -0.5}), vec({1.5, 1.5, 0.5, 0.5})};
  p.gamma = 0.99;
  return p;
}

TaskPair make_task_pair(const std::string& id) {
  if (id == "pendulum") return pendulum_pair();
  if (id == "point_mass") return point_mass_pair();
  throw ConfigError("unknown task pair '" + id + "'");
}

void validate(const TaskPair& pair) {
  const auto& d = pair.dynamics;
  if (d.horizon < 1) throw ConfigError("env horizon must be >= 1");
  if (!(d.dt > 0.0)) throw ConfigError("env timestep must be > 0");
  if (d.substeps < 1) throw ConfigError("env substeps must be >= 1");
  if (!std::isfinite(d.max_force)) throw ConfigError("action bound must be finite");
  if (d.state_dim % 2 != 0 || static_cast<int>(d.angular.size()) != d.state_dim)
    throw ConfigError("state layout must be [positions; velocities] with an angular flag per dim");
  if (!(pair.gamma >= 0.0 && pair.gamma < 1.0)) throw ConfigError("discount must lie in [0, 1)");
  for (const TaskSpec* t : {&pair.source, &pair.target}) {
    if (t->reward.setpoint.size() != d.state_dim / 2) throw ConfigError("setpoint size must equal position dims");
    if (t->initial.low.size() != d.state_dim || t->initial.high.size() != d.state_dim)
      throw ConfigError("initial distribution size must equal state dim");
  }
}

double wrap_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double x = std::fmod(theta + std::numbers::pi, two_pi);
  if (x < 0.0) x += two_pi;
  x -= std::numbers::pi;
  return x == -std::numbers::pi ? std::numbers::pi : x;
}

Eigen::VectorXd reset(const TaskPair& pair, TaskId task, std::mt19937_64& rng) {
  const auto& init = pair.task(task).initial;
  Eigen::VectorXd s(init.low.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    std::uniform_real_distribution<double> u(init.low(i), init.high(i));
    s(i) = u(rng);
  }
  return s;
}

Eigen::VectorXd reset(const TaskPair& pair, TaskId task, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return reset(pair, task, rng);
}

Eigen::VectorXd dynamics_step(const EnvSpec& spec, const Eigen::VectorXd& state, const Eigen::VectorXd& action) {
  const Eigen::VectorXd a = action.cwiseMax(-1.0).cwiseMin(1.0);
  const double h = spec.dt / spec.substeps;
  Eigen::VectorXd s = state;
  for (int i = 0; i < spec.substeps; ++i) {
    const Eigen::VectorXd k1 = derivative(spec, s, a);
    const Eigen::VectorXd k2 = derivative(spec, s + 0.5 * h * k1, a);
    const Eigen::VectorXd k3 = derivative(spec, s + 0.5 * h * k2, a);
    const Eigen::VectorXd k4 = derivative(spec, s + h * k3, a);
    s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (!s.allFinite()) throw EnvironmentFault("non-finite state after dynamics step");
  return s;
}

double reward(const RewardSpec& spec, const EnvSpec& env, const Eigen::VectorXd& state,
              const Eigen::VectorXd& action) {
  const Eigen::Index half = state.size() / 2;
  double pos = 0.0;
  for (Eigen::Index i = 0; i < half; ++i) {
    double e = state(i) - spec.setpoint(i);
    if (env.angular[static_cast<std::size_t>(i)]) e = wrap_angle(e);
    pos += e * e;
  }
  const double vel = state.tail(half).squaredNorm();
  const double act = action.cwiseMax(-1.0).cwiseMin(1.0).squaredNorm();
  return -(pos + spec.velocity_coef * vel + spec.action_coef * act);
}

double reward(const TaskPair& pair, TaskId task, const Eigen::VectorXd& state, const Eigen::VectorXd& action) {
  return reward(pair.task(task).reward, pair.dynamics, state, action);
}

double max_reward(const TaskPair&, TaskId) { return 0.0; }

double mechanical_energy(const EnvSpec& spec, const Eigen::VectorXd& state) {
  if (spec.system == System::pendulum) {
    const double ml2 = spec.mass * spec.length * spec.length;
    return 0.5 * ml2 * state(1) * state(1) + spec.mass * spec.gravity * spec.length * std::cos(state(0));
  }
  const Eigen::Index half = state.size() / 2;
  return 0.5 * spec.mass * state.tail(half).squaredNorm();
}

Eigen::Index observation_dim(const EnvSpec& spec) {
  Eigen::Index n = 0;
  for (bool a : spec.angular) n += a ? 2 : 1;
  return n;
}

Eigen::VectorXd encode_observation(const EnvSpec& spec, const Eigen::VectorXd& state) {
  return encode_observations<double>(spec.angular, Eigen::MatrixXd(state)).col(0);
}

const Eigen::VectorXd& Environment::reset(std::uint64_t seed) {
  state_ = wombet::reset(pair_, task_, seed);
  t_ = 0;
  return state_;
}

const Eigen::VectorXd& Environment::reset(std::mt19937_64& rng) {
  state_ = wombet::reset(pair_, task_, rng);
  t_ = 0;
  return state_;
}

StepResult Environment::step(const Eigen::VectorXd& action) {
  StepResult r;
  r.reward = wombet::reward(pair_, task_, state_, action);
  ++steps_taken_;
  r.next_state = dynamics_step(pair_.dynamics, state_, action);
  ++t_;
  r.done = t_ >= pair_.dynamics.horizon;
  state_ = r.next_state;
  return r;
}

}  // namespace wombet
