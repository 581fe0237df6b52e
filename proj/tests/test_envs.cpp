#include "support.hpp"

#include "wombet/envs.hpp"
#include "wombet/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace wombet;
using Eigen::VectorXd;

namespace {

VectorXd v2(double a, double b) { return (VectorXd(2) << a, b).finished(); }

// theta'' = (g/l) sin(theta) - b theta' / (m l^2) + F a / (m l^2), theta = 0 upright.
VectorXd euler_reference(const EnvSpec& e, VectorXd s, double a, int steps) {
  const double h = e.dt / steps, inertia = e.mass * e.length * e.length;
  for (int i = 0; i < steps; ++i) {
    const double acc = e.gravity / e.length * std::sin(s(0)) - e.friction * s(1) / inertia + e.max_force * a / inertia;
    s(0) += h * s(1);
    s(1) += h * acc;
  }
  return s;
}

double reference_reward(const RewardSpec& r, const VectorXd& s, double a) {
  const double e = std::remainder(s(0) - r.setpoint(0), 2 * std::numbers::pi);
  return -(e * e + r.velocity_coef * s(1) * s(1) + r.action_coef * a * a);
}

}  // namespace

TEST_CASE("pendulum step agrees with a fine explicit integration of the same ODE") {
  const TaskPair p = pendulum_pair();
  for (double a : {-1.0, -0.3, 0.0, 0.7, 1.0}) {
    const VectorXd s = v2(2.5, -1.2);
    const VectorXd rk = dynamics_step(p.dynamics, s, (VectorXd(1) << a).finished());
    const VectorXd ref = euler_reference(p.dynamics, s, a, 200000);
    CHECK((rk - ref).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("actions are clipped to the unit box") {
  const TaskPair p = pendulum_pair();
  const VectorXd s = v2(0.3, 0.1);
  CHECK(dynamics_step(p.dynamics, s, (VectorXd(1) << 5.0).finished()) ==
        dynamics_step(p.dynamics, s, (VectorXd(1) << 1.0).finished()));
}

TEST_CASE("frictionless unforced pendulum conserves energy") {
  const TaskPair p = pendulum_pair();
  VectorXd s = v2(2.0, 0.0);
  const double e0 = mechanical_energy(p.dynamics, s);
  for (int t = 0; t < 400; ++t) s = dynamics_step(p.dynamics, s, VectorXd::Zero(1));
  CHECK(std::abs(mechanical_energy(p.dynamics, s) - e0) / std::abs(e0) < 1e-3);
}

TEST_CASE("rewards follow the quadratic cost and peak at zero") {
  const TaskPair p = pendulum_pair();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 200; ++i) {
    const VectorXd s = v2(u(rng), u(rng));
    const double a = std::clamp(u(rng) / 5, -1.0, 1.0);
    for (TaskId t : {TaskId::source, TaskId::target}) {
      const double r = reward(p, t, s, (VectorXd(1) << a).finished());
      CHECK(r == doctest::Approx(reference_reward(p.task(t).reward, s, a)).epsilon(1e-12));
      CHECK(r <= max_reward(p, t));
    }
  }
  CHECK(reward(p, TaskId::target, v2(0, 0), VectorXd::Zero(1)) == 0.0);
  CHECK(reward(p, TaskId::target, v2(2 * std::numbers::pi, 0), VectorXd::Zero(1)) == doctest::Approx(0.0));
}

TEST_CASE("source and target share dynamics and differ in reward") {
  const TaskPair p = pendulum_pair();
  const VectorXd s = v2(0.5, 2.0);
  CHECK(reward(p, TaskId::source, s, VectorXd::Zero(1)) != reward(p, TaskId::target, s, VectorXd::Zero(1)));
}

TEST_CASE("episodes end at the horizon, resets are seeded and in range") {
  const TaskPair p = point_mass_pair();
  Environment a(p, TaskId::target), b(p, TaskId::target);
  CHECK(a.reset(42) == b.reset(42));
  const auto& init = p.target.initial;
  CHECK((a.state().array() >= init.low.array()).all());
  CHECK((a.state().array() <= init.high.array()).all());
  int steps = 0;
  for (bool done = false; !done; ++steps) done = a.step(VectorXd::Zero(2)).done;
  CHECK(steps == p.dynamics.horizon);
  CHECK(a.steps_taken() == steps);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  for (double x : {-100.0, -7.0, -std::numbers::pi, 0.0, 3.0, std::numbers::pi, 9.5, 100.0}) {
    const double w = wrap_angle(x);
    CHECK(w > -std::numbers::pi);
    CHECK(w <= std::numbers::pi);
    CHECK(std::cos(w) == doctest::Approx(std::cos(x)));
    CHECK(std::sin(w) == doctest::Approx(std::sin(x)));
  }
}

TEST_CASE("non-finite states raise an environment fault") {
  const TaskPair p = pendulum_pair();
  CHECK_THROWS_AS(dynamics_step(p.dynamics, v2(NAN, 0), VectorXd::Zero(1)), EnvironmentFault);
}

TEST_CASE("task pair validation and lookup") {
  CHECK_NOTHROW(validate(pendulum_pair()));
  CHECK_NOTHROW(validate(point_mass_pair()));
  CHECK_THROWS_AS(make_task_pair("cartpole"), ConfigError);
  TaskPair bad = pendulum_pair();
  bad.dynamics.dt = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}
