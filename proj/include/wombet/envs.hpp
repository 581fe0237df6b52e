#pragma once

// Source/target task pairs on shared deterministic dynamics.
//
// State layout is [positions; velocities] with equal halves. Rewards are
// quadratic costs
//
//   r(s, a) = -( |wrap(q - q*)|^2 + c_v |v|^2 + c_a |a|^2 )
//
// so the maximum reward of every task is 0 (attained at the setpoint at
// rest with zero action). Positions flagged as angular are wrapped to
// (-pi, pi] before evaluation and are fed to networks as (cos, sin).

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wombet {

enum class TaskId { source, target };

inline const char* to_string(TaskId t) { return t == TaskId::source ? "source" : "target"; }

enum class System { pendulum, point_mass };

struct EnvSpec {
  System system = System::pendulum;
  int state_dim = 2;
  int action_dim = 1;
  int horizon = 200;   // steps per episode
  double dt = 0.05;    // seconds per step
  int substeps = 1;    // RK4 substeps per step
  double mass = 1.0;
  double length = 1.0;
  double gravity = 10.0;
  double friction = 0.0;
  double max_force = 2.0;  // torque (pendulum) or force (point mass) at |a| = 1
  std::vector<bool> angular;  // per state dim
};

struct RewardSpec {
  std::string id;
  Eigen::VectorXd setpoint;  // position setpoint, state_dim / 2 entries
  double velocity_coef = 0.1;
  double action_coef = 0.001;
};

// Uniform box over the state.
struct InitialDistribution {
  Eigen::VectorXd low;
  Eigen::VectorXd high;
};

struct TaskSpec {
  RewardSpec reward;
  InitialDistribution initial;
};

struct TaskPair {
  std::string id;
  EnvSpec dynamics;  // shared by both tasks
  TaskSpec source;
  TaskSpec target;
  double gamma = 0.99;

  const TaskSpec& task(TaskId t) const { return t == TaskId::source ? source : target; }
};

TaskPair pendulum_pair();
TaskPair point_mass_pair();
// "pendulum" or "point_mass"; throws ConfigError otherwise.
TaskPair make_task_pair(const std::string& id);
void validate(const TaskPair& pair);

double wrap_angle(double theta);

Eigen::VectorXd reset(const TaskPair& pair, TaskId task, std::uint64_t seed);
Eigen::VectorXd reset(const TaskPair& pair, TaskId task, std::mt19937_64& rng);

// One step of the shared dynamics (RK4). Actions are clipped to [-1, 1].
// Throws EnvironmentFault on a non-finite result.
Eigen::VectorXd dynamics_step(const EnvSpec& spec, const Eigen::VectorXd& state, const Eigen::VectorXd& action);

double reward(const TaskPair& pair, TaskId task, const Eigen::VectorXd& state, const Eigen::VectorXd& action);
double reward(const RewardSpec& spec, const EnvSpec& env, const Eigen::VectorXd& state,
              const Eigen::VectorXd& action);

// Supremum of the reward over the state-action space (0 for every task
// here; the cost is unbounded below only through unbounded velocities).
double max_reward(const TaskPair& pair, TaskId task);

double mechanical_energy(const EnvSpec& spec, const Eigen::VectorXd& state);

// Network input features: angular dims become (cos, sin).
Eigen::Index observation_dim(const EnvSpec& spec);
Eigen::VectorXd encode_observation(const EnvSpec& spec, const Eigen::VectorXd& state);
// Column-wise version for a (state_dim x B) batch.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> encode_observations(
    const std::vector<bool>& angular, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& states) {
  Eigen::Index rows = 0;
  for (bool a : angular) rows += a ? 2 : 1;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, states.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < angular.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    if (angular[i]) {
      out.row(r++) = states.row(idx).array().cos().matrix();
      out.row(r++) = states.row(idx).array().sin().matrix();
    } else {
      out.row(r++) = states.row(idx);
    }
  }
  return out;
}

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;
};

// Stateful episode wrapper. Counts every real step it takes.
class Environment {
 public:
  Environment(TaskPair pair, TaskId task) : pair_(std::move(pair)), task_(task) {}

  const Eigen::VectorXd& reset(std::uint64_t seed);
  const Eigen::VectorXd& reset(std::mt19937_64& rng);
  StepResult step(const Eigen::VectorXd& action);

  const Eigen::VectorXd& state() const { return state_; }
  int t() const { return t_; }
  long steps_taken() const { return steps_taken_; }
  const TaskPair& pair() const { return pair_; }
  TaskId task() const { return task_; }

 private:
  TaskPair pair_;
  TaskId task_;
  Eigen::VectorXd state_;
  int t_ = 0;
  long steps_taken_ = 0;
};

}  // namespace wombet
