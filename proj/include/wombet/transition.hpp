#pragma once

#include "wombet/nn.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace wombet {

// done marks a terminal transition (no bootstrapping). Episodes that end
// at the time limit are truncations and keep done = false.
struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  bool from_source = false;
  double uncertainty = 0.0;  // u(s, a) cached at generation time; 0 for online data
};

struct Trajectory {
  std::vector<Transition> steps;
  double ret = 0.0;               // discounted return under the source reward
  double mean_uncertainty = 0.0;  // mean u over realized steps, 0 if empty
  bool fault = false;             // truncated by an environment fault
  long real_steps = 0;            // real environment steps consumed
  int planner_failures = 0;

  bool empty() const { return steps.empty(); }
};

double discounted_return(std::span<const double> rewards, double gamma);
double mean_of(std::span<const double> values);
// Recomputes ret and mean_uncertainty from the transitions.
void refresh_statistics(Trajectory& traj, double gamma);

// Column-batched samples for the agent.
template <typename Scalar>
struct Batch {
  nn::Matrix<Scalar> states;       // state_dim x B
  nn::Matrix<Scalar> actions;      // action_dim x B
  nn::RowVector<Scalar> rewards;
  nn::Matrix<Scalar> next_states;
  nn::RowVector<Scalar> done;      // 1 for terminal
  nn::RowVector<Scalar> source;    // 1 for offline (source-task) samples
  nn::RowVector<Scalar> uncertainty;

  Eigen::Index size() const { return states.cols(); }
};

template <typename Scalar>
Batch<Scalar> make_batch(std::span<const Transition* const> items) {
  if (items.empty()) throw nn::ContractViolation("make_batch: no transitions");
  const auto n = items.front()->state.size();
  const auto m = items.front()->action.size();
  const auto b = static_cast<Eigen::Index>(items.size());
  Batch<Scalar> out;
  out.states.resize(n, b);
  out.actions.resize(m, b);
  out.rewards.resize(b);
  out.next_states.resize(n, b);
  out.done.resize(b);
  out.source.resize(b);
  out.uncertainty.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Transition& t = *items[static_cast<std::size_t>(i)];
    if (t.state.size() != n || t.action.size() != m || t.next_state.size() != n)
      throw nn::ContractViolation("make_batch: inconsistent transition shapes");
    out.states.col(i) = t.state.cast<Scalar>();
    out.actions.col(i) = t.action.cast<Scalar>();
    out.rewards(i) = static_cast<Scalar>(t.reward);
    out.next_states.col(i) = t.next_state.cast<Scalar>();
    out.done(i) = t.done ? Scalar(1) : Scalar(0);
    out.source(i) = t.from_source ? Scalar(1) : Scalar(0);
    out.uncertainty(i) = t.from_source ? static_cast<Scalar>(t.uncertainty) : Scalar(0);
  }
  return out;
}

template <typename Scalar>
Batch<Scalar> make_batch(std::span<const Transition> items) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(items.size());
  for (const auto& t : items) ptrs.push_back(&t);
  return make_batch<Scalar>(std::span<const Transition* const>(ptrs));
}

}  // namespace wombet
