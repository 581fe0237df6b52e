#include "wombet/transition.hpp"

namespace wombet {

double discounted_return(std::span<const double> rewards, double gamma) {
  double ret = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    ret += discount * r;
    discount *= gamma;
  }
  return ret;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

void refresh_statistics(Trajectory& traj, double gamma) {
  std::vector<double> r, u;
  r.reserve(traj.steps.size());
  u.reserve(traj.steps.size());
  for (const auto& t : traj.steps) {
    r.push_back(t.reward);
    u.push_back(t.uncertainty);
  }
  traj.ret = discounted_return(r, gamma);
  traj.mean_uncertainty = mean_of(u);
}

}  // namespace wombet
