#include "support.hpp"

#include "wombet/errors.hpp"
#include "wombet/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace wombet;
using namespace wombet::oracle;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Optimal 1D transport by the north-west corner rule on the sorted lattice.
double transport_cost(VectorXd p, VectorXd q, double h) {
  double cost = 0.0;
  Eigen::Index i = 0, j = 0;
  while (i < p.size() && j < q.size()) {
    const double m = std::min(p(i), q(j));
    cost += m * h * static_cast<double>(std::abs(i - j));
    p(i) -= m;
    q(j) -= m;
    if (p(i) <= 1e-15) ++i;
    if (q(j) <= 1e-15) ++j;
  }
  return cost;
}

int draw(const VectorXd& p, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    u -= p(i);
    if (u <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(p.size() - 1);
}

}  // namespace

TEST_CASE("chain kernels are stochastic matrices") {
  CHECK_NOTHROW(validate(make_chain(21, 3, 10, 1.0, 1)));
  CHECK_NOTHROW(validate(make_adversarial_chain(21, 3, 10)));
  ChainMdp bad = make_chain(5, 2, 3, 1.0, 1);
  bad.P[0](2, 2) += 0.01;
  CHECK_THROWS_AS(validate(bad), PreconditionError);
}

TEST_CASE("DP values agree with Monte Carlo rollouts") {
  const ChainMdp mdp = make_chain(11, 3, 8, 0.95, 4);
  std::mt19937_64 rng(5);
  const Policy pi = random_policy(11, 3, rng);
  const double exact = mdp.initial.dot(value_dp(mdp, pi).col(0));
  const int episodes = 40000;
  double sum = 0.0, sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = draw(mdp.initial, rng);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < mdp.horizon; ++t) {
      const int a = draw(pi.row(s).transpose(), rng);
      ret += disc * mdp.reward(s, a);
      disc *= mdp.gamma;
      s = draw(mdp.P[static_cast<std::size_t>(a)].row(s).transpose(), rng);
    }
    sum += ret;
    sq += ret * ret;
  }
  const double mean = sum / episodes;
  const double se = std::sqrt((sq / episodes - mean * mean) / episodes);
  CHECK(std::abs(mean - exact) < 4.0 * se);
}

TEST_CASE("W1 matches optimal transport on the lattice") {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 50; ++k) {
    VectorXd p = support::uniform_matrix(9, 1, 0, 1, rng), q = support::uniform_matrix(9, 1, 0, 1, rng);
    p /= p.sum();
    q /= q.sum();
    CHECK(w1_1d(p, q, 0.5) == doctest::Approx(transport_cost(p, q, 0.5)).epsilon(1e-9));
  }
  VectorXd d0 = VectorXd::Zero(5), d3 = VectorXd::Zero(5);
  d0(0) = 1;
  d3(3) = 1;
  CHECK(w1_1d(d0, d3, 2.0) == 6.0);
  CHECK_THROWS_AS(w1_1d(d0 * 2, d3, 1.0), PreconditionError);
}

TEST_CASE("Lipschitz constant equals the steepest neighbouring slope") {
  std::mt19937_64 rng(7);
  const MatrixXd v = support::uniform_matrix(15, 4, -3, 3, rng);
  double steepest = 0.0;
  for (Eigen::Index c = 0; c < v.cols(); ++c)
    for (Eigen::Index s = 0; s + 1 < v.rows(); ++s) steepest = std::max(steepest, std::abs(v(s + 1, c) - v(s, c)) / 0.25);
  CHECK(lipschitz_const(v, 0.25) == doctest::Approx(steepest).epsilon(1e-12));
}

TEST_CASE("the penalized return is a certified lower bound at lambda = L_v") {
  for (double gamma : {1.0, 0.9}) {
    const auto r = certify_lower_bound(make_chain(21, 3, 10, gamma, 0), 100, 0);
    CHECK(r.policies.size() == 100);
    CHECK(r.clean());
    CHECK(r.max_telescoping_error <= 1e-10);
  }
  const auto adv = certify_lower_bound(make_adversarial_chain(21, 3, 10), 100, 0);
  CHECK(adv.clean());
}

TEST_CASE("halving lambda on the adversarial chain breaks the bound") {
  const auto r = certify_lower_bound(make_adversarial_chain(21, 3, 10), 100, 0, 0.5);
  CHECK(r.bound_violations >= 1);
  CHECK(r.bias_violations >= 1);
  CHECK(r.max_telescoping_error <= 1e-10);
}

TEST_CASE("certificate fields are consistent") {
  const ChainMdp mdp = make_chain(21, 3, 10, 1.0, 2);
  std::mt19937_64 rng(3);
  const Policy pi = random_policy(21, 3, rng);
  const auto c = certify_policy(mdp, pi);
  CHECK(c.bound_margin == doctest::Approx(c.true_return - c.penalized_return));
  CHECK(c.lambda == doctest::Approx(c.lipschitz));
  CHECK(c.penalized_return <= c.true_return + 1e-10);
  // Identical kernels: no uncertainty, no penalty, no gap.
  ChainMdp same = mdp;
  same.Phat = same.P;
  const auto z = certify_policy(same, pi);
  CHECK(z.true_return == doctest::Approx(z.penalized_return).epsilon(1e-12));
  CHECK(exact_uncertainty(same).cwiseAbs().maxCoeff() == 0.0);
}
