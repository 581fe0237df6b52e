#pragma once

// Exact tabular machinery for checking the penalized-model lower bound
//
//   J_P(pi) >= E_{pi, Phat}[ sum_t gamma^t (r(s_t, a_t) - lambda u(s_t, a_t)) ]
//
// on a 1D lattice chain, where u(s, a) = W1(P(.|s,a), Phat(.|s,a)) and
// lambda >= L_v, the Lipschitz constant of the true value function.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wombet::oracle {

struct ChainMdp {
  int n = 21;
  int m = 3;
  double spacing = 1.0;
  std::vector<Eigen::MatrixXd> P;     // per action, n x n, row s = next-state distribution
  std::vector<Eigen::MatrixXd> Phat;  // model kernel, same layout
  Eigen::MatrixXd reward;             // n x m
  Eigen::VectorXd initial;            // n, distribution of s_0
  int horizon = 10;
  double gamma = 1.0;  // 1: undiscounted finite horizon
};

// Throws PreconditionError unless every row of P and Phat is a distribution
// (entries >= 0, sums within 1e-12 of 1) and shapes agree.
void validate(const ChainMdp& mdp);

// Random lattice chain: action a drifts by (a - (m-1)/2) sites with slip
// to the neighbours; Phat mixes P with a kernel shifted by one site at a
// random strength per (s, a).
ChainMdp make_chain(int n, int m, int horizon, double gamma, std::uint64_t seed);

// Reward increasing to the right, start at the left end, and a model that
// pushes every state one site right (so Phat is optimistic exactly where
// the value function is steep).
ChainMdp make_adversarial_chain(int n, int m, int horizon);

using Policy = Eigen::MatrixXd;  // n x m, stationary, rows sum to 1

Policy random_policy(int n, int m, std::mt19937_64& rng);

// Backward DP. Column t of the result holds V_t; column H is zero.
Eigen::MatrixXd value_dp(const ChainMdp& mdp, const Policy& pi, const std::vector<Eigen::MatrixXd>& kernel,
                         const Eigen::MatrixXd& reward);
inline Eigen::MatrixXd value_dp(const ChainMdp& mdp, const Policy& pi) { return value_dp(mdp, pi, mdp.P, mdp.reward); }

// Distribution of s_t under pi and the kernel; column t, t = 0..H-1.
Eigen::MatrixXd state_occupancy(const ChainMdp& mdp, const Policy& pi, const std::vector<Eigen::MatrixXd>& kernel);

// h * sum_i |CDF_p(i) - CDF_q(i)|.
double w1_1d(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double spacing);

// max over columns and state pairs of |V(s1) - V(s2)| / |s1 - s2|.
double lipschitz_const(const Eigen::MatrixXd& values, double spacing);

// u(s, a) = W1 between the true and model next-state distributions (n x m).
Eigen::MatrixXd exact_uncertainty(const ChainMdp& mdp);

struct PolicyCertificate {
  double true_return = 0.0;       // J_P
  double model_return = 0.0;      // J_Phat
  double penalized_return = 0.0;  // J~_Phat with r - lambda u
  double lambda = 0.0;
  double lipschitz = 0.0;
  double bound_margin = 0.0;      // J_P - J~_Phat, >= 0 when the bound holds
  double telescoping_error = 0.0; // |(J_Phat - J_P) - sum_t E[G_t]|
  double worst_bias_margin = 0.0; // min over (t, s, a) of lambda u - |G_t|
  long bias_violations = 0;
};

struct CertificationReport {
  std::vector<PolicyCertificate> policies;
  long bound_violations = 0;
  long bias_violations = 0;
  double worst_bound_margin = 0.0;
  double worst_bias_margin = 0.0;
  double max_telescoping_error = 0.0;
  double lambda_scale = 1.0;
  double tolerance = 1e-10;

  bool clean() const { return bound_violations == 0 && bias_violations == 0; }
};

// lambda = lambda_scale * L_v (per policy). A bound violation is
// J_P - J~ < -tolerance; a bias violation is |G_t(s,a)| > lambda u(s,a) + tolerance.
PolicyCertificate certify_policy(const ChainMdp& mdp, const Policy& pi, double lambda_scale = 1.0,
                                 double tolerance = 1e-10);
CertificationReport certify_lower_bound(const ChainMdp& mdp, int n_policies, std::uint64_t seed,
                                        double lambda_scale = 1.0, double tolerance = 1e-10);

std::string format_report(const std::string& title, const CertificationReport& report);

}  // namespace wombet::oracle
