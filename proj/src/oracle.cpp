#include "wombet/oracle.hpp"

#include "wombet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace wombet::oracle {

namespace {

void check_distribution_rows(const Eigen::MatrixXd& k, int n, const char* what) {
  if (k.rows() != n || k.cols() != n) throw PreconditionError(std::string(what) + ": kernel has the wrong shape");
  if ((k.array() < 0.0).any()) throw PreconditionError(std::string(what) + ": negative transition probability");
  for (int s = 0; s < n; ++s)
    if (std::abs(k.row(s).sum() - 1.0) > 1e-12) throw PreconditionError(std::string(what) + ": row does not sum to 1");
}

// Row s of the result is the distribution of min(max(s' + shift, 0), n-1), s' ~ row s of k.
Eigen::MatrixXd shifted(const Eigen::MatrixXd& k, int shift) {
  const int n = static_cast<int>(k.rows());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < n; ++s)
    for (int j = 0; j < n; ++j) out(s, std::clamp(j + shift, 0, n - 1)) += k(s, j);
  return out;
}

Eigen::MatrixXd drift_kernel(int n, int drift, double slip) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    const int c = s + drift;
    k(s, std::clamp(c, 0, n - 1)) += 1.0 - 2.0 * slip;
    k(s, std::clamp(c - 1, 0, n - 1)) += slip;
    k(s, std::clamp(c + 1, 0, n - 1)) += slip;
  }
  return k;
}

// Renormalize rows exactly so row sums are 1 to rounding.
void tidy(Eigen::MatrixXd& k) {
  for (Eigen::Index s = 0; s < k.rows(); ++s) k.row(s) /= k.row(s).sum();
}

}  // namespace

void validate(const ChainMdp& mdp) {
  if (mdp.n < 1 || mdp.m < 1 || mdp.horizon < 0 || !(mdp.spacing > 0.0))
    throw PreconditionError("chain: bad dimensions");
  if (static_cast<int>(mdp.P.size()) != mdp.m || static_cast<int>(mdp.Phat.size()) != mdp.m)
    throw PreconditionError("chain: need one kernel per action");
  for (int a = 0; a < mdp.m; ++a) {
    check_distribution_rows(mdp.P[static_cast<std::size_t>(a)], mdp.n, "P");
    check_distribution_rows(mdp.Phat[static_cast<std::size_t>(a)], mdp.n, "Phat");
  }
  if (mdp.reward.rows() != mdp.n || mdp.reward.cols() != mdp.m) throw PreconditionError("chain: reward shape");
  if (mdp.initial.size() != mdp.n || (mdp.initial.array() < 0.0).any() || std::abs(mdp.initial.sum() - 1.0) > 1e-12)
    throw PreconditionError("chain: initial distribution");
  if (!(mdp.gamma > 0.0 && mdp.gamma <= 1.0)) throw PreconditionError("chain: gamma must be in (0, 1]");
}

ChainMdp make_chain(int n, int m, int horizon, double gamma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ChainMdp mdp;
  mdp.n = n;
  mdp.m = m;
  mdp.horizon = horizon;
  mdp.gamma = gamma;
  mdp.reward.resize(n, m);
  for (Eigen::Index i = 0; i < mdp.reward.size(); ++i) mdp.reward.data()[i] = 2.0 * unit(rng) - 1.0;
  mdp.initial = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int a = 0; a < m; ++a) {
    const int drift = a - (m - 1) / 2;
    Eigen::MatrixXd p = drift_kernel(n, drift, 0.1);
    tidy(p);
    Eigen::MatrixXd ph(n, n);
    const Eigen::MatrixXd left = shifted(p, -1), right = shifted(p, 1);
    for (int s = 0; s < n; ++s) {
      const double eps = 0.5 * unit(rng);
      const bool go_right = unit(rng) < 0.5;
      ph.row(s) = (1.0 - eps) * p.row(s) + eps * (go_right ? right.row(s) : left.row(s));
    }
    tidy(ph);
    mdp.P.push_back(std::move(p));
    mdp.Phat.push_back(std::move(ph));
  }
  validate(mdp);
  return mdp;
}

ChainMdp make_adversarial_chain(int n, int m, int horizon) {
  ChainMdp mdp;
  mdp.n = n;
  mdp.m = m;
  mdp.horizon = horizon;
  mdp.gamma = 1.0;
  mdp.reward.resize(n, m);
  for (int s = 0; s < n; ++s) mdp.reward.row(s).setConstant(mdp.spacing * s);
  mdp.initial = Eigen::VectorXd::Zero(n);
  mdp.initial(0) = 1.0;
  // Right-moving conveyor; the model error sits in the states visited
  // first, where the remaining horizon (and so the slope of V) is largest.
  const int perturbed = std::max(1, n / 4);
  for (int a = 0; a < m; ++a) {
    Eigen::MatrixXd p = drift_kernel(n, a, 0.1);
    tidy(p);
    Eigen::MatrixXd ph = p;
    const Eigen::MatrixXd right = shifted(p, 1);
    for (int s = 0; s < perturbed; ++s) ph.row(s) = right.row(s);
    mdp.P.push_back(std::move(p));
    mdp.Phat.push_back(std::move(ph));
  }
  validate(mdp);
  return mdp;
}

Policy random_policy(int n, int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Policy pi(n, m);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < m; ++a) pi(s, a) = unit(rng) + 1e-3;
    pi.row(s) /= pi.row(s).sum();
  }
  return pi;
}

Eigen::MatrixXd value_dp(const ChainMdp& mdp, const Policy& pi, const std::vector<Eigen::MatrixXd>& kernel,
                         const Eigen::MatrixXd& reward) {
  if (pi.rows() != mdp.n || pi.cols() != mdp.m) throw PreconditionError("value_dp: policy shape");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(mdp.n, mdp.horizon + 1);
  for (int t = mdp.horizon - 1; t >= 0; --t) {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(mdp.n);
    for (int a = 0; a < mdp.m; ++a) {
      const Eigen::VectorXd q = reward.col(a) + mdp.gamma * (kernel[static_cast<std::size_t>(a)] * v.col(t + 1));
      col += pi.col(a).cwiseProduct(q);
    }
    v.col(t) = col;
  }
  return v;
}

Eigen::MatrixXd state_occupancy(const ChainMdp& mdp, const Policy& pi, const std::vector<Eigen::MatrixXd>& kernel) {
  Eigen::MatrixXd d(mdp.n, std::max(mdp.horizon, 1));
  Eigen::VectorXd cur = mdp.initial;
  for (int t = 0; t < mdp.horizon; ++t) {
    d.col(t) = cur;
    Eigen::VectorXd next = Eigen::VectorXd::Zero(mdp.n);
    for (int a = 0; a < mdp.m; ++a)
      next += kernel[static_cast<std::size_t>(a)].transpose() * cur.cwiseProduct(pi.col(a));
    cur = next;
  }
  return d;
}

double w1_1d(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double spacing) {
  if (p.size() != q.size()) throw PreconditionError("w1_1d: distributions on different lattices");
  if ((p.array() < 0.0).any() || (q.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9 ||
      std::abs(q.sum() - 1.0) > 1e-9)
    throw PreconditionError("w1_1d: inputs must be normalized distributions");
  double cp = 0.0, cq = 0.0, total = 0.0;
  for (Eigen::Index i = 0; i + 1 < p.size(); ++i) {
    cp += p(i);
    cq += q(i);
    total += std::abs(cp - cq);
  }
  return spacing * total;
}

double lipschitz_const(const Eigen::MatrixXd& values, double spacing) {
  double best = 0.0;
  for (Eigen::Index t = 0; t < values.cols(); ++t)
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      for (Eigen::Index j = i + 1; j < values.rows(); ++j)
        best = std::max(best, std::abs(values(i, t) - values(j, t)) / (spacing * static_cast<double>(j - i)));
  return best;
}

Eigen::MatrixXd exact_uncertainty(const ChainMdp& mdp) {
  Eigen::MatrixXd u(mdp.n, mdp.m);
  for (int a = 0; a < mdp.m; ++a)
    for (int s = 0; s < mdp.n; ++s)
      u(s, a) = w1_1d(mdp.P[static_cast<std::size_t>(a)].row(s).transpose(),
                      mdp.Phat[static_cast<std::size_t>(a)].row(s).transpose(), mdp.spacing);
  return u;
}

PolicyCertificate certify_policy(const ChainMdp& mdp, const Policy& pi, double lambda_scale, double tolerance) {
  validate(mdp);
  PolicyCertificate c;
  const Eigen::MatrixXd u = exact_uncertainty(mdp);
  const Eigen::MatrixXd v = value_dp(mdp, pi, mdp.P, mdp.reward);
  const Eigen::MatrixXd vhat = value_dp(mdp, pi, mdp.Phat, mdp.reward);
  c.lipschitz = lipschitz_const(v, mdp.spacing);
  c.lambda = lambda_scale * c.lipschitz;
  const Eigen::MatrixXd vpen = value_dp(mdp, pi, mdp.Phat, mdp.reward - c.lambda * u);
  c.true_return = mdp.initial.dot(v.col(0));
  c.model_return = mdp.initial.dot(vhat.col(0));
  c.penalized_return = mdp.initial.dot(vpen.col(0));
  c.bound_margin = c.true_return - c.penalized_return;

  // One-step bias G_t(s, a) = gamma (Phat - P) V_{t+1} and the telescoped sum.
  const Eigen::MatrixXd occ = state_occupancy(mdp, pi, mdp.Phat);
  double telescoped = 0.0, discount = 1.0;
  c.worst_bias_margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < mdp.horizon; ++t) {
    for (int a = 0; a < mdp.m; ++a) {
      const auto& pa = mdp.P[static_cast<std::size_t>(a)];
      const auto& ha = mdp.Phat[static_cast<std::size_t>(a)];
      const Eigen::VectorXd g = mdp.gamma * (ha * v.col(t + 1) - pa * v.col(t + 1));
      telescoped += discount * occ.col(t).cwiseProduct(pi.col(a)).dot(g);
      for (int s = 0; s < mdp.n; ++s) {
        const double margin = c.lambda * u(s, a) - std::abs(g(s));
        c.worst_bias_margin = std::min(c.worst_bias_margin, margin);
        if (margin < -tolerance) ++c.bias_violations;
      }
    }
    discount *= mdp.gamma;
  }
  if (mdp.horizon == 0) c.worst_bias_margin = 0.0;
  c.telescoping_error = std::abs((c.model_return - c.true_return) - telescoped);
  return c;
}

CertificationReport certify_lower_bound(const ChainMdp& mdp, int n_policies, std::uint64_t seed, double lambda_scale,
                                        double tolerance) {
  CertificationReport r;
  r.lambda_scale = lambda_scale;
  r.tolerance = tolerance;
  r.worst_bound_margin = std::numeric_limits<double>::infinity();
  r.worst_bias_margin = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n_policies; ++i) {
    const Policy pi = random_policy(mdp.n, mdp.m, rng);
    PolicyCertificate c = certify_policy(mdp, pi, lambda_scale, tolerance);
    if (c.bound_margin < -tolerance) ++r.bound_violations;
    r.bias_violations += c.bias_violations;
    r.worst_bound_margin = std::min(r.worst_bound_margin, c.bound_margin);
    r.worst_bias_margin = std::min(r.worst_bias_margin, c.worst_bias_margin);
    r.max_telescoping_error = std::max(r.max_telescoping_error, c.telescoping_error);
    r.policies.push_back(c);
  }
  return r;
}

std::string format_report(const std::string& title, const CertificationReport& r) {
  std::ostringstream os;
  char buf[256];
  os << title << "\n";
  std::snprintf(buf, sizeof(buf), "  policies              %zu\n  lambda                %.3g x L_v\n",
                r.policies.size(), r.lambda_scale);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "  bound violations      %ld (worst margin %.6g)\n"
                "  bias violations       %ld (worst margin %.6g)\n"
                "  telescoping error     %.3g\n",
                r.bound_violations, r.worst_bound_margin, r.bias_violations, r.worst_bias_margin,
                r.max_telescoping_error);
  os << buf;
  return os.str();
}

}  // namespace wombet::oracle
