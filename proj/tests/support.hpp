#pragma once

// Reference computations shared by the unit tests and the acceptance
// binary. They recompute results from first principles (finite
// differences, brute-force recounts, closed forms) rather than calling the
// code under test for the quantity being checked.

#include "wombet/agent.hpp"
#include "wombet/config.hpp"
#include "wombet/datagen.hpp"
#include "wombet/nn.hpp"
#include "wombet/transfer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace support {

using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace nn = wombet::nn;

inline VectorXd central_diff(const std::function<double(const VectorXd&)>& f, VectorXd theta, double h = 1e-6) {
  VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta(i);
    theta(i) = keep + h;
    const double up = f(theta);
    theta(i) = keep - h;
    const double down = f(theta);
    theta(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_rel_error(const VectorXd& analytic, const VectorXd& numeric, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double den = std::max({std::abs(analytic(i)), std::abs(numeric(i)), floor});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / den);
  }
  return worst;
}

inline MatrixXd uniform_matrix(Eigen::Index r, Eigen::Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline nn::Mlp<double> two_layer(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, nn::Activation act,
                                 bool layer_norm, std::mt19937_64& rng) {
  return nn::make_mlp<double>(in, {{hidden, act, layer_norm}, {out, nn::Activation::identity, false}}, rng);
}

// Max relative error between the analytic parameter gradient of `loss`
// (returned alongside the value) and central differences.
struct GradCheck {
  double max_rel_error = 0.0;
  Eigen::Index parameters = 0;
};

inline GradCheck check_gradient(nn::Mlp<double> net,
                                const std::function<std::pair<double, nn::Gradients<double>>(const nn::Mlp<double>&)>& loss,
                                double h = 1e-6) {
  const VectorXd analytic = nn::flatten(loss(net).second);
  const VectorXd theta = nn::flatten(net);
  auto f = [&](const VectorXd& t) {
    nn::Mlp<double> probe = net;
    nn::unflatten(t, probe);
    return loss(probe).first;
  };
  return {max_rel_error(analytic, central_diff(f, theta, h)), theta.size()};
}

// Actor loss through a fixed smooth critic; the critic's dQ/da comes from
// its own input gradient.
inline GradCheck actor_gradient_check(std::uint64_t seed, nn::Activation act = nn::Activation::tanh) {
  std::mt19937_64 rng(seed);
  const int obs_dim = 3, m = 2, batch = 7;
  const auto actor = two_layer(obs_dim, 16, 2 * m, act, false, rng);
  const auto critic = two_layer(obs_dim + m, 16, 1, nn::Activation::tanh, true, rng);
  const MatrixXd obs = uniform_matrix(obs_dim, batch, -1.0, 1.0, rng);
  const MatrixXd noise = normal_matrix(m, batch, rng);
  wombet::QFn<double> q_fn = [&](const MatrixXd& a, Eigen::RowVectorXd& q, MatrixXd& dq) {
    MatrixXd x(obs_dim + m, batch);
    x << obs, a;
    auto fr = nn::forward(critic, x);
    q = fr.output.row(0);
    MatrixXd dx;
    nn::backward(critic, fr.tape, MatrixXd(MatrixXd::Ones(1, batch)), &dx);
    dq = dx.bottomRows(m);
  };
  return check_gradient(actor, [&](const nn::Mlp<double>& net) {
    auto r = wombet::actor_loss_and_grad<double>(net, obs, noise, q_fn, 0.3, true);
    return std::make_pair(r.loss, r.grads);
  });
}

inline GradCheck critic_gradient_check(std::uint64_t seed, nn::Activation act = nn::Activation::tanh,
                                       bool layer_norm = true) {
  std::mt19937_64 rng(seed);
  const int in = 5, batch = 9;
  const auto critic = two_layer(in, 16, 1, act, layer_norm, rng);
  const MatrixXd x = uniform_matrix(in, batch, -1.0, 1.0, rng);
  const Eigen::RowVectorXd y = uniform_matrix(1, batch, -2.0, 2.0, rng);
  return check_gradient(critic, [&](const nn::Mlp<double>& net) {
    auto r = wombet::critic_loss_and_grad<double>(net, x, y);
    return std::make_pair(r.loss, r.grads);
  });
}

// Gaussian NLL through a network with a [mean; raw log-variance] head.
inline GradCheck nll_gradient_check(std::uint64_t seed, nn::Activation act = nn::Activation::tanh) {
  std::mt19937_64 rng(seed);
  const int in = 4, n = 3, batch = 8;
  const auto net = two_layer(in, 16, 2 * n, act, false, rng);
  const MatrixXd x = uniform_matrix(in, batch, -1.0, 1.0, rng);
  const MatrixXd y = uniform_matrix(n, batch, -1.0, 1.0, rng);
  return check_gradient(net, [&](const nn::Mlp<double>& probe) {
    auto fr = nn::forward(probe, x);
    auto l = nn::gaussian_head_nll<double>(fr.output, y, -10.0, 1.0);
    return std::make_pair(l.loss, nn::backward(probe, fr.tape, l.output_grad));
  });
}

// Bellman-target pessimism: the ensemble target against the target each
// single member would produce with the same next action draw.
struct PessimismAudit {
  long batches = 0;
  long comparisons = 0;
  long violations = 0;     // y > y_i for some member i
  long not_attained = 0;   // y differs from every y_i
};

inline PessimismAudit audit_ensemble_min(int batches, int batch_size, std::uint64_t seed) {
  using namespace wombet;
  AgentConfig cfg;
  cfg.critics = 3;
  cfg.actor_hidden = {32, 32};
  cfg.critic_hidden = {32, 32};
  Agent<double> agent(2, 1, {true, false}, cfg, seed);
  std::vector<Agent<double>> single;
  for (const auto& member : agent.target_critics) {
    Agent<double> a = agent;
    a.target_critics = {member};
    single.push_back(std::move(a));
  }
  std::mt19937_64 rng(seed + 1);
  PessimismAudit audit;
  for (int b = 0; b < batches; ++b) {
    Batch<double> batch;
    batch.states = uniform_matrix(2, batch_size, -4.0, 4.0, rng);
    batch.next_states = uniform_matrix(2, batch_size, -4.0, 4.0, rng);
    batch.actions = uniform_matrix(1, batch_size, -1.0, 1.0, rng);
    batch.rewards = uniform_matrix(1, batch_size, -10.0, 0.0, rng);
    batch.done = (uniform_matrix(1, batch_size, 0.0, 1.0, rng).array() < 0.1).cast<double>();
    batch.source = (uniform_matrix(1, batch_size, 0.0, 1.0, rng).array() < 0.5).cast<double>();
    batch.uncertainty = uniform_matrix(1, batch_size, 0.0, 1.0, rng);
    std::mt19937_64 draw(rng());
    std::mt19937_64 copy = draw;
    const Eigen::RowVectorXd y = bellman_target(agent, batch, copy);
    std::vector<Eigen::RowVectorXd> yi;
    for (const auto& a : single) {
      std::mt19937_64 c = draw;
      yi.push_back(bellman_target(a, batch, c));
    }
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      bool attained = false;
      for (const auto& v : yi) {
        ++audit.comparisons;
        if (y(j) > v(j)) ++audit.violations;
        if (y(j) == v(j)) attained = true;
      }
      if (!attained) ++audit.not_attained;
    }
    ++audit.batches;
  }
  return audit;
}

// Critic output growth under input scaling: max |Q| on in-distribution
// pendulum inputs, and on the same inputs scaled by `scale`. The critic is
// first regressed for a few hundred steps onto a bounded target so that
// its output layer is not at initialization scale.
struct ScalingProbe {
  double in_max = 0.0;
  double scaled_max = 0.0;
  double ratio() const { return scaled_max / in_max; }
};

inline ScalingProbe critic_scaling_probe(bool layer_norm, double scale, std::uint64_t seed) {
  using namespace wombet;
  AgentConfig cfg;
  cfg.critic_layer_norm = layer_norm;
  Agent<double> agent(2, 1, {true, false}, cfg, seed);
  auto& critic = agent.critics.front();
  std::mt19937_64 rng(seed + 7);
  auto sample_inputs = [&](int n) {
    const MatrixXd states = (MatrixXd(2, n) << uniform_matrix(1, n, -M_PI, M_PI, rng),
                             uniform_matrix(1, n, -8.0, 8.0, rng)).finished();
    return agent.critic_input(agent.observe(states), uniform_matrix(1, n, -1.0, 1.0, rng));
  };
  nn::AdamState<double> opt = nn::AdamState<double>::for_network(critic, 1e-3);
  for (int step = 0; step < 300; ++step) {
    const MatrixXd x = sample_inputs(64);
    const Eigen::RowVectorXd y = -(x.row(0).array() - 1.0).square() * 20.0 - x.row(2).array().square() * 0.5;
    auto l = critic_loss_and_grad<double>(critic, x, y);
    nn::adam_step(critic, l.grads, opt);
  }
  const MatrixXd x = sample_inputs(2000);
  ScalingProbe p;
  p.in_max = nn::predict(critic, x).cwiseAbs().maxCoeff();
  p.scaled_max = nn::predict(critic, MatrixXd(x * scale)).cwiseAbs().maxCoeff();
  return p;
}

// Brute-force filter recount. Thresholds and the rule come from the
// dataset's own provenance; statistics are recomputed from raw rows.
struct FilterAudit {
  long candidates = 0;
  long persisted_episodes = 0;
  long rows = 0;
  long decision_mismatches = 0;
  long statistic_mismatches = 0;
  long persisted_but_rejected = 0;
  std::vector<std::string> problems;
};

inline double threshold_of(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>() == "inf" ? INFINITY : -INFINITY;
  return j.get<double>();
}

inline bool oracle_accept(const std::string& rule, double u_bar, double ret, double u_th, double j_th, int length) {
  if (length == 0) return false;
  const bool u_ok = u_bar <= u_th, j_ok = ret >= j_th;
  if (rule == "dual") return u_ok && j_ok;
  if (rule == "reward-only") return j_ok;
  if (rule == "uncertainty-only") return u_ok;
  return true;
}

inline FilterAudit audit_filter(const wombet::OfflineDataset& ds) {
  FilterAudit a;
  struct Gen {
    int first = 0, count = 0;
    double gamma = 0.0, u_th = 0.0, j_th = 0.0;
    std::string rule;
  };
  std::vector<Gen> gens;
  for (const auto& g : ds.meta.at("generations")) {
    const auto& f = g.at("filter");
    gens.push_back({g.at("first_episode_id").get<int>(), g.at("episodes").get<int>(), g.at("gamma").get<double>(),
                    threshold_of(f.at("u_threshold")), threshold_of(f.at("return_threshold")),
                    f.at("rule").get<std::string>()});
  }
  auto gen_of = [&](int episode) -> const Gen* {
    for (const auto& g : gens)
      if (episode >= g.first && episode < g.first + g.count) return &g;
    return nullptr;
  };

  std::map<int, std::vector<const wombet::DatasetRow*>> by_episode;
  for (const auto& r : ds.rows) by_episode[r.episode].push_back(&r);
  a.rows = static_cast<long>(ds.rows.size());

  for (const auto& c : ds.candidates) {
    ++a.candidates;
    const Gen* g = gen_of(c.episode);
    if (g == nullptr) {
      a.problems.push_back("episode " + std::to_string(c.episode) + " has no generation");
      ++a.decision_mismatches;
      continue;
    }
    double u_bar = c.mean_uncertainty, ret = c.ret;
    const auto it = by_episode.find(c.episode);
    if (it != by_episode.end()) {
      ++a.persisted_episodes;
      double su = 0.0, sr = 0.0, disc = 1.0;
      for (std::size_t k = 0; k < it->second.size(); ++k) {
        const auto* row = it->second[k];
        if (row->step != static_cast<int>(k)) a.problems.push_back("episode " + std::to_string(c.episode) + " steps out of order");
        su += row->transition.uncertainty;
        sr += disc * row->source_reward;
        disc *= g->gamma;
      }
      u_bar = su / static_cast<double>(it->second.size());
      ret = sr;
      if (u_bar != c.mean_uncertainty || ret != c.ret ||
          static_cast<int>(it->second.size()) != c.length) {
        ++a.statistic_mismatches;
        a.problems.push_back("episode " + std::to_string(c.episode) + " statistics differ from its record");
      }
      if (!c.accepted) ++a.persisted_but_rejected;
    }
    const bool expect = oracle_accept(g->rule, u_bar, ret, g->u_th, g->j_th, c.length);
    if (expect != c.accepted || (c.accepted && it == by_episode.end() && c.length > 0)) {
      ++a.decision_mismatches;
      a.problems.push_back("episode " + std::to_string(c.episode) + " decision differs");
    }
  }
  return a;
}

inline std::set<std::size_t> accepted_set(const std::vector<wombet::Trajectory>& pool, const std::string& rule,
                                          double u_th, double j_th) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (oracle_accept(rule, pool[i].mean_uncertainty, pool[i].ret, u_th, j_th, static_cast<int>(pool[i].steps.size())))
      s.insert(i);
  return s;
}

// Controller under hostile TD streams; returns the number of alpha values
// outside [alpha_min, alpha_max] and the number of updates fed.
struct ControllerStress {
  long updates = 0;
  long out_of_range = 0;
  long rejected = 0;
};

inline ControllerStress stress_controller(const wombet::ControllerConfig& cfg, std::uint64_t seed) {
  ControllerStress out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::function<double(int)>> streams = {
      [](int) { return 0.0; },
      [](int k) { return k % 2 ? 1e12 : 0.0; },
      [](int) { return 1e300; },
      [](int) { return 1e-300; },
      [](int k) { return k == 0 ? 1e-320 : 0.0; },
      [&](int) { return std::exp(unit(rng) * 80.0 - 40.0); },
      [&](int k) { return k < 10 ? 1e-6 : 1e6; },
      [&](int k) {
        const double bad[] = {NAN, INFINITY, -1.0, -INFINITY};
        return k % 3 == 0 ? bad[(k / 3) % 4] : unit(rng);
      },
  };
  for (auto& stream : streams) {
    wombet::MixController ctl(cfg);
    for (int k = 0; k < 2000; ++k) {
      const double d = stream(k);
      if (!ctl.update(d)) ++out.rejected;
      ++out.updates;
      if (ctl.initialized() && !(ctl.alpha() >= cfg.alpha_min && ctl.alpha() <= cfg.alpha_max)) ++out.out_of_range;
    }
  }
  return out;
}

// Max |dbar_k - closed form| for a constant stream c after a first value d0:
// dbar_k = c + (d0 - c)(1 - beta)^k.
inline double ema_closed_form_error(double beta, double d0, double c, int steps) {
  wombet::ControllerConfig cfg;
  cfg.ema_rate = beta;
  wombet::MixController ctl(cfg);
  ctl.update(d0);
  double worst = 0.0;
  for (int k = 1; k <= steps; ++k) {
    ctl.update(c);
    worst = std::max(worst, std::abs(ctl.delta_bar() - (c + (d0 - c) * std::pow(1.0 - beta, k))));
  }
  return worst;
}

// Mixed-batch composition over alpha = 0, 0.01, ..., 1: the offline count
// must equal round(alpha * B) and the pointers must come from the right pool.
struct CompositionCheck {
  int alphas = 0;
  int count_mismatches = 0;
  int source_mismatches = 0;
};

inline CompositionCheck check_composition(int batch_size, std::uint64_t seed) {
  std::vector<wombet::Transition> offline(50);
  wombet::ReplayBuffer online(100);
  for (int i = 0; i < 50; ++i) {
    offline[static_cast<std::size_t>(i)].state = Eigen::VectorXd::Constant(1, i);
    offline[static_cast<std::size_t>(i)].from_source = true;
  }
  for (int i = 0; i < 70; ++i) {
    wombet::Transition t;
    t.state = Eigen::VectorXd::Constant(1, 1000 + i);
    online.push(t);
  }
  CompositionCheck c;
  for (int k = 0; k <= 100; ++k) {
    const double alpha = k / 100.0;
    const auto s = wombet::sample_mixed(offline, online, alpha, batch_size, seed + static_cast<std::uint64_t>(k));
    const long expect = std::lround(alpha * batch_size);
    ++c.alphas;
    if (s.offline_count != expect || static_cast<int>(s.items.size()) != batch_size) ++c.count_mismatches;
    long from_offline = 0;
    for (const auto* t : s.items) {
      const bool in_offline = t >= offline.data() && t < offline.data() + offline.size();
      from_offline += in_offline;
      if (in_offline != t->from_source) ++c.source_mismatches;
    }
    if (from_offline != expect) ++c.count_mismatches;
  }
  return c;
}

// A configuration small enough for end-to-end runs inside unit tests.
inline wombet::ExperimentConfig tiny_config() {
  wombet::ExperimentConfig cfg;
  const std::pair<const char*, const char*> settings[] = {
      {"budget", "800"},
      {"datagen.seed_transitions", "600"},
      {"model.batch_size", "64"},
      {"model.epochs", "3"},
      {"model.hidden", "32,32"},
      {"planner.horizon", "5"},
      {"planner.population", "16"},
      {"planner.iterations", "2"},
      {"datagen.episodes", "4"},
      {"datagen.episode_len", "30"},
      {"datagen.refine_every", "400"},
      {"datagen.refine_episodes", "2"},
      {"agent.batch_size", "32"},
      {"agent.actor_hidden", "32,32"},
      {"agent.critic_hidden", "32,32"},
      {"controller.bootstrap_steps", "200"},
      {"controller.measure_every", "10"},
      {"train.eval_every", "400"},
      {"train.eval_episodes", "2"},
      {"train.update_after", "100"},
  };
  for (const auto& [k, v] : settings) wombet::apply_setting(cfg, k, v);
  return cfg;
}

// Enough candidates for filter statistics, still quick to generate.
inline wombet::ExperimentConfig filter_fixture_config() {
  wombet::ExperimentConfig cfg = tiny_config();
  wombet::apply_setting(cfg, "datagen.seed_transitions", "1500");
  wombet::apply_setting(cfg, "model.epochs", "10");
  wombet::apply_setting(cfg, "datagen.episodes", "15");
  wombet::apply_setting(cfg, "datagen.episode_len", "40");
  return cfg;
}

}  // namespace support
