#include "wombet/experiment.hpp"

#include "wombet/errors.hpp"
#include "wombet/rng.hpp"
#include "wombet/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace wombet {

namespace {

// Seed streams. Shared between WOMBET and its ablations so that an
// ablation differs from the full run only through its patched component.
enum Stream : std::uint64_t {
  kSeedData = 1,
  kModelInit = 2,
  kAgentInit = 4,
  kTargetReset = 5,
  kActing = 6,
  kBatches = 7,
  kUpdates = 8,
  kTdBatches = 9,
  kEvaluation = 50,
  kRefit = 100,
  kGeneration = 200,
};

std::string g9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

}  // namespace

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::fixed_alpha: return "fixed-alpha";
    case Ablation::reward_only: return "reward-only";
    case Ablation::uncertainty_only: return "uncertainty-only";
    case Ablation::no_filter: return "no-filter";
    default: return "none";
  }
}

Ablation ablation_from_string(const std::string& s) {
  for (Ablation a : {Ablation::fixed_alpha, Ablation::reward_only, Ablation::uncertainty_only, Ablation::no_filter})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown ablation '" + s + "' (fixed-alpha | reward-only | uncertainty-only | no-filter)");
}

ExperimentConfig ablate(const ExperimentConfig& cfg, Ablation which) {
  ExperimentConfig out = cfg;
  switch (which) {
    case Ablation::fixed_alpha: out.controller.fixed_alpha = 0.5; break;
    case Ablation::reward_only: out.filter.rule = FilterRule::reward_only; break;
    case Ablation::uncertainty_only: out.filter.rule = FilterRule::uncertainty_only; break;
    case Ablation::no_filter: out.filter.rule = FilterRule::none; break;
    case Ablation::none: break;
  }
  return out;
}

double RunMetrics::return_at(long steps) const {
  double r = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : rows)
    if (row.env_steps <= steps) r = row.eval_mean;
  return r;
}

EvalResult evaluate_policy(const TaskPair& pair, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& policy,
                           int episodes, std::uint64_t seed) {
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    Environment env(pair, TaskId::target);
    Eigen::VectorXd s = env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    double ret = 0.0;
    for (int t = 0; t < pair.dynamics.horizon; ++t) {
      try {
        const StepResult st = env.step(policy(s));
        ret += st.reward;
        s = st.next_state;
        if (st.done) break;
      } catch (const EnvironmentFault&) {
        break;
      }
    }
    returns.push_back(ret);
  }
  EvalResult r;
  for (double x : returns) r.mean += x;
  r.mean /= static_cast<double>(returns.size());
  for (double x : returns) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(returns.size()));
  return r;
}

EvalResult evaluate_agent(const Agent<float>& agent, const TaskPair& pair, int episodes, std::uint64_t seed) {
  return evaluate_policy(pair, [&agent](const Eigen::VectorXd& s) { return mean_action(agent, s); }, episodes, seed);
}

EvalResult evaluate_random(const TaskPair& pair, int episodes, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 9999));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int m = pair.dynamics.action_dim;
  return evaluate_policy(
      pair,
      [&](const Eigen::VectorXd&) {
        Eigen::VectorXd a(m);
        for (int j = 0; j < m; ++j) a(j) = u(rng);
        return a;
      },
      episodes, seed);
}

std::vector<Transition> collect_random(const TaskPair& pair, TaskId task, long steps, std::uint64_t seed) {
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(std::max(0L, steps)));
  auto rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Environment env(pair, task);
  Eigen::VectorXd s = env.reset(rng);
  const int m = pair.dynamics.action_dim;
  while (static_cast<long>(out.size()) < steps) {
    Eigen::VectorXd a(m);
    for (int j = 0; j < m; ++j) a(j) = u(rng);
    try {
      const StepResult st = env.step(a);
      out.push_back({s, a, st.reward, st.next_state, false, task == TaskId::source, 0.0});
      s = st.done ? env.reset(rng) : st.next_state;
    } catch (const EnvironmentFault&) {
      s = env.reset(rng);
    }
  }
  return out;
}

SourcePhase run_source_phase(const ExperimentConfig& cfg, std::uint64_t seed) {
  const TaskPair& pair = cfg.pair;
  SourcePhase p{{}, EnsembleModel(pair.dynamics.state_dim, pair.dynamics.action_dim, pair.dynamics.angular, cfg.model,
                                  derive_seed(seed, kModelInit)),
                {}, {}, 0};
  p.seed_data = collect_random(pair, TaskId::source, cfg.seed_transitions, derive_seed(seed, kSeedData));
  p.source_steps = cfg.seed_transitions;
  p.report = fit(p.model, p.seed_data, cfg.model_epochs, derive_seed(seed, kRefit));

  DatagenSettings settings;
  settings.mode = cfg.datagen_mode;
  settings.episodes = cfg.datagen_episodes;
  settings.episode_len = cfg.datagen_episode_len;
  settings.first_episode_id = 0;
  settings.model_id = "seed" + std::to_string(seed) + "-fit0";
  p.generation = generate_offline_dataset(pair, p.model, cfg.planner, cfg.filter, settings, derive_seed(seed, kGeneration));
  p.source_steps += p.generation.real_steps;
  return p;
}

namespace {

RunMetrics run_impl(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& method, bool transfer) {
  validate(cfg);
  const TaskPair& pair = cfg.pair;
  RunMetrics out;
  out.method = method;
  out.task = cfg.task;
  out.seed = seed;

  std::optional<SourcePhase> src;
  std::vector<Transition> offline;
  int next_episode = 0;
  int generation = 0;
  long refresh_accepted = 0, refresh_candidates = 0;
  auto note_generation = [&](const OfflineDataset& ds) {
    refresh_accepted = static_cast<long>(ds.accepted_episodes());
    refresh_candidates = static_cast<long>(ds.candidates.size());
  };
  if (transfer) {
    src = run_source_phase(cfg, seed);
    out.source_steps = src->source_steps;
    out.dataset = src->generation.dataset;
    offline = out.dataset.transitions();
    next_episode = cfg.datagen_episodes;
    note_generation(src->generation.dataset);
  }

  Agent<float> agent(pair.dynamics.state_dim, pair.dynamics.action_dim, pair.dynamics.angular, resolved_agent(cfg),
                     derive_seed(seed, kAgentInit));
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.replay_capacity));
  MixController ctl(cfg.controller);
  const bool adaptive = transfer && !cfg.controller.fixed_alpha;
  double alpha = transfer ? ctl.alpha() : 0.0;

  const std::uint64_t eval_seed = derive_seed(seed, kEvaluation);
  const double random_return = evaluate_random(pair, cfg.eval_episodes, eval_seed).mean;
  double best = -std::numeric_limits<double>::infinity();

  long grad_steps = 0;
  double critic_acc = 0.0, actor_acc = 0.0;
  long acc_n = 0;
  auto emit_row = [&](long t) {
    const EvalResult e = evaluate_agent(agent, pair, cfg.eval_episodes, eval_seed);
    best = std::max(best, e.mean);
    MetricsRow r;
    r.env_steps = t;
    r.source_steps = out.source_steps;
    r.grad_steps = grad_steps;
    r.eval_mean = e.mean;
    r.eval_std = e.std;
    r.random_return = random_return;
    r.normalized = best > random_return ? (e.mean - random_return) / (best - random_return) : 0.0;
    r.alpha = alpha;
    r.delta_bar = ctl.delta_bar();
    r.critic_loss = acc_n ? critic_acc / static_cast<double>(acc_n) : 0.0;
    r.actor_loss = acc_n ? actor_acc / static_cast<double>(acc_n) : 0.0;
    r.temperature = agent.temperature();
    r.offline_samples = out.offline_samples;
    r.dataset_transitions = static_cast<long>(out.dataset.rows.size());
    r.dataset_episodes = static_cast<long>(out.dataset.accepted_episodes());
    r.refresh_accepted = refresh_accepted;
    r.refresh_candidates = refresh_candidates;
    r.refresh_rate = refresh_candidates ? static_cast<double>(refresh_accepted) / refresh_candidates : 0.0;
    out.rows.push_back(r);
    critic_acc = actor_acc = 0.0;
    acc_n = 0;
  };

  auto refine = [&]() {
    std::vector<Transition> data = src->seed_data;
    data.insert(data.end(), offline.begin(), offline.end());
    for (std::size_t i = 0; i < buffer.size(); ++i) data.push_back(buffer.at(i));
    ++generation;
    fit(src->model, data, cfg.model_epochs, derive_seed(seed, kRefit + static_cast<std::uint64_t>(generation)));
    DatagenSettings settings;
    settings.mode = cfg.datagen_mode;
    settings.episodes = cfg.refine_episodes;
    settings.episode_len = cfg.datagen_episode_len;
    settings.first_episode_id = next_episode;
    settings.model_id = "seed" + std::to_string(seed) + "-fit" + std::to_string(generation);
    const GenerationResult g =
        generate_offline_dataset(pair, src->model, cfg.planner, cfg.filter, settings,
                                 derive_seed(seed, kGeneration + static_cast<std::uint64_t>(generation)));
    next_episode += cfg.refine_episodes;
    out.source_steps += g.real_steps;
    merge_into(out.dataset, g.dataset);
    offline = out.dataset.transitions();
    note_generation(g.dataset);
  };

  emit_row(0);
  if (cfg.budget == 0) return out;

  auto reset_rng = make_rng(seed, kTargetReset);
  auto act_rng = make_rng(seed, kActing);
  auto batch_rng = make_rng(seed, kBatches);
  auto update_rng = make_rng(seed, kUpdates);
  auto td_rng = make_rng(seed, kTdBatches);
  Environment env(pair, TaskId::target);
  Eigen::VectorXd s = env.reset(reset_rng);

  try {
    for (long t = 1; t <= cfg.budget; ++t) {
      const Eigen::VectorXd a = sample_action(agent, s, act_rng);
      try {
        const StepResult st = env.step(a);
        buffer.push({s, a, st.reward, st.next_state, false, false, 0.0});
        s = st.done ? env.reset(reset_rng) : st.next_state;
      } catch (const EnvironmentFault&) {
        s = env.reset(reset_rng);
      }

      if (t >= cfg.update_after && !buffer.empty()) {
        if (transfer) alpha = cfg.controller.fixed_alpha ? *cfg.controller.fixed_alpha
                              : t <= cfg.controller.bootstrap_steps ? cfg.controller.alpha_max
                                                                    : ctl.alpha();
        const MixedSample ms = sample_mixed(offline, buffer, alpha, cfg.agent.batch_size, batch_rng);
        const auto batch = make_batch<float>(std::span<const Transition* const>(ms.items));
        const UpdateStats st = train_step(agent, batch, update_rng, grad_steps);
        out.offline_samples += ms.offline_count;
        ++grad_steps;
        double cl = 0.0;
        for (double l : st.critic_loss) cl += l;
        critic_acc += cl / static_cast<double>(st.critic_loss.size());
        actor_acc += st.actor.loss;
        ++acc_n;

        if (adaptive && t > cfg.controller.bootstrap_steps && grad_steps % cfg.controller.measure_every == 0) {
          const auto items = sample_online(buffer, cfg.agent.batch_size, td_rng);
          const auto online = make_batch<float>(std::span<const Transition* const>(items));
          const double delta = td_error(agent, online, td_rng);
          if (ctl.update(delta))
            out.controller.push_back({ctl.updates(), grad_steps, t, delta, ctl.delta_bar(), ctl.alpha()});
        }
      }

      if (transfer && cfg.refine_every > 0 && t % cfg.refine_every == 0 && t < cfg.budget) refine();
      if (t % cfg.eval_every == 0 || t == cfg.budget) emit_row(t);
    }
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.error = e.what();
  }
  return out;
}

}  // namespace

RunMetrics run_wombet(const ExperimentConfig& cfg, std::uint64_t seed) { return run_impl(cfg, seed, "wombet", true); }

RunMetrics run_sac_baseline(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_impl(cfg, seed, "sac", false);
}

RunMetrics run_ablation(const ExperimentConfig& cfg, Ablation which, std::uint64_t seed) {
  if (which == Ablation::none) return run_wombet(cfg, seed);
  return run_impl(ablate(cfg, which), seed, std::string("ablation:") + to_string(which), true);
}

std::string metrics_csv(const RunMetrics& m) {
  std::ostringstream os;
  os << "schema,method,task,seed,env_steps,source_steps,total_steps,grad_steps,eval_return_mean,eval_return_std,"
        "normalized_return,random_return,alpha,delta_bar,critic_loss,actor_loss,temperature,offline_samples,"
        "dataset_transitions,dataset_episodes,refresh_accepted,refresh_candidates,refresh_acceptance_rate\n";
  for (const auto& r : m.rows) {
    os << kMetricsSchema << ',' << m.method << ',' << m.task << ',' << m.seed << ',' << r.env_steps << ','
       << r.source_steps << ',' << (r.env_steps + r.source_steps) << ',' << r.grad_steps << ',' << g9(r.eval_mean)
       << ',' << g9(r.eval_std) << ',' << g9(r.normalized) << ',' << g9(r.random_return) << ',' << g9(r.alpha) << ','
       << g9(r.delta_bar) << ',' << g9(r.critic_loss) << ',' << g9(r.actor_loss) << ',' << g9(r.temperature) << ','
       << r.offline_samples << ',' << r.dataset_transitions << ',' << r.dataset_episodes << ',' << r.refresh_accepted
       << ',' << r.refresh_candidates << ',' << g9(r.refresh_rate) << '\n';
  }
  return os.str();
}

std::string controller_csv(const RunMetrics& m) {
  std::ostringstream os;
  os << "k,grad_step,env_steps,delta,delta_bar,alpha\n";
  for (const auto& c : m.controller)
    os << c.k << ',' << c.grad_step << ',' << c.env_steps << ',' << g9(c.delta) << ',' << g9(c.delta_bar) << ','
       << g9(c.alpha) << '\n';
  return os.str();
}

std::string run_stem(const RunMetrics& m) {
  std::string method = m.method;
  std::replace(method.begin(), method.end(), ':', '-');
  return method + "_" + m.task + "_seed" + std::to_string(m.seed);
}

void write_run(const RunMetrics& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = run_stem(m);
  {
    std::ofstream os(dir / (stem + ".csv"), std::ios::binary);
    os << metrics_csv(m);
  }
  {
    std::ofstream os(dir / (stem + "_controller.csv"), std::ios::binary);
    os << controller_csv(m);
  }
  if (!m.dataset.candidates.empty()) save_dataset(dir / (stem + "_dataset.wds"), m.dataset);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ParseError("missing column '" + name + "'", 0);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t offset = 0;
  bool first = true;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else if (!line.empty()) {
      if (cells.size() != t.header.size()) throw ParseError("ragged row in " + path.string(), offset);
      t.rows.push_back(std::move(cells));
    }
    offset += line.size() + 1;
  }
  return t;
}

}  // namespace wombet
