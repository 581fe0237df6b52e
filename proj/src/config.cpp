#include "wombet/config.hpp"

#include "wombet/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace wombet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || std::isnan(x))
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  return x;
}

long to_long(const std::string& key, const std::string& v) {
  long x = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return x;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_long(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("bad switch for " + key + ": '" + v + "' (use on/off)");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(to_int(key, s));
  return out;
}

Eigen::VectorXd to_vec(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  Eigen::VectorXd out(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) out(static_cast<Eigen::Index>(i)) = to_double(key, items[i]);
  return out;
}

std::string vec_str(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v(i));
  return out;
}

struct Entry {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define WOMBET_DOUBLE(KEY, FIELD, HELP)                                                  \
  Entry {                                                                                \
    KEY, HELP, [](const ExperimentConfig& c) { return fmt(c.FIELD); },                   \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_double(KEY, v); } \
  }
#define WOMBET_INT(KEY, FIELD, HELP)                                                                        \
  Entry {                                                                                                   \
    KEY, HELP, [](const ExperimentConfig& c) { return std::to_string(c.FIELD); },                           \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(to_long(KEY, v)); } \
  }
#define WOMBET_BOOL(KEY, FIELD, HELP)                                                                 \
  Entry {                                                                                             \
    KEY, HELP, [](const ExperimentConfig& c) { return std::string(c.FIELD ? "on" : "off"); },        \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); }                  \
  }
#define WOMBET_INTS(KEY, FIELD, HELP)                                                                      \
  Entry {                                                                                                  \
    KEY, HELP, [](const ExperimentConfig& c) { return join(c.FIELD, [](int x) { return std::to_string(x); }); }, \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_ints(KEY, v); }                     \
  }
#define WOMBET_VEC(KEY, FIELD, HELP)                                                    \
  Entry {                                                                               \
    KEY, HELP, [](const ExperimentConfig& c) { return vec_str(c.FIELD); },              \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_vec(KEY, v); }     \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"task", "task pair: pendulum | point_mass (resets every env.*, source.*, target.* key)",
       [](const ExperimentConfig& c) { return c.task; },
       [](ExperimentConfig& c, const std::string& v) {
         c.pair = make_task_pair(v);
         c.task = v;
       }},
      {"seeds", "comma-separated run seeds",
       [](const ExperimentConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(static_cast<std::uint64_t>(to_long("seeds", s)));
       }},
      WOMBET_INT("budget", budget, "target environment steps per run"),
      {"out_dir", "output directory", [](const ExperimentConfig& c) { return c.out_dir; },
       [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},

      WOMBET_INT("env.horizon", pair.dynamics.horizon, "steps per episode"),
      WOMBET_DOUBLE("env.dt", pair.dynamics.dt, "seconds per step"),
      WOMBET_INT("env.substeps", pair.dynamics.substeps, "RK4 substeps per step"),
      WOMBET_DOUBLE("env.mass", pair.dynamics.mass, "mass"),
      WOMBET_DOUBLE("env.length", pair.dynamics.length, "pendulum length"),
      WOMBET_DOUBLE("env.gravity", pair.dynamics.gravity, "gravity"),
      WOMBET_DOUBLE("env.friction", pair.dynamics.friction, "viscous friction"),
      WOMBET_DOUBLE("env.max_force", pair.dynamics.max_force, "torque / force at |a| = 1"),
      WOMBET_DOUBLE("env.gamma", pair.gamma, "task discount"),
      WOMBET_VEC("source.setpoint", pair.source.reward.setpoint, "source position setpoint"),
      WOMBET_DOUBLE("source.velocity_coef", pair.source.reward.velocity_coef, "source velocity cost"),
      WOMBET_DOUBLE("source.action_coef", pair.source.reward.action_coef, "source action cost"),
      WOMBET_VEC("source.init_low", pair.source.initial.low, "source initial box, low corner"),
      WOMBET_VEC("source.init_high", pair.source.initial.high, "source initial box, high corner"),
      WOMBET_VEC("target.setpoint", pair.target.reward.setpoint, "target position setpoint"),
      WOMBET_DOUBLE("target.velocity_coef", pair.target.reward.velocity_coef, "target velocity cost"),
      WOMBET_DOUBLE("target.action_coef", pair.target.reward.action_coef, "target action cost"),
      WOMBET_VEC("target.init_low", pair.target.initial.low, "target initial box, low corner"),
      WOMBET_VEC("target.init_high", pair.target.initial.high, "target initial box, high corner"),

      WOMBET_INT("model.ensemble_size", model.ensemble_size, "ensemble members"),
      WOMBET_INTS("model.hidden", model.hidden, "hidden widths"),
      WOMBET_DOUBLE("model.lr", model.learning_rate, "Adam learning rate"),
      WOMBET_INT("model.batch_size", model.batch_size, "minibatch size"),
      WOMBET_INT("model.epochs", model_epochs, "epochs per (re)fit"),
      WOMBET_DOUBLE("model.log_var_min", model.log_var_min, "log-variance floor (normalized)"),
      WOMBET_DOUBLE("model.log_var_max", model.log_var_max, "log-variance ceiling (normalized)"),
      WOMBET_DOUBLE("model.holdout", model.holdout_fraction, "held-out fraction"),
      {"model.uncertainty", "pairwise (max member-mean distance) | max_std",
       [](const ExperimentConfig& c) {
         return std::string(c.model.uncertainty == UncertaintyMode::max_std_norm ? "max_std" : "pairwise");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "pairwise") c.model.uncertainty = UncertaintyMode::pairwise_mean_distance;
         else if (v == "max_std") c.model.uncertainty = UncertaintyMode::max_std_norm;
         else throw ConfigError("model.uncertainty must be pairwise or max_std");
       }},

      WOMBET_INT("planner.horizon", planner.horizon, "planning horizon H"),
      WOMBET_DOUBLE("planner.penalty", planner.penalty, "uncertainty penalty lambda"),
      WOMBET_INT("planner.population", planner.population, "CEM samples per iteration"),
      WOMBET_DOUBLE("planner.elite_fraction", planner.elite_fraction, "elite fraction"),
      WOMBET_INT("planner.iterations", planner.iterations, "CEM iterations"),
      WOMBET_DOUBLE("planner.init_std", planner.init_std, "initial sampling std"),
      WOMBET_DOUBLE("planner.std_floor", planner.std_floor, "sampling std floor"),
      WOMBET_DOUBLE("planner.gamma", planner.gamma, "planning discount"),
      {"planner.propagation", "mean | sampled",
       [](const ExperimentConfig& c) {
         return std::string(c.planner.propagation == Propagation::sampled_member ? "sampled" : "mean");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "mean") c.planner.propagation = Propagation::ensemble_mean;
         else if (v == "sampled") c.planner.propagation = Propagation::sampled_member;
         else throw ConfigError("planner.propagation must be mean or sampled");
       }},

      {"filter.rule", "dual | reward-only | uncertainty-only | no-filter",
       [](const ExperimentConfig& c) { return std::string(to_string(c.filter.rule)); },
       [](ExperimentConfig& c, const std::string& v) { c.filter.rule = filter_rule_from_string(v); }},
      {"filter.mode", "quantile | explicit",
       [](const ExperimentConfig& c) { return std::string(c.filter.quantile_mode ? "quantile" : "explicit"); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "quantile") c.filter.quantile_mode = true;
         else if (v == "explicit") c.filter.quantile_mode = false;
         else throw ConfigError("filter.mode must be quantile or explicit");
       }},
      WOMBET_DOUBLE("filter.u_quantile", filter.u_quantile, "u threshold as a pool quantile"),
      WOMBET_DOUBLE("filter.return_quantile", filter.return_quantile, "return threshold as a pool quantile"),
      WOMBET_DOUBLE("filter.u_threshold", filter.u_threshold, "explicit u threshold"),
      WOMBET_DOUBLE("filter.return_threshold", filter.return_threshold, "explicit return threshold"),

      {"datagen.mode", "real-mpc | synthetic",
       [](const ExperimentConfig& c) { return std::string(to_string(c.datagen_mode)); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "real-mpc") c.datagen_mode = DatagenMode::real_mpc;
         else if (v == "synthetic") c.datagen_mode = DatagenMode::synthetic;
         else throw ConfigError("datagen.mode must be real-mpc or synthetic");
       }},
      WOMBET_INT("datagen.episodes", datagen_episodes, "candidate episodes in the first generation"),
      WOMBET_INT("datagen.episode_len", datagen_episode_len, "steps per candidate episode"),
      WOMBET_INT("datagen.seed_transitions", seed_transitions, "random source transitions for the first fit"),
      WOMBET_INT("datagen.refine_every", refine_every, "target steps between refits (0: never)"),
      WOMBET_INT("datagen.refine_episodes", refine_episodes, "candidate episodes per refresh"),

      WOMBET_INTS("agent.actor_hidden", agent.actor_hidden, "actor hidden widths"),
      WOMBET_INTS("agent.critic_hidden", agent.critic_hidden, "critic hidden widths"),
      WOMBET_INT("agent.critics", agent.critics, "critic ensemble size N"),
      WOMBET_BOOL("agent.layer_norm", agent.critic_layer_norm, "layer normalization in critics"),
      WOMBET_DOUBLE("agent.actor_lr", agent.actor_lr, "actor learning rate"),
      WOMBET_DOUBLE("agent.critic_lr", agent.critic_lr, "critic learning rate"),
      WOMBET_DOUBLE("agent.temperature_lr", agent.temperature_lr, "temperature learning rate"),
      WOMBET_DOUBLE("agent.gamma", agent.gamma, "agent discount"),
      WOMBET_DOUBLE("agent.tau", agent.tau, "Polyak coefficient"),
      WOMBET_INT("agent.batch_size", agent.batch_size, "batch size"),
      {"agent.penalty", "lambda_q; auto follows planner.penalty",
       [](const ExperimentConfig& c) { return std::isnan(c.agent.penalty) ? std::string("auto") : fmt(c.agent.penalty); },
       [](ExperimentConfig& c, const std::string& v) {
         c.agent.penalty = v == "auto" ? std::numeric_limits<double>::quiet_NaN() : to_double("agent.penalty", v);
       }},
      WOMBET_BOOL("agent.entropy", agent.entropy, "entropy bonus with learned temperature"),
      WOMBET_DOUBLE("agent.init_temperature", agent.init_temperature, "initial temperature"),
      {"agent.target_entropy", "auto (-action_dim) or a number",
       [](const ExperimentConfig& c) {
         return std::isnan(c.agent.target_entropy) ? std::string("auto") : fmt(c.agent.target_entropy);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.agent.target_entropy =
             v == "auto" ? std::numeric_limits<double>::quiet_NaN() : to_double("agent.target_entropy", v);
       }},
      WOMBET_DOUBLE("agent.reward_scale", agent.reward_scale, "reward multiplier inside critic targets"),

      WOMBET_DOUBLE("controller.ema_rate", controller.ema_rate, "EMA rate beta"),
      {"controller.gain", "auto or a positive number",
       [](const ExperimentConfig& c) { return c.controller.gain <= 0.0 ? std::string("auto") : fmt(c.controller.gain); },
       [](ExperimentConfig& c, const std::string& v) {
         c.controller.gain = v == "auto" ? 0.0 : to_double("controller.gain", v);
       }},
      WOMBET_DOUBLE("controller.auto_alpha", controller.auto_alpha, "alpha the first TD error maps to (auto gain)"),
      WOMBET_DOUBLE("controller.alpha_min", controller.alpha_min, "lower clip"),
      WOMBET_DOUBLE("controller.alpha_max", controller.alpha_max, "upper clip"),
      WOMBET_INT("controller.measure_every", controller.measure_every, "gradient steps between TD measurements"),
      WOMBET_INT("controller.bootstrap_steps", controller.bootstrap_steps, "target steps at alpha_max"),
      {"controller.fixed_alpha", "off or a constant alpha",
       [](const ExperimentConfig& c) {
         return c.controller.fixed_alpha ? fmt(*c.controller.fixed_alpha) : std::string("off");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "off") c.controller.fixed_alpha.reset();
         else c.controller.fixed_alpha = to_double("controller.fixed_alpha", v);
       }},

      WOMBET_INT("train.eval_every", eval_every, "target steps between evaluations"),
      WOMBET_INT("train.eval_episodes", eval_episodes, "deterministic episodes per evaluation"),
      WOMBET_INT("train.update_after", update_after, "target steps before the first update"),
      WOMBET_INT("train.replay_capacity", replay_capacity, "online buffer capacity"),
  };
  return table;
}

#undef WOMBET_DOUBLE
#undef WOMBET_INT
#undef WOMBET_BOOL
#undef WOMBET_INTS
#undef WOMBET_VEC

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.budget < 0) throw ConfigError("budget must be >= 0");
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  validate(cfg.pair);
  validate(cfg.planner);
  validate(cfg.filter);
  validate(resolved_agent(cfg));
  validate(cfg.controller);
  if (cfg.model.ensemble_size < 2) throw ConfigError("model.ensemble_size must be >= 2");
  if (cfg.model.batch_size < 1 || cfg.model_epochs < 1) throw ConfigError("model batch size and epochs must be >= 1");
  if (!(cfg.model.holdout_fraction > 0.0 && cfg.model.holdout_fraction < 1.0))
    throw ConfigError("model.holdout must be in (0, 1)");
  if (cfg.datagen_episodes < 0 || cfg.refine_episodes < 0 || cfg.datagen_episode_len < 1)
    throw ConfigError("datagen episode counts must be >= 0 and lengths >= 1");
  if (cfg.seed_transitions < 2L * cfg.model.batch_size)
    throw ConfigError("datagen.seed_transitions must be at least twice model.batch_size");
  if (cfg.refine_every < 0) throw ConfigError("datagen.refine_every must be >= 0");
  if (cfg.eval_every < 1 || cfg.eval_episodes < 1) throw ConfigError("evaluation cadence and episodes must be >= 1");
  if (cfg.update_after < 1 || cfg.replay_capacity < 1) throw ConfigError("train.update_after and capacity must be >= 1");
}

AgentConfig resolved_agent(const ExperimentConfig& cfg) {
  AgentConfig a = cfg.agent;
  if (std::isnan(a.penalty)) a.penalty = cfg.planner.penalty;
  return a;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries())
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::vector<std::pair<std::string, std::string>> settings;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    settings.emplace_back(key, value);
  }
  // The task key resets the environment block, so it goes first.
  for (const auto& [k, v] : settings)
    if (k == "task") apply_setting(base, k, v);
  for (const auto& [k, v] : settings)
    if (k != "task") apply_setting(base, k, v);
  validate(base);
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<std::pair<std::string, std::string>> effective_config(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(cfg));
  return out;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : effective_config(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string component_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? key : key.substr(0, dot);
}

const std::vector<ConfigKeyDoc>& config_keys() {
  static const std::vector<ConfigKeyDoc> docs = [] {
    std::vector<ConfigKeyDoc> d;
    for (const auto& e : entries()) d.push_back({e.key, e.help});
    return d;
  }();
  return docs;
}

}  // namespace wombet
