#include "wombet/agent.hpp"

namespace wombet {

void validate(const AgentConfig& cfg) {
  if (cfg.critics < 2 || cfg.critics > 10) throw ConfigError("agent.critics must be in [2, 10]");
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("agent.gamma must be in [0, 1)");
  if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) throw ConfigError("agent.tau must be in [0, 1]");
  if (cfg.batch_size < 1) throw ConfigError("agent.batch_size must be >= 1");
  if (cfg.penalty < 0.0) throw ConfigError("agent.penalty must be >= 0");
  if (!(cfg.init_temperature > 0.0)) throw ConfigError("agent.init_temperature must be > 0");
  if (!(cfg.reward_scale > 0.0)) throw ConfigError("agent.reward_scale must be > 0");
  if (!(cfg.actor_lr > 0.0 && cfg.critic_lr > 0.0 && cfg.temperature_lr >= 0.0))
    throw ConfigError("agent learning rates must be positive");
  for (int w : cfg.actor_hidden)
    if (w < 1) throw ConfigError("agent.actor_hidden widths must be >= 1");
  for (int w : cfg.critic_hidden)
    if (w < 1) throw ConfigError("agent.critic_hidden widths must be >= 1");
}

ParameterFile to_checkpoint(const Agent<float>& agent) {
  ParameterFile file;
  file.networks.push_back({"actor", agent.actor});
  for (std::size_t i = 0; i < agent.critics.size(); ++i) {
    file.networks.push_back({"critic" + std::to_string(i), agent.critics[i]});
    file.networks.push_back({"target_critic" + std::to_string(i), agent.target_critics[i]});
  }
  const auto& c = agent.config;
  file.meta = {{"kind", "agent"},
               {"state_dim", agent.state_dim},
               {"action_dim", agent.action_dim},
               {"angular", agent.angular},
               {"actor_hidden", c.actor_hidden},
               {"critic_hidden", c.critic_hidden},
               {"critics", c.critics},
               {"critic_layer_norm", c.critic_layer_norm},
               {"gamma", c.gamma},
               {"tau", c.tau},
               {"penalty", c.penalty},
               {"entropy", c.entropy},
               {"reward_scale", c.reward_scale},
               {"log_temperature", agent.log_temperature},
               {"updates", agent.updates}};
  return file;
}

Agent<float> agent_from_checkpoint(const ParameterFile& file) {
  const auto& m = file.meta;
  if (m.value("kind", "") != "agent") throw PreconditionError("checkpoint does not hold an agent");
  AgentConfig c;
  c.actor_hidden = m.at("actor_hidden").get<std::vector<int>>();
  c.critic_hidden = m.at("critic_hidden").get<std::vector<int>>();
  c.critics = m.at("critics").get<int>();
  c.critic_layer_norm = m.at("critic_layer_norm").get<bool>();
  c.gamma = m.at("gamma").get<double>();
  c.tau = m.at("tau").get<double>();
  c.penalty = m.at("penalty").get<double>();
  c.entropy = m.at("entropy").get<bool>();
  c.reward_scale = m.at("reward_scale").get<double>();
  Agent<float> agent(m.at("state_dim").get<int>(), m.at("action_dim").get<int>(),
                     m.at("angular").get<std::vector<bool>>(), c, 0);
  agent.actor = file.network("actor");
  for (int i = 0; i < c.critics; ++i) {
    agent.critics[static_cast<std::size_t>(i)] = file.network("critic" + std::to_string(i));
    agent.target_critics[static_cast<std::size_t>(i)] = file.network("target_critic" + std::to_string(i));
  }
  agent.log_temperature = m.at("log_temperature").get<double>();
  agent.updates = m.at("updates").get<long>();
  return agent;
}

template struct Agent<float>;
template struct Agent<double>;

}  // namespace wombet
