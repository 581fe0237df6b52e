#pragma once

// Experiment configuration. The file format is flat `key = value` lines
// with dotted section keys; '#' starts a comment. Unknown keys are errors.

#include "wombet/agent.hpp"
#include "wombet/datagen.hpp"
#include "wombet/envs.hpp"
#include "wombet/planner.hpp"
#include "wombet/transfer.hpp"
#include "wombet/world_model.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace wombet {

struct ExperimentConfig {
  std::string task = "pendulum";
  TaskPair pair = pendulum_pair();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  long budget = 30000;  // target environment steps

  WorldModelConfig model;
  int model_epochs = 30;
  PlannerConfig planner;
  FilterConfig filter;
  AgentConfig agent = [] {
    AgentConfig a;
    a.penalty = std::numeric_limits<double>::quiet_NaN();  // follow planner.penalty
    return a;
  }();
  ControllerConfig controller;

  DatagenMode datagen_mode = DatagenMode::real_mpc;
  int datagen_episodes = 20;
  int datagen_episode_len = 100;
  long seed_transitions = 5000;
  long refine_every = 5000;
  int refine_episodes = 20;

  long eval_every = 1000;
  int eval_episodes = 10;
  long update_after = 256;  // target steps before the first gradient step
  long replay_capacity = 1000000;
  std::string out_dir = "runs";
};

void validate(const ExperimentConfig& cfg);

// Agent settings with lambda_q resolved.
AgentConfig resolved_agent(const ExperimentConfig& cfg);

// Applies one key. Throws ConfigError for unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

// Every key with its current value, in documentation order.
std::vector<std::pair<std::string, std::string>> effective_config(const ExperimentConfig& cfg);
std::string format_config(const ExperimentConfig& cfg);

// Top-level component a key belongs to ("planner", "filter", ...).
std::string component_of(const std::string& key);

struct ConfigKeyDoc {
  std::string key;
  std::string help;
};
const std::vector<ConfigKeyDoc>& config_keys();

}  // namespace wombet
