#pragma once

// End-to-end runs: WOMBET (seed data -> model -> filtered source dataset ->
// mixed offline/online training with periodic refits), the SAC-from-scratch
// baseline, and single-component ablations. Everything is sequential and
// seeded, so (config, seed) determines the output bit for bit.

#include "wombet/agent.hpp"
#include "wombet/config.hpp"
#include "wombet/datagen.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace wombet {

enum class Ablation { none, fixed_alpha, reward_only, uncertainty_only, no_filter };

const char* to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);  // throws ConfigError

// The config of an ablation: exactly one component patched.
ExperimentConfig ablate(const ExperimentConfig& cfg, Ablation which);

inline constexpr const char* kMetricsSchema = "metrics_v1";

struct MetricsRow {
  long env_steps = 0;     // target steps
  long source_steps = 0;  // real source steps (seed data + real-mpc generation)
  long grad_steps = 0;
  double eval_mean = 0.0;
  double eval_std = 0.0;
  double normalized = 0.0;
  double random_return = 0.0;
  double alpha = 0.0;
  double delta_bar = 0.0;
  double critic_loss = 0.0;  // mean since previous row
  double actor_loss = 0.0;
  double temperature = 0.0;
  long offline_samples = 0;  // cumulative source-flagged samples drawn
  long dataset_transitions = 0;
  long dataset_episodes = 0;
  long refresh_accepted = 0;
  long refresh_candidates = 0;
  double refresh_rate = 0.0;
};

struct ControllerRow {
  long k = 0;
  long grad_step = 0;
  long env_steps = 0;
  double delta = 0.0;
  double delta_bar = 0.0;
  double alpha = 0.0;
};

struct RunMetrics {
  std::string method;  // wombet | sac | ablation:<name>
  std::string task;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::vector<ControllerRow> controller;
  OfflineDataset dataset;  // final D_S
  long source_steps = 0;
  long offline_samples = 0;
  bool diverged = false;
  std::string error;

  double final_return() const { return rows.empty() ? 0.0 : rows.back().eval_mean; }
  // Evaluation mean at the last row with env_steps <= steps.
  double return_at(long steps) const;
};

// Deterministic (mean-action) evaluation on the target task.
struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
};
EvalResult evaluate_policy(const TaskPair& pair, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& policy,
                           int episodes, std::uint64_t seed);
EvalResult evaluate_agent(const Agent<float>& agent, const TaskPair& pair, int episodes, std::uint64_t seed);
EvalResult evaluate_random(const TaskPair& pair, int episodes, std::uint64_t seed);

// Uniform-random source transitions (time-limit ends are not terminal).
std::vector<Transition> collect_random(const TaskPair& pair, TaskId task, long steps, std::uint64_t seed);

// Phase 1 only: seed data, model fit, first filtered dataset.
struct SourcePhase {
  std::vector<Transition> seed_data;
  EnsembleModel model;
  ModelTrainReport report;
  GenerationResult generation;
  long source_steps = 0;
};
SourcePhase run_source_phase(const ExperimentConfig& cfg, std::uint64_t seed);

RunMetrics run_wombet(const ExperimentConfig& cfg, std::uint64_t seed);
RunMetrics run_sac_baseline(const ExperimentConfig& cfg, std::uint64_t seed);
RunMetrics run_ablation(const ExperimentConfig& cfg, Ablation which, std::uint64_t seed);

std::string metrics_csv(const RunMetrics& m);
std::string controller_csv(const RunMetrics& m);
std::string run_stem(const RunMetrics& m);
// Writes <stem>.csv, <stem>_controller.csv and, when non-empty, <stem>_dataset.wds.
void write_run(const RunMetrics& m, const std::filesystem::path& dir);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;  // throws ParseError
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace wombet
