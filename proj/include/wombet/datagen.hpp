#pragma once

// Source-task dataset construction: plan, filter, relabel, persist.
//
// A candidate trajectory is accepted iff
//
//   mean_t u(s_t, a_t) <= u_th   and   sum_t gamma^t r_S(s_t, a_t) >= J_th
//
// and accepted trajectories have their rewards replaced by the target
// reward. Transition values are held at 9 significant digits so that the
// text format round-trips bit-exactly; per-candidate statistics are written
// at full precision.

#include "wombet/envs.hpp"
#include "wombet/planner.hpp"
#include "wombet/transition.hpp"
#include "wombet/world_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace wombet {

enum class FilterRule { dual, reward_only, uncertainty_only, none };

const char* to_string(FilterRule rule);
FilterRule filter_rule_from_string(const std::string& s);

struct FilterConfig {
  double u_threshold = std::numeric_limits<double>::infinity();
  double return_threshold = -std::numeric_limits<double>::infinity();
  bool quantile_mode = true;
  double u_quantile = 0.6;       // used in quantile mode
  double return_quantile = 0.5;  // used in quantile mode
  FilterRule rule = FilterRule::dual;
};

void validate(const FilterConfig& cfg);

enum class RejectReason { none, empty, uncertainty, return_too_low, both };

const char* to_string(RejectReason r);

struct FilterDecision {
  bool accept = false;
  RejectReason reason = RejectReason::none;
};

// Uses the explicit thresholds of cfg (quantile fields are ignored).
FilterDecision filter_trajectory(const Trajectory& traj, const FilterConfig& cfg);

// Type-7 (linear interpolation) sample quantile.
double quantile(std::vector<double> values, double q);

// Turns quantile-mode settings into explicit thresholds over the non-empty
// trajectories of the pool. Explicit configs are returned unchanged.
FilterConfig resolve_thresholds(const FilterConfig& cfg, std::span<const Trajectory> pool);

Trajectory relabel(const Trajectory& traj, const TaskPair& pair, TaskId task);

// Rounds to 9 significant decimal digits (the persisted precision).
double quantize(double x);
void quantize(Trajectory& traj, double gamma);

struct DatasetRow {
  int episode = 0;
  int step = 0;
  Transition transition;  // reward = target reward, from_source = true
  double source_reward = 0.0;
};

struct CandidateRecord {
  int episode = 0;
  int length = 0;
  double mean_uncertainty = 0.0;
  double ret = 0.0;
  bool accepted = false;
  RejectReason reason = RejectReason::none;
};

struct OfflineDataset {
  std::vector<DatasetRow> rows;
  std::vector<CandidateRecord> candidates;
  nlohmann::json meta = nlohmann::json::object();
  int state_dim = 0;
  int action_dim = 0;

  std::size_t accepted_episodes() const;
  double acceptance_rate() const;
  bool empty() const { return rows.empty(); }
  std::vector<Transition> transitions() const;
};

struct DatagenSettings {
  DatagenMode mode = DatagenMode::real_mpc;
  int episodes = 20;
  int episode_len = 100;
  int first_episode_id = 0;
  std::string model_id;
};

struct GenerationResult {
  OfflineDataset dataset;
  std::vector<Trajectory> pool;  // quantized candidates, in episode order
  FilterConfig resolved;
  long real_steps = 0;
};

// Filters an existing candidate pool and assembles the relabeled dataset.
GenerationResult assemble_dataset(std::vector<Trajectory> pool, const TaskPair& pair, const FilterConfig& filter,
                                  const DatagenSettings& settings, const PlannerConfig& planner);

GenerationResult generate_offline_dataset(const TaskPair& pair, const EnsembleModel& model,
                                          const PlannerConfig& planner, const FilterConfig& filter,
                                          const DatagenSettings& settings, std::uint64_t seed);

// Appends b's rows and candidates to a. Episode ids must not collide.
void merge_into(OfflineDataset& a, const OfflineDataset& b);

std::string encode_dataset(const OfflineDataset& ds);
OfflineDataset decode_dataset(const std::string& text);
void save_dataset(const std::filesystem::path& path, const OfflineDataset& ds);
OfflineDataset load_dataset(const std::filesystem::path& path);

}  // namespace wombet
