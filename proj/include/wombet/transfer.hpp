#pragma once

// Offline/online mixing: a FIFO replay buffer, batch sampling from
//   d_mix = alpha * D_S + (1 - alpha) * D_T
// and the TD-error driven alpha rule
//   dbar_k = (1 - beta) dbar_{k-1} + beta delta_k,   alpha_k = clip(gain * dbar_k, lo, hi).

#include "wombet/transition.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace wombet {

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  long inserted() const { return inserted_; }
  // i-th oldest item currently held.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // index of the oldest item once full
  long inserted_ = 0;
};

struct MixedSample {
  std::vector<const Transition*> items;
  int offline_count = 0;
};

// round(alpha * B) uniform draws (with replacement) from offline followed
// by the rest from online. An empty online buffer sends every draw to
// offline; an empty offline pool sends every draw to online.
MixedSample sample_mixed(std::span<const Transition> offline, const ReplayBuffer& online, double alpha, int batch_size,
                         std::mt19937_64& rng);
MixedSample sample_mixed(std::span<const Transition> offline, const ReplayBuffer& online, double alpha, int batch_size,
                         std::uint64_t seed);

// Uniform draws from the online buffer only.
std::vector<const Transition*> sample_online(const ReplayBuffer& online, int batch_size, std::mt19937_64& rng);

struct ControllerConfig {
  double ema_rate = 0.05;
  double gain = 0.0;  // <= 0: calibrated so that the first dbar maps to auto_alpha
  double auto_alpha = 0.8;
  double alpha_min = 0.1;
  double alpha_max = 0.9;
  int measure_every = 50;    // gradient steps between TD measurements
  int bootstrap_steps = 1000;  // env steps at alpha_max before the rule engages
  std::optional<double> fixed_alpha;  // ablation: constant alpha, controller off
};

void validate(const ControllerConfig& cfg);

class MixController {
 public:
  explicit MixController(ControllerConfig cfg);

  // Returns false (and leaves the state untouched) for a negative or
  // non-finite delta.
  bool update(double delta);

  double alpha() const { return alpha_; }
  double delta_bar() const { return delta_bar_; }
  double gain() const { return gain_; }
  bool initialized() const { return initialized_; }
  long updates() const { return updates_; }
  long rejected() const { return rejected_; }
  const ControllerConfig& config() const { return cfg_; }
  // alpha before clipping.
  double raw_alpha() const { return gain_ * delta_bar_; }

 private:
  ControllerConfig cfg_;
  double delta_bar_ = 0.0;
  double gain_ = 0.0;
  double alpha_;
  bool initialized_ = false;
  long updates_ = 0;
  long rejected_ = 0;
};

}  // namespace wombet
