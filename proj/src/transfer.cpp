#include "wombet/transfer.hpp"

#include "wombet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace wombet {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw PreconditionError("replay buffer capacity must be >= 1");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  ++inserted_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw PreconditionError("replay buffer index out of range");
  return items_[(head_ + i) % items_.size()];
}

MixedSample sample_mixed(std::span<const Transition> offline, const ReplayBuffer& online, double alpha, int batch_size,
                         std::mt19937_64& rng) {
  if (batch_size < 1) throw PreconditionError("sample_mixed: batch size must be >= 1");
  if (offline.empty() && online.empty()) throw PreconditionError("sample_mixed: both pools are empty");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw PreconditionError("sample_mixed: alpha must lie in [0, 1]");
  int n_off = static_cast<int>(std::lround(alpha * batch_size));
  if (online.empty()) n_off = batch_size;
  if (offline.empty()) n_off = 0;

  MixedSample out;
  out.offline_count = n_off;
  out.items.reserve(static_cast<std::size_t>(batch_size));
  if (n_off > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, offline.size() - 1);
    for (int i = 0; i < n_off; ++i) out.items.push_back(&offline[pick(rng)]);
  }
  if (n_off < batch_size) {
    std::uniform_int_distribution<std::size_t> pick(0, online.size() - 1);
    for (int i = n_off; i < batch_size; ++i) out.items.push_back(&online.at(pick(rng)));
  }
  return out;
}

MixedSample sample_mixed(std::span<const Transition> offline, const ReplayBuffer& online, double alpha, int batch_size,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_mixed(offline, online, alpha, batch_size, rng);
}

std::vector<const Transition*> sample_online(const ReplayBuffer& online, int batch_size, std::mt19937_64& rng) {
  if (online.empty()) throw PreconditionError("sample_online: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, online.size() - 1);
  std::vector<const Transition*> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) out.push_back(&online.at(pick(rng)));
  return out;
}

void validate(const ControllerConfig& cfg) {
  if (!(cfg.ema_rate > 0.0 && cfg.ema_rate <= 1.0)) throw ConfigError("controller.ema_rate must be in (0, 1]");
  if (!(cfg.alpha_min >= 0.0 && cfg.alpha_min < cfg.alpha_max && cfg.alpha_max <= 1.0))
    throw ConfigError("controller bounds must satisfy 0 <= alpha_min < alpha_max <= 1");
  if (!(cfg.auto_alpha > 0.0)) throw ConfigError("controller.auto_alpha must be > 0");
  if (cfg.measure_every < 1) throw ConfigError("controller.measure_every must be >= 1");
  if (cfg.bootstrap_steps < 0) throw ConfigError("controller.bootstrap_steps must be >= 0");
  if (cfg.fixed_alpha && !(*cfg.fixed_alpha >= 0.0 && *cfg.fixed_alpha <= 1.0))
    throw ConfigError("controller.fixed_alpha must be in [0, 1]");
}

MixController::MixController(ControllerConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  gain_ = cfg_.gain;
  alpha_ = cfg_.fixed_alpha ? *cfg_.fixed_alpha : cfg_.alpha_max;
}

bool MixController::update(double delta) {
  if (!std::isfinite(delta) || delta < 0.0) {
    if (rejected_++ == 0) std::cerr << "warning: controller rejected TD error " << delta << " (further rejections are counted silently)\n";
    return false;
  }
  if (!initialized_) {
    delta_bar_ = delta;
    initialized_ = true;
    if (gain_ <= 0.0) gain_ = delta > 0.0 ? std::min(cfg_.auto_alpha / delta, std::numeric_limits<double>::max()) : 1.0;
  } else {
    delta_bar_ = (1.0 - cfg_.ema_rate) * delta_bar_ + cfg_.ema_rate * delta;
  }
  ++updates_;
  alpha_ = cfg_.fixed_alpha ? *cfg_.fixed_alpha : std::clamp(gain_ * delta_bar_, cfg_.alpha_min, cfg_.alpha_max);
  return true;
}

}  // namespace wombet
