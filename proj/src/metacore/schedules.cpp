#include "metakey/metacore/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace metakey::metacore {

namespace {

void require_episode(std::int64_t episode, const MetaConfig& cfg) {
  if (episode < 0 || episode >= cfg.episodes) {
    throw std::out_of_range("episode " + std::to_string(episode) + " is outside [0, " +
                            std::to_string(cfg.episodes) + ")");
  }
}

}  // namespace

std::vector<double> msl_weights(std::int64_t episode, const MetaConfig& cfg) {
  require_episode(episode, cfg);
  const auto n = cfg.inner_steps;
  if (n <= 0) return {};
  const double anneal_end = cfg.msl_fraction * static_cast<double>(cfg.episodes);
  const double progress =
      anneal_end <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(episode) / anneal_end);
  const double other = (1.0 - progress) / static_cast<double>(n);
  std::vector<double> w(static_cast<std::size_t>(n), other);
  w.back() = 1.0 - static_cast<double>(n - 1) * other;
  return w;
}

double cosine_outer_rate(std::int64_t episode, const MetaConfig& cfg) {
  require_episode(episode, cfg);
  if (cfg.episodes == 1) return cfg.outer_rate;
  const double phase = std::numbers::pi * static_cast<double>(episode) /
                       static_cast<double>(cfg.episodes - 1);
  return cfg.outer_rate_floor +
         0.5 * (cfg.outer_rate - cfg.outer_rate_floor) * (1.0 + std::cos(phase));
}

DerivativeOrder derivative_order(std::int64_t episode, const MetaConfig& cfg) {
  require_episode(episode, cfg);
  const double boundary = cfg.first_order_fraction * static_cast<double>(cfg.episodes);
  return static_cast<double>(episode) < boundary ? DerivativeOrder::first : DerivativeOrder::second;
}

}  // namespace metakey::metacore
