#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "lobforge/core/error.hpp"
#include "lobforge/market/snapshot.hpp"

namespace lobforge::market {

enum class Regime { random_walk, trend_plus_noise, sawtooth };

inline Regime parse_regime(std::string_view name) {
  if (name == "random_walk") return Regime::random_walk;
  if (name == "trend_plus_noise") return Regime::trend_plus_noise;
  if (name == "sawtooth") return Regime::sawtooth;
  throw ConfigError("unknown regime '" + std::string(name) + "'");
}

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::random_walk: return "random_walk";
    case Regime::trend_plus_noise: return "trend_plus_noise";
    case Regime::sawtooth: return "sawtooth";
  }
  return "?";
}

// Synthetic book generator settings. Amplitudes, drift and noise are in
// ticks; prices are tick_size * ticks around base_price.
struct SynthConfig {
  std::size_t n_ticks = 10000;
  std::uint64_t seed = 7;
  Regime regime = Regime::random_walk;
  double tick_size = 0.01;
  double base_price = 100.0;
  double spread_ticks = 2.0;
  // random_walk: per-tick step std; trend_plus_noise: iid noise std.
  double vol_scale = 1.0;
  // sawtooth: full cycle length; trend_plus_noise: period of the oscillating trend.
  std::size_t period = 40;
  // sawtooth: peak-to-trough height; trend_plus_noise: oscillation amplitude.
  double amplitude_ticks = 20.0;
  // trend_plus_noise linear drift per tick.
  double drift_ticks = 0.01;
  std::int64_t start_ts = 1656806400000;  // 2022-07-03T00:00:00Z
  std::int64_t tick_interval_ms = 100;
  double volume_sigma = 0.5;
};

inline void validate(const SynthConfig& c) {
  if (c.n_ticks < 1) throw ConfigError("synth: n_ticks must be >= 1");
  if (!(c.tick_size > 0.0)) throw ConfigError("synth: tick_size must be > 0");
  if (!(c.base_price > 0.0)) throw ConfigError("synth: base_price must be > 0");
  if (!(c.spread_ticks > 0.0)) throw ConfigError("synth: spread_ticks must be > 0");
  if (!(c.vol_scale >= 0.0)) throw ConfigError("synth: vol_scale must be >= 0");
  if (c.period < 2) throw ConfigError("synth: period must be >= 2");
  if (c.tick_interval_ms < 0) throw ConfigError("synth: tick_interval_ms must be >= 0");
  if (!(c.volume_sigma >= 0.0)) throw ConfigError("synth: volume_sigma must be >= 0");
}

// Triangle wave in [0, 1]: rises over the first half of the period, falls over the second.
inline double triangle_phase(std::size_t t, std::size_t period) {
  const double half = static_cast<double>(period) / 2.0;
  const double ph = static_cast<double>(t % period);
  return ph <= half ? ph / half : (static_cast<double>(period) - ph) / half;
}

// Mid-price path in ticks relative to base_price.
inline std::vector<double> synth_mid_ticks(const SynthConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> ticks(c.n_ticks);
  double walk = 0.0;
  for (std::size_t t = 0; t < c.n_ticks; ++t) {
    switch (c.regime) {
      case Regime::random_walk:
        if (t > 0) walk += c.vol_scale * normal(rng);
        ticks[t] = walk;
        break;
      case Regime::trend_plus_noise: {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(c.period);
        ticks[t] = c.drift_ticks * static_cast<double>(t) + c.amplitude_ticks * std::sin(phase) +
                   c.vol_scale * normal(rng);
        break;
      }
      case Regime::sawtooth:
        ticks[t] = c.amplitude_ticks * triangle_phase(t, c.period);
        break;
    }
  }
  return ticks;
}

inline TickSeries synth_lob(const SynthConfig& c) {
  validate(c);
  std::mt19937_64 rng(c.seed);
  const auto mids = synth_mid_ticks(c, rng);
  std::normal_distribution<double> normal(0.0, 1.0);

  TickSeries out;
  out.symbol = "SYNTH";
  out.source = std::string("synth:") + regime_name(c.regime) + ":" + std::to_string(c.seed);
  out.snapshots.reserve(c.n_ticks);
  const double half_spread = c.spread_ticks / 2.0;
  for (std::size_t t = 0; t < c.n_ticks; ++t) {
    const double mid = c.base_price + c.tick_size * mids[t];
    LobSnapshot s;
    s.ts = c.start_ts + static_cast<std::int64_t>(t) * c.tick_interval_ms;
    for (std::size_t i = 0; i < kLevels; ++i) {
      const double offset = (half_spread + static_cast<double>(i)) * c.tick_size;
      s.asks[i] = {mid + offset, std::exp(c.volume_sigma * normal(rng))};
      s.bids[i] = {mid - offset, std::exp(c.volume_sigma * normal(rng))};
    }
    if (!(s.bids[kLevels - 1].price > 0.0)) {
      throw ConfigError("synth: price path reached non-positive prices at tick " + std::to_string(t));
    }
    out.snapshots.push_back(s);
  }
  return out;
}

}  // namespace lobforge::market
