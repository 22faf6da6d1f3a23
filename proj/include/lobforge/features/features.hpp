#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/market/snapshot.hpp"

namespace lobforge::features {

using market::kLevels;
using market::LobSnapshot;

inline constexpr std::size_t kBookFeatures = 4 * kLevels;  // 40
inline constexpr std::size_t kBookFeaturesWithMid = kBookFeatures + 1;

struct FeatureVector {
  std::vector<double> values;
  std::int64_t ts = 0;
};

inline double mid_price(const LobSnapshot& s) { return (s.asks[0].price + s.bids[0].price) / 2.0; }

// Volume imbalance at a 1-based level: share of resting volume on the bid side.
inline double imbalance(const LobSnapshot& s, std::size_t level = 1) {
  if (level < 1 || level > kLevels) throw ConfigError("level must be in [1, 10]");
  const double va = s.asks[level - 1].volume;
  const double vb = s.bids[level - 1].volume;
  if (!(va + vb > 0.0)) {
    throw DataError("micro_price: zero total volume at level " + std::to_string(level));
  }
  return vb / (va + vb);
}

// Imbalance-weighted price; leans toward the ask when bid volume dominates.
inline double micro_price(const LobSnapshot& s, std::size_t level = 1) {
  const double imb = imbalance(s, level);
  return imb * s.asks[level - 1].price + (1.0 - imb) * s.bids[level - 1].price;
}

// Level-interleaved [ap_i, av_i, bp_i, bv_i] for i = 1..10, optionally
// followed by the mid-price. Matches the CSV column order.
inline FeatureVector feature_vector(const LobSnapshot& s, bool include_mid) {
  FeatureVector out;
  out.ts = s.ts;
  out.values.reserve(include_mid ? kBookFeaturesWithMid : kBookFeatures);
  for (std::size_t i = 0; i < kLevels; ++i) {
    out.values.push_back(s.asks[i].price);
    out.values.push_back(s.asks[i].volume);
    out.values.push_back(s.bids[i].price);
    out.values.push_back(s.bids[i].volume);
  }
  if (include_mid) out.values.push_back(mid_price(s));
  return out;
}

inline LobSnapshot snapshot_from_features(const std::vector<double>& values, std::int64_t ts = 0) {
  if (values.size() != kBookFeatures && values.size() != kBookFeaturesWithMid) {
    throw InvariantError("feature vector must have 40 or 41 entries");
  }
  LobSnapshot s;
  s.ts = ts;
  for (std::size_t i = 0; i < kLevels; ++i) {
    s.asks[i] = {values[4 * i], values[4 * i + 1]};
    s.bids[i] = {values[4 * i + 2], values[4 * i + 3]};
  }
  return s;
}

inline std::vector<double> mid_prices(const market::TickSeries& series) {
  std::vector<double> out;
  out.reserve(series.size());
  for (const auto& s : series.snapshots) out.push_back(mid_price(s));
  return out;
}

}  // namespace lobforge::features
