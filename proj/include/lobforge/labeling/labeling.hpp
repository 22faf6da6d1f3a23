#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"

namespace lobforge::labeling {

enum class Movement : std::uint8_t { fall = 0, stationary = 1, rise = 2 };

inline constexpr int kNumClasses = 3;

inline int code(Movement m) { return static_cast<int>(m); }

inline Movement movement_from_code(int c) {
  if (c < 0 || c > 2) throw DataError("movement label out of range: " + std::to_string(c));
  return static_cast<Movement>(c);
}

struct LabelConfig {
  std::size_t horizon_k = 20;
  double delta = 0.0;
};

inline void validate(const LabelConfig& cfg) {
  if (cfg.horizon_k < 1) throw ConfigError("horizon_k must be >= 1");
  if (!(cfg.delta >= 0.0)) throw ConfigError("delta must be >= 0");
}

// Average of mid[t-k+1 .. t].
inline double past_mean(std::span<const double> mid, std::size_t t, std::size_t k) {
  if (k < 1) throw ConfigError("horizon must be >= 1");
  if (t + 1 < k || t >= mid.size()) throw DataError("past_mean: insufficient history");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += mid[t - i];
  return sum / static_cast<double>(k);
}

// Average of mid[t+1 .. t+k].
inline double future_mean(std::span<const double> mid, std::size_t t, std::size_t k) {
  if (k < 1) throw ConfigError("horizon must be >= 1");
  if (t + k >= mid.size()) throw DataError("future_mean: insufficient future data");
  double sum = 0.0;
  for (std::size_t i = 1; i <= k; ++i) sum += mid[t + i];
  return sum / static_cast<double>(k);
}

inline double pct_change(double m_minus, double m_plus) {
  if (!(m_minus > 0.0)) throw DataError("pct_change: past mean must be positive");
  return (m_plus - m_minus) / m_minus;
}

// Positive change above the threshold is a rise; the band is inclusive.
inline Movement classify(double l, double delta) {
  if (l > delta) return Movement::rise;
  if (l < -delta) return Movement::fall;
  return Movement::stationary;
}

struct LabelSeries {
  std::vector<Movement> labels;  // stationary where masked
  std::vector<double> change;    // l_t, 0 where masked
  std::vector<bool> mask;
  std::size_t horizon_k = 0;
  double delta = 0.0;

  std::size_t size() const { return labels.size(); }
  std::size_t labeled() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
};

// First and one-past-last labelable index for a series of length n.
inline std::pair<std::size_t, std::size_t> labelable_range(std::size_t n, std::size_t k) {
  if (n < 2 * k) return {0, 0};
  return {k - 1, n - k};
}

// Smoothed changes l_t over the labelable range; the mask marks valid ticks.
inline std::vector<double> smoothed_changes(std::span<const double> mid, std::size_t k,
                                            std::vector<bool>* mask = nullptr) {
  if (k < 1) throw ConfigError("horizon must be >= 1");
  std::vector<double> out(mid.size(), 0.0);
  if (mask) mask->assign(mid.size(), false);
  auto [lo, hi] = labelable_range(mid.size(), k);
  if (lo >= hi) return out;
  // Direct sums keep l_t a pure function of its window, so periodic inputs
  // give exactly periodic labels.
  for (std::size_t t = lo; t < hi; ++t) {
    out[t] = pct_change(past_mean(mid, t, k), future_mean(mid, t, k));
    if (mask) (*mask)[t] = true;
  }
  return out;
}

inline LabelSeries label_series(std::span<const double> mid, const LabelConfig& cfg) {
  validate(cfg);
  if (mid.empty()) throw DataError("label_series: empty series");
  LabelSeries out;
  out.horizon_k = cfg.horizon_k;
  out.delta = cfg.delta;
  out.change = smoothed_changes(mid, cfg.horizon_k, &out.mask);
  out.labels.assign(mid.size(), Movement::stationary);
  for (std::size_t t = 0; t < mid.size(); ++t) {
    if (out.mask[t]) out.labels[t] = classify(out.change[t], cfg.delta);
  }
  return out;
}

struct ClassShares {
  std::array<double, kNumClasses> share{};
  std::array<std::size_t, kNumClasses> count{};

  // Largest deviation of any class share from an even split.
  double imbalance() const {
    double worst = 0.0;
    for (double s : share) worst = std::max(worst, std::abs(s - 1.0 / 3.0));
    return worst;
  }
};

// Class shares of the given changes at threshold `delta`, using a sorted copy.
inline ClassShares shares_sorted(std::span<const double> sorted_changes, double delta) {
  ClassShares out;
  const auto n = sorted_changes.size();
  if (n == 0) return out;
  const auto fall = static_cast<std::size_t>(
      std::lower_bound(sorted_changes.begin(), sorted_changes.end(), -delta) - sorted_changes.begin());
  const auto not_rise = static_cast<std::size_t>(
      std::upper_bound(sorted_changes.begin(), sorted_changes.end(), delta) - sorted_changes.begin());
  out.count = {fall, not_rise - fall, n - not_rise};
  for (int c = 0; c < kNumClasses; ++c) out.share[c] = static_cast<double>(out.count[c]) / static_cast<double>(n);
  return out;
}

inline ClassShares class_shares(std::span<const double> changes, double delta) {
  std::vector<double> sorted(changes.begin(), changes.end());
  std::sort(sorted.begin(), sorted.end());
  return shares_sorted(sorted, delta);
}

struct Calibration {
  double delta = 0.0;
  ClassShares shares;
  bool within_tolerance = false;
  std::vector<double> grid;
};

inline constexpr std::size_t kCalibrationGridSize = 200;

// Log-spaced candidates between the 1st and 99th percentile of |l_t|.
inline std::vector<double> threshold_grid(std::span<const double> changes) {
  std::vector<double> mags;
  mags.reserve(changes.size());
  for (double l : changes) mags.push_back(std::abs(l));
  std::sort(mags.begin(), mags.end());
  auto pct = [&](double q) {
    auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(mags.size() - 1)));
    return mags[idx];
  };
  double lo = pct(0.01);
  const double hi = pct(0.99);
  if (!(lo > 0.0)) {
    auto pos = std::upper_bound(mags.begin(), mags.end(), 0.0);
    if (pos == mags.end()) throw DataError("calibrate_threshold: all changes are zero");
    lo = *pos;
  }
  if (!(hi > lo)) return {lo};
  std::vector<double> grid(kCalibrationGridSize);
  const double step = std::log(hi / lo) / static_cast<double>(kCalibrationGridSize - 1);
  for (std::size_t i = 0; i < kCalibrationGridSize; ++i) grid[i] = lo * std::exp(step * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

// Picks the grid threshold whose label shares are closest to an even split
// (minimax deviation); ties go to the smaller threshold. `tolerance` only
// sets the within_tolerance flag.
inline Calibration calibrate_threshold(std::span<const double> mid, std::size_t horizon_k, double tolerance = 0.05) {
  std::vector<bool> mask;
  const auto all = smoothed_changes(mid, horizon_k, &mask);
  std::vector<double> changes;
  for (std::size_t t = 0; t < all.size(); ++t) {
    if (mask[t]) changes.push_back(all[t]);
  }
  if (changes.empty()) throw DataError("calibrate_threshold: series has no labelable ticks");
  const auto [mn, mx] = std::minmax_element(changes.begin(), changes.end());
  if (*mn == *mx) throw DataError("calibrate_threshold: degenerate series (all changes identical)");

  Calibration best;
  best.grid = threshold_grid(changes);
  std::sort(changes.begin(), changes.end());
  double best_score = 2.0;
  for (double d : best.grid) {
    auto sh = shares_sorted(changes, d);
    if (sh.imbalance() < best_score) {
      best_score = sh.imbalance();
      best.delta = d;
      best.shares = sh;
    }
  }
  best.within_tolerance = best_score <= tolerance;
  return best;
}

// d_{t+tau} = mid[t+tau] - mid[t] for tau = 1..k.
inline std::vector<double> diff_targets(std::span<const double> mid, std::size_t t, std::size_t k) {
  if (t + k >= mid.size()) throw DataError("diff_targets: insufficient future data");
  std::vector<double> out(k);
  for (std::size_t tau = 1; tau <= k; ++tau) out[tau - 1] = mid[t + tau] - mid[t];
  return out;
}

}  // namespace lobforge::labeling
