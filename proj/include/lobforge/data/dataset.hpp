#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/features/features.hpp"
#include "lobforge/labeling/labeling.hpp"
#include "lobforge/market/snapshot.hpp"
#include "lobforge/models/forecasters.hpp"

namespace lobforge::data {

enum class Task { mid_price, mid_diff, movement };

inline Task parse_task(std::string_view s) {
  if (s == "mid_price") return Task::mid_price;
  if (s == "mid_diff") return Task::mid_diff;
  if (s == "movement") return Task::movement;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected mid_price|mid_diff|movement)");
}

inline const char* task_name(Task t) {
  switch (t) {
    case Task::mid_price: return "mid_price";
    case Task::mid_diff: return "mid_diff";
    case Task::movement: return "movement";
  }
  return "?";
}

// Dense row-major matrix of per-tick features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline FeatureMatrix feature_matrix(const market::TickSeries& series, bool include_mid) {
  FeatureMatrix m;
  m.rows = series.size();
  m.cols = include_mid ? features::kBookFeaturesWithMid : features::kBookFeatures;
  m.values.reserve(m.rows * m.cols);
  for (const auto& s : series.snapshots) {
    auto fv = features::feature_vector(s, include_mid);
    m.values.insert(m.values.end(), fv.values.begin(), fv.values.end());
  }
  return m;
}

inline constexpr double kNormEpsilon = 1e-8;

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // population (divide by N)
  double epsilon = kNormEpsilon;
};

// Per-column mean and population std over rows [begin, end).
inline NormStats fit_norm(const FeatureMatrix& m, std::size_t begin, std::size_t end) {
  if (begin >= end || end > m.rows) throw DataError("fit_norm: empty training split");
  NormStats st;
  st.mean.assign(m.cols, 0.0);
  st.std.assign(m.cols, 0.0);
  const double n = static_cast<double>(end - begin);
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) st.mean[c] += m.at(r, c);
  for (auto& v : st.mean) v /= n;
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double d = m.at(r, c) - st.mean[c];
      st.std[c] += d * d;
    }
  for (auto& v : st.std) v = std::sqrt(v / n);
  return st;
}

inline NormStats fit_norm(const FeatureMatrix& m) { return fit_norm(m, 0, m.rows); }

inline NormStats fit_scalar_norm(std::span<const double> xs) {
  FeatureMatrix m{xs.size(), 1, std::vector<double>(xs.begin(), xs.end())};
  return fit_norm(m);
}

inline void apply_norm(FeatureMatrix& m, const NormStats& st) {
  if (st.mean.size() != m.cols || st.std.size() != m.cols) {
    throw InvariantError("apply_norm: stats have " + std::to_string(st.mean.size()) + " columns, data has " +
                         std::to_string(m.cols));
  }
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      double& v = m.values[r * m.cols + c];
      v = (v - st.mean[c]) / (st.std[c] + st.epsilon);
    }
}

inline double normalize_value(double x, const NormStats& st, std::size_t c = 0) {
  return (x - st.mean[c]) / (st.std[c] + st.epsilon);
}

inline double denormalize_value(double z, const NormStats& st, std::size_t c = 0) {
  return z * (st.std[c] + st.epsilon) + st.mean[c];
}

inline void invert_norm(FeatureMatrix& m, const NormStats& st) {
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      double& v = m.values[r * m.cols + c];
      v = denormalize_value(v, st, c);
    }
}

// ---------------------------------------------------------------------------
// Chronological splits.

struct SplitSpec {
  enum class Mode { fraction, by_day } mode = Mode::fraction;
  double train = 0.7, val = 0.1, test = 0.2;
  std::size_t train_days = 6, val_days = 3, test_days = 3;

  static SplitSpec fractions(double tr, double va, double te) {
    SplitSpec s;
    s.train = tr;
    s.val = va;
    s.test = te;
    return s;
  }
  static SplitSpec days(std::size_t tr, std::size_t va, std::size_t te) {
    SplitSpec s;
    s.mode = Mode::by_day;
    s.train_days = tr;
    s.val_days = va;
    s.test_days = te;
    return s;
  }
};

// "fraction:0.7,0.1,0.2" or "by_day:6,3,3".
inline SplitSpec parse_split(std::string_view text) {
  auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("split must be fraction:a,b,c or by_day:a,b,c");
  const auto mode = text.substr(0, colon);
  std::vector<double> parts;
  std::string_view rest = text.substr(colon + 1);
  while (!rest.empty()) {
    auto comma = rest.find(',');
    auto tok = rest.substr(0, comma);
    parts.push_back(std::stod(std::string(tok)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (parts.size() != 3) throw ConfigError("split needs exactly three parts");
  if (mode == "fraction") return SplitSpec::fractions(parts[0], parts[1], parts[2]);
  if (mode == "by_day") {
    return SplitSpec::days(static_cast<std::size_t>(parts[0]), static_cast<std::size_t>(parts[1]),
                           static_cast<std::size_t>(parts[2]));
  }
  throw ConfigError("unknown split mode '" + std::string(mode) + "'");
}

inline std::string format_split(const SplitSpec& s) {
  auto num = [](double v) {
    std::string t = std::to_string(v);
    t.erase(t.find_last_not_of('0') + 1);
    if (!t.empty() && t.back() == '.') t.pop_back();
    return t;
  };
  if (s.mode == SplitSpec::Mode::fraction) return "fraction:" + num(s.train) + "," + num(s.val) + "," + num(s.test);
  return "by_day:" + std::to_string(s.train_days) + "," + std::to_string(s.val_days) + "," +
         std::to_string(s.test_days);
}

struct IndexRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct SplitRanges {
  IndexRange train, val, test;
};

inline std::int64_t utc_day(std::int64_t ts_ms) {
  constexpr std::int64_t kDay = 86'400'000;
  return ts_ms >= 0 ? ts_ms / kDay : -((-ts_ms + kDay - 1) / kDay);
}

inline SplitRanges split(std::span<const std::int64_t> ts, const SplitSpec& spec) {
  const std::size_t n = ts.size();
  SplitRanges r;
  if (spec.mode == SplitSpec::Mode::fraction) {
    if (spec.train <= 0.0 || spec.val < 0.0 || spec.test < 0.0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must be non-negative, train > 0, and sum to 1");
    }
    const auto tr = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.train));
    const auto va = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.val));
    if (tr == 0 || tr + va > n) throw DataError("split infeasible for series of length " + std::to_string(n));
    r.train = {0, tr};
    r.val = {tr, tr + va};
    r.test = {tr + va, n};
    return r;
  }
  if (spec.train_days == 0) throw ConfigError("by_day split needs at least one training day");
  std::vector<std::size_t> day_starts;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || utc_day(ts[i]) != utc_day(ts[i - 1])) day_starts.push_back(i);
  }
  const std::size_t need = spec.train_days + spec.val_days + spec.test_days;
  if (day_starts.size() < need) {
    throw DataError("by_day split needs " + std::to_string(need) + " days, series spans " +
                    std::to_string(day_starts.size()));
  }
  day_starts.push_back(n);
  auto at = [&](std::size_t d) { return day_starts[d]; };
  r.train = {at(0), at(spec.train_days)};
  r.val = {r.train.end, at(spec.train_days + spec.val_days)};
  r.test = {r.val.end, at(need)};
  return r;
}

// ---------------------------------------------------------------------------
// Windows.

struct WindowSpec {
  Task task = Task::movement;
  std::size_t window = 96;  // L_x
  std::size_t horizon = 20;  // k
};

// Anchors t in `range` whose input rows [t-L+1, t] and target ticks
// (t, t+k] stay inside the range; movement anchors must also be labeled.
inline std::vector<std::size_t> valid_anchors(const IndexRange& range, const WindowSpec& ws,
                                              const std::vector<bool>* label_mask = nullptr) {
  std::vector<std::size_t> out;
  if (ws.window == 0 || ws.horizon == 0) throw ConfigError("window and horizon must be positive");
  if (range.size() < ws.window + ws.horizon) return out;
  for (std::size_t t = range.begin + ws.window - 1; t + ws.horizon < range.end; ++t) {
    if (ws.task == Task::movement && label_mask && !(*label_mask)[t]) continue;
    out.push_back(t);
  }
  return out;
}

struct WindowedSample {
  std::vector<double> window;  // L_x x d, row-major, chronological
  std::vector<double> target;  // k values for regression tasks
  int label = -1;              // movement task
  std::size_t anchor = 0;
  std::int64_t anchor_ts = 0;
  std::vector<std::int64_t> target_ts;
};

// Materializes every sample over `range`. Regression targets are raw
// (un-normalized) mid-prices or differences.
inline std::vector<WindowedSample> make_windows(const FeatureMatrix& feats, std::span<const std::int64_t> ts,
                                                std::span<const double> mid, const labeling::LabelSeries* labels,
                                                const WindowSpec& ws, IndexRange range) {
  if (ws.task == Task::movement && !labels) throw ConfigError("movement windows need labels");
  auto anchors = valid_anchors(range, ws, labels ? &labels->mask : nullptr);
  std::vector<WindowedSample> out;
  out.reserve(anchors.size());
  for (std::size_t t : anchors) {
    WindowedSample s;
    s.anchor = t;
    s.anchor_ts = ts[t];
    const std::size_t first = t + 1 - ws.window;
    s.window.assign(feats.values.begin() + static_cast<std::ptrdiff_t>(first * feats.cols),
                    feats.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * feats.cols));
    if (ws.task == Task::movement) {
      s.label = labeling::code(labels->labels[t]);
    } else {
      for (std::size_t tau = 1; tau <= ws.horizon; ++tau) s.target_ts.push_back(ts[t + tau]);
      if (ws.task == Task::mid_price) {
        s.target.assign(mid.begin() + static_cast<std::ptrdiff_t>(t + 1),
                        mid.begin() + static_cast<std::ptrdiff_t>(t + 1 + ws.horizon));
      } else {
        s.target = labeling::diff_targets(mid, t, ws.horizon);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full dataset: normalized features plus anchor lists per split.

struct DatasetSpec {
  Task task = Task::movement;
  std::size_t window = 96;
  std::size_t horizon = 20;
  bool include_mid = true;
  SplitSpec split;
  std::uint64_t seed = 1;
  double delta = 0.0;  // movement threshold
};

struct Dataset {
  DatasetSpec spec;
  FeatureMatrix features;  // normalized
  std::vector<std::int64_t> ts;
  std::vector<double> mid;  // raw mid-prices
  NormStats feature_stats;
  NormStats target_stats;  // scalar stats for regression targets
  labeling::LabelSeries labels;
  SplitRanges ranges;
  std::vector<std::size_t> train, val, test;

  WindowSpec window_spec() const { return {spec.task, spec.window, spec.horizon}; }

  std::vector<double> raw_target(std::size_t anchor) const {
    if (spec.task == Task::mid_price) {
      return {mid.begin() + static_cast<std::ptrdiff_t>(anchor + 1),
              mid.begin() + static_cast<std::ptrdiff_t>(anchor + 1 + spec.horizon)};
    }
    return labeling::diff_targets(mid, anchor, spec.horizon);
  }

  int label(std::size_t anchor) const { return labeling::code(labels.labels[anchor]); }
};

// Mid-price targets reuse the mid feature's statistics; difference targets
// get their own scalar statistics fitted on training anchors.
inline NormStats fit_target_stats(const Dataset& d, const NormStats& raw_feature_stats) {
  if (d.spec.task == Task::mid_price) {
    if (d.spec.include_mid) {
      const std::size_t c = features::kBookFeatures;
      return {{raw_feature_stats.mean[c]}, {raw_feature_stats.std[c]}, raw_feature_stats.epsilon};
    }
    return fit_scalar_norm(std::span<const double>(d.mid).subspan(d.ranges.train.begin, d.ranges.train.size()));
  }
  if (d.spec.task == Task::mid_diff) {
    std::vector<double> all;
    for (std::size_t t : d.train) {
      auto v = labeling::diff_targets(d.mid, t, d.spec.horizon);
      all.insert(all.end(), v.begin(), v.end());
    }
    if (all.empty()) throw DataError("no training anchors for target statistics");
    return fit_scalar_norm(all);
  }
  return {};
}

// Builds the dataset. When `stats` is given (evaluation of a stored
// manifest) they are used instead of refitting.
inline Dataset build_dataset(const market::TickSeries& series, const DatasetSpec& spec,
                             const NormStats* feature_stats = nullptr, const NormStats* target_stats = nullptr) {
  if (series.empty()) throw DataError("dataset: empty tick series");
  Dataset d;
  d.spec = spec;
  d.ts = series.timestamps();
  d.mid = features::mid_prices(series);
  d.features = feature_matrix(series, spec.include_mid);
  d.ranges = split(d.ts, spec.split);
  if (spec.task == Task::movement) {
    d.labels = labeling::label_series(d.mid, {spec.horizon, spec.delta});
  }
  const auto ws = d.window_spec();
  const auto* mask = spec.task == Task::movement ? &d.labels.mask : nullptr;
  d.train = valid_anchors(d.ranges.train, ws, mask);
  d.val = valid_anchors(d.ranges.val, ws, mask);
  d.test = valid_anchors(d.ranges.test, ws, mask);
  if (d.train.empty()) throw DataError("dataset: no valid training anchors");
  d.feature_stats = feature_stats ? *feature_stats : fit_norm(d.features, d.ranges.train.begin, d.ranges.train.end);
  d.target_stats = target_stats ? *target_stats : fit_target_stats(d, d.feature_stats);
  apply_norm(d.features, d.feature_stats);
  return d;
}

struct BatchData {
  models::Batch batch;
  nn::Tensor targets;      // [B, k] normalized regression targets
  std::vector<int> labels;  // movement labels
};

inline BatchData make_batch(const Dataset& d, std::span<const std::size_t> anchors, bool teacher = false) {
  const std::size_t b = anchors.size(), len = d.spec.window, dim = d.features.cols, k = d.spec.horizon;
  std::vector<double> x;
  x.reserve(b * len * dim);
  BatchData out;
  out.batch.ts.reserve(b * len);
  for (std::size_t t : anchors) {
    const std::size_t first = t + 1 - len;
    x.insert(x.end(), d.features.values.begin() + static_cast<std::ptrdiff_t>(first * dim),
             d.features.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
    out.batch.ts.insert(out.batch.ts.end(), d.ts.begin() + static_cast<std::ptrdiff_t>(first),
                        d.ts.begin() + static_cast<std::ptrdiff_t>(t + 1));
  }
  out.batch.inputs = nn::Tensor::from({b, len, dim}, std::move(x));
  if (d.spec.task == Task::movement) {
    for (std::size_t t : anchors) out.labels.push_back(d.label(t));
  } else {
    std::vector<double> y;
    y.reserve(b * k);
    for (std::size_t t : anchors) {
      for (double v : d.raw_target(t)) y.push_back(normalize_value(v, d.target_stats));
    }
    out.targets = nn::Tensor::from({b, k}, std::move(y));
    if (teacher) out.batch.teacher = out.targets;
  }
  return out;
}

// Training order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::span<const std::size_t> anchors, std::uint64_t seed,
                                            std::size_t epoch) {
  std::vector<std::size_t> order(anchors.begin(), anchors.end());
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

}  // namespace lobforge::data
