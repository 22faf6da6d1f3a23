#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "lobforge/data/dataset.hpp"
#include "lobforge/market/synth.hpp"
#include "test_util.hpp"

using namespace lobforge;
using namespace lobforge::data;

namespace {

constexpr std::int64_t kDayMs = 86'400'000;

market::TickSeries synth(std::size_t n, std::int64_t interval_ms = 1000, std::uint64_t seed = 3) {
  market::SynthConfig c;
  c.n_ticks = n;
  c.seed = seed;
  c.tick_interval_ms = interval_ms;
  c.start_ts = 1'656'806'400'000;  // a UTC midnight
  return market::synth_lob(c);
}

market::TickSeries linear_mid(std::size_t n) {
  market::TickSeries s;
  for (std::size_t i = 0; i < n; ++i)
    s.snapshots.push_back(testutil::make_book(static_cast<std::int64_t>(i) * 1000, 100.0 + static_cast<double>(i)));
  return s;
}

DatasetSpec spec_for(Task task, std::size_t window, std::size_t horizon) {
  DatasetSpec s;
  s.task = task;
  s.window = window;
  s.horizon = horizon;
  s.delta = 1e-5;
  return s;
}

}  // namespace

TEST(Norm, PopulationStd) {
  FeatureMatrix m{3, 2, {1, 5, 2, 5, 3, 5}};
  auto st = fit_norm(m);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.std[0], std::sqrt(2.0 / 3.0));
  EXPECT_EQ(st.std[1], 0.0);
  apply_norm(m, st);
  // a constant column maps to zero instead of dividing by zero
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_NEAR(m.at(0, 0), -1.0 / (std::sqrt(2.0 / 3.0) + kNormEpsilon), 1e-15);
  EXPECT_THROW(fit_norm(m, 2, 2), DataError);
}

TEST(Norm, ApplyThenInvertRoundTrips) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMatrix m{50, 7, std::vector<double>(350)};
    for (auto& v : m.values) v = u(rng);
    auto original = m.values;
    auto st = fit_norm(m, 0, 30);
    apply_norm(m, st);
    invert_norm(m, st);
    for (std::size_t i = 0; i < m.values.size(); ++i) ASSERT_NEAR(m.values[i], original[i], 1e-9);
  }
}

TEST(Split, FractionsOnHundredTicks) {
  std::vector<std::int64_t> ts(100);
  for (std::size_t i = 0; i < 100; ++i) ts[i] = static_cast<std::int64_t>(i);
  auto r = split(ts, SplitSpec::fractions(0.7, 0.1, 0.2));
  EXPECT_EQ(r.train, (IndexRange{0, 70}));
  EXPECT_EQ(r.val, (IndexRange{70, 80}));
  EXPECT_EQ(r.test, (IndexRange{80, 100}));
  EXPECT_THROW(split(ts, SplitSpec::fractions(0.7, 0.2, 0.2)), ConfigError);
}

TEST(Split, ByDayOverTwelveDays) {
  auto s = synth(1200, kDayMs / 100);
  auto ts = s.timestamps();
  auto r = split(ts, SplitSpec::days(6, 3, 3));
  EXPECT_EQ(r.train, (IndexRange{0, 600}));
  EXPECT_EQ(r.val, (IndexRange{600, 900}));
  EXPECT_EQ(r.test, (IndexRange{900, 1200}));
  for (std::size_t i = r.train.begin; i < r.train.end; ++i) EXPECT_LT(utc_day(ts[i]), utc_day(ts[r.val.begin]));
  EXPECT_THROW(split(ts, SplitSpec::days(6, 3, 4)), DataError);
}

TEST(Split, ParseAndFormat) {
  auto s = parse_split("fraction:0.6,0.2,0.2");
  EXPECT_EQ(s.mode, SplitSpec::Mode::fraction);
  EXPECT_EQ(format_split(s), "fraction:0.6,0.2,0.2");
  EXPECT_EQ(format_split(parse_split("by_day:6,3,3")), "by_day:6,3,3");
  EXPECT_THROW(parse_split("fraction:0.5,0.5"), ConfigError);
  EXPECT_THROW(parse_split("weekly:1,1,1"), ConfigError);
}

TEST(UtcDay, FloorsNegativeStamps) {
  EXPECT_EQ(utc_day(0), 0);
  EXPECT_EQ(utc_day(kDayMs - 1), 0);
  EXPECT_EQ(utc_day(kDayMs), 1);
  EXPECT_EQ(utc_day(-1), -1);
}

TEST(Windows, ExactFitGivesOneSample) {
  WindowSpec ws{Task::mid_price, 10, 5};
  EXPECT_EQ(valid_anchors({0, 15}, ws).size(), 1u);
  EXPECT_EQ(valid_anchors({0, 15}, ws).front(), 9u);
  EXPECT_TRUE(valid_anchors({0, 14}, ws).empty());
}

// Property: len - L_x - k + 1 anchors over random lengths and offsets.
TEST(Windows, CountFormula) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t lx = 1 + rng() % 30, k = 1 + rng() % 20, begin = rng() % 50, len = rng() % 120;
    auto a = valid_anchors({begin, begin + len}, {Task::mid_diff, lx, k});
    const std::size_t expect = len >= lx + k ? len - lx - k + 1 : 0;
    ASSERT_EQ(a.size(), expect);
    for (std::size_t t : a) {
      ASSERT_GE(t + 1, begin + lx);
      ASSERT_LT(t + k, begin + len);
    }
  }
}

TEST(Windows, MidDiffTargetsOnALinearSeries) {
  auto s = linear_mid(20);
  auto feats = feature_matrix(s, true);
  auto ts = s.timestamps();
  auto mid = features::mid_prices(s);
  auto w = make_windows(feats, ts, mid, nullptr, {Task::mid_diff, 4, 3}, {0, 20});
  ASSERT_EQ(w.size(), 14u);
  for (const auto& x : w) EXPECT_EQ(x.target, (std::vector<double>{1, 2, 3}));
  auto p = make_windows(feats, ts, mid, nullptr, {Task::mid_price, 4, 3}, {0, 20});
  EXPECT_EQ(p[0].target, (std::vector<double>{104, 105, 106}));
  EXPECT_EQ(p[0].window.size(), 4u * 41u);
  EXPECT_EQ(p[0].target_ts, (std::vector<std::int64_t>{4000, 5000, 6000}));
}

TEST(Windows, ChronologicalRowsEndAtTheAnchor) {
  auto s = synth(100);
  auto feats = feature_matrix(s, false);
  auto ts = s.timestamps();
  auto mid = features::mid_prices(s);
  auto w = make_windows(feats, ts, mid, nullptr, {Task::mid_price, 8, 2}, {10, 60});
  for (const auto& x : w) {
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < feats.cols; ++c)
        ASSERT_EQ(x.window[r * feats.cols + c], feats.at(x.anchor - 7 + r, c));
  }
}

TEST(Windows, MovementNeedsLabels) {
  auto s = synth(100);
  auto feats = feature_matrix(s, false);
  auto ts = s.timestamps();
  auto mid = features::mid_prices(s);
  EXPECT_THROW(make_windows(feats, ts, mid, nullptr, {Task::movement, 8, 2}, {0, 100}), ConfigError);
}

// No sample in any split reads a row, or a target tick, outside its split,
// and the normalization statistics come from training rows only.
TEST(Dataset, NoLeakageAcrossSplits) {
  for (auto task : {Task::mid_price, Task::mid_diff, Task::movement}) {
    auto s = synth(3000);
    auto d = build_dataset(s, spec_for(task, 30, 10));
    const std::pair<const std::vector<std::size_t>*, IndexRange> parts[] = {
        {&d.train, d.ranges.train}, {&d.val, d.ranges.val}, {&d.test, d.ranges.test}};
    for (const auto& [anchors, range] : parts) {
      ASSERT_FALSE(anchors->empty());
      for (std::size_t t : *anchors) {
        ASSERT_TRUE(range.contains(t + 1 - 30));
        ASSERT_TRUE(range.contains(t + 10));
      }
    }
    auto raw = feature_matrix(s, true);
    auto st = fit_norm(raw, d.ranges.train.begin, d.ranges.train.end);
    EXPECT_EQ(st.mean, d.feature_stats.mean);
    EXPECT_EQ(st.std, d.feature_stats.std);
  }
}

TEST(Dataset, ChangingTestRowsLeavesTrainingUntouched) {
  auto s = synth(2000);
  auto a = build_dataset(s, spec_for(Task::mid_diff, 20, 5));
  for (std::size_t i = a.ranges.test.begin; i < s.size(); ++i) {
    for (auto& l : s.snapshots[i].asks) l.volume *= 7;
  }
  auto b = build_dataset(s, spec_for(Task::mid_diff, 20, 5));
  EXPECT_EQ(a.feature_stats.mean, b.feature_stats.mean);
  EXPECT_EQ(a.target_stats.mean, b.target_stats.mean);
  auto ba = make_batch(a, a.train), bb = make_batch(b, b.train);
  EXPECT_EQ(ba.batch.inputs.values(), bb.batch.inputs.values());
}

TEST(Dataset, MovementLabelsComeFromTheLabeler) {
  auto s = synth(2000);
  auto d = build_dataset(s, spec_for(Task::movement, 20, 10));
  auto expect = testutil::brute_labels(features::mid_prices(s), 10, 1e-5);
  auto batch = make_batch(d, d.test);
  for (std::size_t i = 0; i < d.test.size(); ++i) EXPECT_EQ(batch.labels[i], expect[d.test[i]]);
}

TEST(Dataset, BatchTargetsAreNormalized) {
  auto s = synth(2000);
  auto d = build_dataset(s, spec_for(Task::mid_price, 20, 5));
  auto b = make_batch(d, std::vector<std::size_t>{d.train[3]}, true);
  ASSERT_EQ(b.targets.shape(), (nn::Shape{1, 5}));
  for (std::size_t tau = 0; tau < 5; ++tau) {
    EXPECT_NEAR(denormalize_value(b.targets[tau], d.target_stats), d.mid[d.train[3] + 1 + tau], 1e-9);
  }
  EXPECT_TRUE(b.batch.teacher.defined());
  EXPECT_EQ(b.batch.ts.size(), 20u);
}

TEST(Dataset, TooShortSeriesIsADataError) {
  EXPECT_THROW(build_dataset(synth(30), spec_for(Task::mid_price, 20, 5)), DataError);
}

TEST(EpochOrder, DeterministicPermutation) {
  std::vector<std::size_t> anchors(500);
  for (std::size_t i = 0; i < anchors.size(); ++i) anchors[i] = 3 * i;
  auto a = epoch_order(anchors, 7, 2), b = epoch_order(anchors, 7, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, epoch_order(anchors, 7, 3));
  EXPECT_NE(a, epoch_order(anchors, 8, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, anchors);
}
