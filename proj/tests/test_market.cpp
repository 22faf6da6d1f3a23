#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lobforge/features/features.hpp"
#include "lobforge/market/io.hpp"
#include "lobforge/market/synth.hpp"
#include "test_util.hpp"

using namespace lobforge;
using namespace lobforge::market;

namespace {

std::string minimal_row() {
  std::ostringstream row;
  row << "1656806400000";
  for (int i = 0; i < 10; ++i) {
    row << ',' << format_number(100.02 + 0.01 * i) << ",1," << format_number(100.00 - 0.01 * i) << ",1";
  }
  return row.str();
}

}  // namespace

TEST(Snapshot, MinimalCsvRowParses) {
  std::istringstream in(csv_header() + "\n" + minimal_row() + "\n");
  auto series = read_snapshots(in, FileFormat::csv);
  ASSERT_EQ(series.size(), 1u);
  EXPECT_NEAR(series[0].spread(), 0.02, 1e-12);
  EXPECT_EQ(series[0].asks[9].price, 100.02 + 0.01 * 9);
}

TEST(Snapshot, CrossedBookNamesTheRow) {
  auto s = testutil::make_book(1, 100.0);
  s.asks[0].price = 99.95;  // below bid1
  std::istringstream in(csv_header() + "\n" + to_csv_row(testutil::make_book(0, 100.0)) + "\n" + to_csv_row(s) + "\n");
  try {
    read_snapshots(in, FileFormat::csv);
    FAIL() << "expected a crossed-book error";
  } catch (const DataError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("crossed"), std::string::npos) << msg;
  }
}

TEST(Snapshot, InvariantViolationsAreReported) {
  auto s = testutil::make_book(0, 100.0);
  EXPECT_TRUE(check_snapshot(s).empty());
  auto a = s;
  a.asks[3].price = a.asks[2].price;
  EXPECT_NE(check_snapshot(a).find("ask prices"), std::string::npos);
  auto b = s;
  b.bids[5].volume = -1.0;
  EXPECT_NE(check_snapshot(b).find("negative volume"), std::string::npos);
  auto c = s;
  c.bids[9].price = 0.0;
  EXPECT_NE(check_snapshot(c).find("non-positive"), std::string::npos);
}

TEST(Io, WrongFieldCountIsRejected) {
  std::istringstream in(csv_header() + "\n1,2,3\n");
  EXPECT_THROW(read_snapshots(in, FileFormat::csv), DataError);
}

TEST(Io, MissingHeaderAndEmptyFileAreErrors) {
  std::istringstream no_header(minimal_row() + "\n");
  EXPECT_THROW(read_snapshots(no_header, FileFormat::csv), DataError);
  std::istringstream empty(csv_header() + "\n");
  EXPECT_THROW(read_snapshots(empty, FileFormat::csv), DataError);
  std::istringstream empty_jsonl("");
  EXPECT_THROW(read_snapshots(empty_jsonl, FileFormat::jsonl), DataError);
}

TEST(Io, DuplicateTimestampsKeepTheLastRow) {
  auto a = testutil::make_book(5, 100.0);
  auto b = testutil::make_book(5, 101.0);
  auto c = testutil::make_book(6, 102.0);
  std::istringstream in(csv_header() + "\n" + to_csv_row(a) + "\n" + to_csv_row(b) + "\n" + to_csv_row(c) + "\n");
  auto s = read_snapshots(in, FileFormat::csv);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], b);
  EXPECT_EQ(s[1], c);
}

TEST(Io, BackwardsTimestampIsAnError) {
  std::istringstream in(csv_header() + "\n" + to_csv_row(testutil::make_book(5, 100.0)) + "\n" +
                        to_csv_row(testutil::make_book(4, 100.0)) + "\n");
  EXPECT_THROW(read_snapshots(in, FileFormat::csv), DataError);
}

TEST(Io, JsonLineShapeErrors) {
  std::string why;
  EXPECT_FALSE(try_parse_json_line(R"({"ts":1,"asks":[[1,1]],"bids":[[0.5,1]]})", why));
  EXPECT_FALSE(why.empty());
  EXPECT_FALSE(try_parse_json_line(R"({"ts":1,"asks":[[1,1],)", why));
  EXPECT_FALSE(try_parse_json_line(R"({"asks":[],"bids":[]})", why));
}

// Property: every number survives write -> read in both formats, over
// random books with awkward decimal values.
TEST(Io, RoundTripIsLosslessInBothFormats) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    TickSeries series;
    std::int64_t ts = 1'600'000'000'000 + trial;
    for (int r = 0; r < 20; ++r) {
      auto s = testutil::make_book(ts += 1 + static_cast<std::int64_t>(u(rng) * 50), 20 + 1000 * u(rng), 1e-3 + u(rng));
      for (auto& l : s.asks) l.volume = u(rng) * 1e3 / 3.0;
      for (auto& l : s.bids) l.volume = u(rng) * 1e-7;
      series.snapshots.push_back(s);
    }
    for (auto fmt : {FileFormat::csv, FileFormat::jsonl}) {
      std::stringstream buf;
      write_snapshots(buf, series, fmt);
      auto back = read_snapshots(buf, fmt);
      ASSERT_EQ(back.snapshots, series.snapshots);
    }
  }
}

TEST(Io, FeatureVectorMatchesCsvFieldOrder) {
  auto row = minimal_row();
  auto s = parse_csv_row(row, 1);
  auto fv = features::feature_vector(s, false);
  auto fields = detail::split_commas(row);
  ASSERT_EQ(fields.size(), 41u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(fv.values[i], std::stod(std::string(fields[i + 1])));
}

TEST(Synth, SawtoothIsExactlyPeriodic) {
  SynthConfig c;
  c.regime = Regime::sawtooth;
  c.n_ticks = 100;
  c.period = 40;
  c.amplitude_ticks = 20;
  auto mid = features::mid_prices(synth_lob(c));
  for (std::size_t t = 40; t < mid.size(); ++t) EXPECT_EQ(mid[t], mid[t - 40]) << t;
  const auto [lo, hi] = std::minmax_element(mid.begin(), mid.end());
  EXPECT_NEAR(*hi - *lo, 20 * c.tick_size, 1e-9);
}

TEST(Synth, SameSeedIsByteIdentical) {
  SynthConfig c;
  c.n_ticks = 10000;
  c.seed = 7;
  std::stringstream a, b;
  write_snapshots(a, synth_lob(c), FileFormat::csv);
  write_snapshots(b, synth_lob(c), FileFormat::csv);
  EXPECT_EQ(a.str(), b.str());
  c.seed = 8;
  std::stringstream d;
  write_snapshots(d, synth_lob(c), FileFormat::csv);
  EXPECT_NE(a.str(), d.str());
}

TEST(Synth, TrendDriftWithinThirtyPercent) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthConfig c;
    c.regime = Regime::trend_plus_noise;
    c.n_ticks = 10000;
    c.seed = seed;
    c.drift_ticks = 0.01;
    auto mid = features::mid_prices(synth_lob(c));
    const double moved_ticks = (mid.back() - mid.front()) / c.tick_size;
    EXPECT_NEAR(moved_ticks, 100.0, 30.0) << "seed " << seed;
  }
}

TEST(Synth, EverySnapshotIsValidOverRandomConfigs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    SynthConfig c;
    c.regime = static_cast<Regime>(trial % 3);
    c.n_ticks = 500;
    c.seed = trial;
    c.tick_size = 0.001 + 0.1 * u(rng);
    c.base_price = 200 + 1000 * u(rng);
    c.spread_ticks = 1 + 4 * u(rng);
    c.vol_scale = 3 * u(rng);
    auto s = synth_lob(c);
    ASSERT_EQ(s.size(), 500u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      ASSERT_TRUE(check_snapshot(s[i]).empty()) << check_snapshot(s[i]);
      if (i) {
        ASSERT_GT(s[i].ts, s[i - 1].ts);
      }
    }
  }
}

TEST(Synth, InvalidConfigsAreRejected) {
  SynthConfig c;
  c.n_ticks = 0;
  EXPECT_THROW(synth_lob(c), ConfigError);
  c = {};
  c.tick_size = 0;
  EXPECT_THROW(synth_lob(c), ConfigError);
  EXPECT_THROW(parse_regime("flat"), ConfigError);
}
