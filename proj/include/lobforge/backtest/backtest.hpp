#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/data/dataset.hpp"

namespace lobforge::backtest {

enum class Side { flat = 0, long_ = 1, short_ = -1 };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::flat: return "flat";
    case Side::long_: return "long";
    case Side::short_: return "short";
  }
  return "?";
}

struct BacktestConfig {
  double shares = 1.0;  // mu
  std::size_t delay = 5;
  double cost_rate = 0.0;  // per side, fraction of notional
  // When false, an opposite signal only closes the position; the next
  // matching signal reopens.
  bool reverse_on_opposite = true;
};

inline void validate(const BacktestConfig& c) {
  if (!(c.shares > 0.0) || !std::isfinite(c.shares)) throw ConfigError("backtest: shares must be positive");
  if (!(c.cost_rate >= 0.0) || !std::isfinite(c.cost_rate)) throw ConfigError("backtest: cost_rate must be >= 0");
}

struct PositionState {
  Side side = Side::flat;
  double entry_price = 0.0;
  std::size_t entry_tick = 0;
  std::int64_t entry_ts = 0;
};

struct Trade {
  std::size_t open_tick = 0, close_tick = 0;
  std::int64_t open_ts = 0, close_ts = 0;
  Side side = Side::flat;
  double open_price = 0.0, close_price = 0.0;
  double pnl = 0.0;
  bool marked = false;  // closed by the end-of-run mark
};

struct BacktestLedger {
  std::vector<Trade> trades;
  std::vector<Side> position;   // per tick, after that tick's action
  std::vector<double> equity;   // per tick cumulative price return
  std::vector<std::int64_t> day_ts;  // first timestamp of each UTC day
  std::vector<double> daily_cpr;
};

inline double trade_pnl(Side s, double open, double close, const BacktestConfig& c) {
  return static_cast<double>(static_cast<int>(s)) * c.shares * (close - open) - c.cost_rate * c.shares * (open + close);
}

// Signals use movement codes (0 fall, 1 stationary, 2 rise). The signal at
// tick t is acted on at tick t + delay at that tick's mid. `ts` may be empty,
// in which case no daily series is produced.
inline BacktestLedger run_backtest(std::span<const int> signals, std::span<const double> mids,
                                   std::span<const std::int64_t> ts, const BacktestConfig& cfg) {
  validate(cfg);
  const std::size_t n = mids.size();
  if (signals.size() != n) throw DataError("backtest: signals and mids differ in length");
  if (!ts.empty() && ts.size() != n) throw DataError("backtest: timestamps and mids differ in length");
  if (n == 0) throw DataError("backtest: empty input");
  if (cfg.delay >= n) throw ConfigError("backtest: delay must be shorter than the series");
  for (int s : signals) {
    if (s < 0 || s > 2) throw DataError("backtest: signal outside {0,1,2}");
  }
  auto stamp = [&](std::size_t i) { return ts.empty() ? static_cast<std::int64_t>(i) : ts[i]; };

  BacktestLedger led;
  led.position.resize(n);
  led.equity.resize(n);
  PositionState pos;
  double realized = 0.0;

  auto close = [&](std::size_t u, bool marked) {
    Trade t{pos.entry_tick, u, pos.entry_ts, stamp(u), pos.side, pos.entry_price, mids[u], 0.0, marked};
    t.pnl = trade_pnl(t.side, t.open_price, t.close_price, cfg);
    realized += t.pnl;
    led.trades.push_back(t);
    pos = {};
  };
  auto open = [&](std::size_t u, Side s) { pos = {s, mids[u], u, stamp(u)}; };

  for (std::size_t u = 0; u < n; ++u) {
    const int sig = u >= cfg.delay ? signals[u - cfg.delay] : 1;
    const Side want = sig == 2 ? Side::long_ : sig == 0 ? Side::short_ : Side::flat;
    if (want != Side::flat && want != pos.side) {
      if (pos.side == Side::flat) {
        open(u, want);
      } else {
        close(u, false);
        if (cfg.reverse_on_opposite) open(u, want);
      }
    }
    led.position[u] = pos.side;
    double unreal = 0.0;
    if (pos.side != Side::flat) {
      unreal = static_cast<double>(static_cast<int>(pos.side)) * cfg.shares * (mids[u] - pos.entry_price) -
               cfg.cost_rate * cfg.shares * pos.entry_price;
    }
    led.equity[u] = realized + unreal;
  }
  if (pos.side != Side::flat) close(n - 1, true);
  led.equity[n - 1] = realized;

  if (!ts.empty()) {
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool last_of_day = i + 1 == n || data::utc_day(ts[i + 1]) != data::utc_day(ts[i]);
      if (i == 0 || data::utc_day(ts[i]) != data::utc_day(ts[i - 1])) led.day_ts.push_back(ts[i]);
      if (last_of_day) {
        led.daily_cpr.push_back(led.equity[i] - prev);
        prev = led.equity[i];
      }
    }
  }
  return led;
}

inline double cpr(const BacktestLedger& led) {
  double s = 0.0;
  for (const auto& t : led.trades) s += t.pnl;
  return s;
}

inline double sharpe_annualized(std::span<const double> daily) {
  if (daily.size() < 2) throw DataError("sharpe ratio undefined: fewer than 2 days");
  double mean = 0.0;
  for (double v : daily) mean += v;
  mean /= static_cast<double>(daily.size());
  double ss = 0.0;
  for (double v : daily) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(daily.size() - 1));
  if (!(sd > 0.0)) throw DataError("sharpe ratio undefined: zero standard deviation of daily returns");
  return std::sqrt(365.0) * mean / sd;
}

struct SweepRow {
  double cost_rate = 0.0;
  double cpr = 0.0;
  std::optional<double> sharpe;  // empty when undefined
  std::size_t trades = 0;
};

inline std::vector<SweepRow> cost_sweep(std::span<const int> signals, std::span<const double> mids,
                                        std::span<const std::int64_t> ts, BacktestConfig cfg,
                                        std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("cost sweep: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i] < grid[i - 1]) throw ConfigError("cost sweep: grid must be sorted ascending");
  }
  std::vector<SweepRow> rows;
  for (double c : grid) {
    cfg.cost_rate = c;
    auto led = run_backtest(signals, mids, ts, cfg);
    SweepRow r{c, cpr(led), std::nullopt, led.trades.size()};
    try {
      r.sharpe = sharpe_annualized(led.daily_cpr);
    } catch (const DataError&) {
    }
    rows.push_back(r);
  }
  return rows;
}

// "a:b:n" -> n evenly spaced costs from a to b inclusive.
inline std::vector<double> parse_cost_grid(const std::string& text) {
  auto p1 = text.find(':');
  auto p2 = p1 == std::string::npos ? p1 : text.find(':', p1 + 1);
  if (p2 == std::string::npos) throw ConfigError("cost grid must look like start:stop:count");
  double a = 0, b = 0;
  long n = 0;
  try {
    a = std::stod(text.substr(0, p1));
    b = std::stod(text.substr(p1 + 1, p2 - p1 - 1));
    n = std::stol(text.substr(p2 + 1));
  } catch (const std::exception&) {
    throw ConfigError("cost grid must look like start:stop:count");
  }
  if (n < 1 || a < 0 || b < a) throw ConfigError("cost grid needs count >= 1 and 0 <= start <= stop");
  std::vector<double> g;
  for (long i = 0; i < n; ++i) g.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

}  // namespace lobforge::backtest
