#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"

namespace lobforge::market {

inline constexpr std::size_t kLevels = 10;

struct Level {
  double price = 0.0;
  double volume = 0.0;

  friend bool operator==(const Level&, const Level&) = default;
};

// One tick of a 10-level book. Asks ascend by price, bids descend.
struct LobSnapshot {
  std::int64_t ts = 0;  // ms since Unix epoch
  std::array<Level, kLevels> asks{};
  std::array<Level, kLevels> bids{};

  double best_ask() const { return asks[0].price; }
  double best_bid() const { return bids[0].price; }
  double spread() const { return asks[0].price - bids[0].price; }

  friend bool operator==(const LobSnapshot&, const LobSnapshot&) = default;
};

// Returns an empty string for a valid snapshot, otherwise the first violated
// invariant.
inline std::string check_snapshot(const LobSnapshot& s) {
  for (std::size_t i = 0; i < kLevels; ++i) {
    const auto& a = s.asks[i];
    const auto& b = s.bids[i];
    if (!(a.price > 0.0) || !(b.price > 0.0)) {
      return "non-positive price at level " + std::to_string(i + 1);
    }
    if (!(a.volume >= 0.0) || !(b.volume >= 0.0)) {
      return "negative volume at level " + std::to_string(i + 1);
    }
    if (i > 0) {
      if (!(a.price > s.asks[i - 1].price)) {
        return "ask prices not strictly increasing at level " + std::to_string(i + 1);
      }
      if (!(b.price < s.bids[i - 1].price)) {
        return "bid prices not strictly decreasing at level " + std::to_string(i + 1);
      }
    }
  }
  if (!(s.asks[0].price > s.bids[0].price)) return "crossed book (ask1 <= bid1)";
  return {};
}

inline void validate_snapshot(const LobSnapshot& s) {
  if (auto why = check_snapshot(s); !why.empty()) {
    throw DataError("invalid snapshot at ts " + std::to_string(s.ts) + ": " + why);
  }
}

struct TickSeries {
  std::vector<LobSnapshot> snapshots;
  std::string symbol;
  std::string source;

  std::size_t size() const { return snapshots.size(); }
  bool empty() const { return snapshots.empty(); }
  const LobSnapshot& operator[](std::size_t i) const { return snapshots[i]; }

  std::vector<std::int64_t> timestamps() const {
    std::vector<std::int64_t> out;
    out.reserve(snapshots.size());
    for (const auto& s : snapshots) out.push_back(s.ts);
    return out;
  }
};

// Appends with the ingest rules: equal timestamps replace the previous
// snapshot, earlier timestamps are rejected. Returns false on rejection.
inline bool append_ordered(TickSeries& series, const LobSnapshot& s) {
  auto& v = series.snapshots;
  if (!v.empty()) {
    if (s.ts < v.back().ts) return false;
    if (s.ts == v.back().ts) {
      v.back() = s;
      return true;
    }
  }
  v.push_back(s);
  return true;
}

}  // namespace lobforge::market
