#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lobforge/core/error.hpp"
#include "lobforge/market/snapshot.hpp"

namespace lobforge::market {

enum class FileFormat { csv, jsonl };

inline FileFormat parse_format(std::string_view name) {
  if (name == "csv") return FileFormat::csv;
  if (name == "jsonl") return FileFormat::jsonl;
  throw ConfigError("unknown snapshot format '" + std::string(name) + "' (expected csv|jsonl)");
}

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string csv_header() {
  std::string h = "ts_ms";
  for (std::size_t i = 1; i <= kLevels; ++i) {
    const auto n = std::to_string(i);
    h += ",ap" + n + ",av" + n + ",bp" + n + ",bv" + n;
  }
  return h;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_field(std::string_view text, T& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

[[noreturn]] inline void row_error(std::size_t row, const std::string& why) {
  throw DataError("row " + std::to_string(row) + ": " + why);
}

}  // namespace detail

// Parses one CSV data row; `row` is only used in error messages.
inline LobSnapshot parse_csv_row(std::string_view line, std::size_t row) {
  const auto fields = detail::split_commas(line);
  constexpr std::size_t expected = 1 + 4 * kLevels;
  if (fields.size() != expected) {
    detail::row_error(row, "expected " + std::to_string(expected) + " fields, got " +
                               std::to_string(fields.size()));
  }
  LobSnapshot s;
  if (!detail::parse_field(fields[0], s.ts)) detail::row_error(row, "bad ts_ms '" + std::string(fields[0]) + "'");
  for (std::size_t i = 0; i < kLevels; ++i) {
    double* dst[4] = {&s.asks[i].price, &s.asks[i].volume, &s.bids[i].price, &s.bids[i].volume};
    for (std::size_t j = 0; j < 4; ++j) {
      const auto& f = fields[1 + 4 * i + j];
      if (!detail::parse_field(f, *dst[j])) {
        detail::row_error(row, "bad numeric field " + std::to_string(2 + 4 * i + j) + " '" + std::string(f) + "'");
      }
    }
  }
  if (auto why = check_snapshot(s); !why.empty()) detail::row_error(row, why);
  return s;
}

inline std::string to_csv_row(const LobSnapshot& s) {
  std::string out = std::to_string(s.ts);
  for (std::size_t i = 0; i < kLevels; ++i) {
    for (double v : {s.asks[i].price, s.asks[i].volume, s.bids[i].price, s.bids[i].volume}) {
      out += ',';
      out += format_number(v);
    }
  }
  return out;
}

inline std::string to_json_line(const LobSnapshot& s) {
  std::string out = "{\"ts\":" + std::to_string(s.ts);
  auto side = [&out](const char* name, const std::array<Level, kLevels>& levels) {
    out += ",\"";
    out += name;
    out += "\":[";
    for (std::size_t i = 0; i < kLevels; ++i) {
      if (i) out += ',';
      out += '[' + format_number(levels[i].price) + ',' + format_number(levels[i].volume) + ']';
    }
    out += ']';
  };
  side("asks", s.asks);
  side("bids", s.bids);
  out += '}';
  return out;
}

// Parses one JSONL object. Returns std::nullopt and fills `why` on any
// protocol or invariant violation.
inline std::optional<LobSnapshot> try_parse_json_line(std::string_view line, std::string& why) {
  auto doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    why = "not a JSON object";
    return std::nullopt;
  }
  LobSnapshot s;
  auto ts = doc.find("ts");
  if (ts == doc.end() || !ts->is_number_integer()) {
    why = "missing integer 'ts'";
    return std::nullopt;
  }
  s.ts = ts->get<std::int64_t>();
  auto side = [&](const char* name, std::array<Level, kLevels>& dst) {
    auto it = doc.find(name);
    if (it == doc.end() || !it->is_array() || it->size() != kLevels) {
      why = std::string("'") + name + "' must be an array of " + std::to_string(kLevels) + " levels";
      return false;
    }
    for (std::size_t i = 0; i < kLevels; ++i) {
      const auto& lv = (*it)[i];
      if (!lv.is_array() || lv.size() != 2 || !lv[0].is_number() || !lv[1].is_number()) {
        why = std::string("'") + name + "' level " + std::to_string(i + 1) + " must be [price, volume]";
        return false;
      }
      dst[i] = {lv[0].get<double>(), lv[1].get<double>()};
    }
    return true;
  };
  if (!side("asks", s.asks) || !side("bids", s.bids)) return std::nullopt;
  why = check_snapshot(s);
  if (!why.empty()) return std::nullopt;
  return s;
}

inline LobSnapshot parse_json_line(std::string_view line, std::size_t row) {
  std::string why;
  auto s = try_parse_json_line(line, why);
  if (!s) detail::row_error(row, why);
  return *s;
}

inline TickSeries read_snapshots(std::istream& in, FileFormat format) {
  TickSeries series;
  std::string line;
  std::size_t row = 0;
  bool header_seen = format != FileFormat::csv;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (detail::trim(line).substr(0, 5) != "ts_ms") throw DataError("missing CSV header");
      continue;
    }
    ++row;
    auto s = format == FileFormat::csv ? parse_csv_row(line, row) : parse_json_line(line, row);
    if (!append_ordered(series, s)) detail::row_error(row, "timestamp goes backwards");
  }
  if (row == 0) throw DataError("no snapshot rows in input");
  return series;
}

inline TickSeries read_snapshots(const std::string& path, FileFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  auto series = read_snapshots(in, format);
  series.source = path;
  return series;
}

inline void write_snapshots(std::ostream& out, const TickSeries& series, FileFormat format) {
  if (format == FileFormat::csv) out << csv_header() << '\n';
  for (const auto& s : series.snapshots) {
    out << (format == FileFormat::csv ? to_csv_row(s) : to_json_line(s)) << '\n';
  }
}

inline void write_snapshots(const std::string& path, const TickSeries& series, FileFormat format) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_snapshots(out, series, format);
}

inline FileFormat guess_format(const std::string& path) {
  return path.size() >= 6 && path.ends_with(".jsonl") ? FileFormat::jsonl : FileFormat::csv;
}

}  // namespace lobforge::market
