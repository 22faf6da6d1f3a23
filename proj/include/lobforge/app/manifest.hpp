#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lobforge/app/config.hpp"
#include "lobforge/core/error.hpp"
#include "lobforge/data/dataset.hpp"
#include "lobforge/market/io.hpp"
#include "lobforge/models/forecasters.hpp"

namespace lobforge::app {

inline constexpr const char* kToolVersion = "lobforge 0.1.0";

using Json = nlohmann::ordered_json;

// 64-bit FNV-1a of a file's bytes, hex encoded. Used to tie manifests to
// the exact inputs they consumed.
inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

inline std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

inline void ensure_parent(const std::string& path) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json(const std::string& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// One per artifact-producing command. Contains no wall-clock data so that a
// rerun writes an identical file.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;
  std::vector<std::string> parents;  // manifests of upstream stages
  Json extra = Json::object();

  void add_input(const std::string& path) { inputs.emplace_back(path, file_digest(path)); }

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["config"] = Json::object();
    for (const auto& [k, v] : config) j["config"][k] = v;
    j["inputs"] = Json::array();
    for (const auto& [p, d] : inputs) j["inputs"].push_back({{"path", p}, {"digest", d}});
    j["outputs"] = outputs;
    j["parents"] = parents;
    if (!extra.empty()) j["details"] = extra;
    return j;
  }

  static RunManifest from_json(const Json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& [k, v] : j.at("config").items()) m.config[k] = v.get<std::string>();
      for (const auto& in : j.at("inputs")) m.inputs.emplace_back(in.at("path"), in.at("digest"));
      m.outputs = j.at("outputs").get<std::vector<std::string>>();
      m.parents = j.at("parents").get<std::vector<std::string>>();
      if (j.contains("details")) m.extra = j.at("details");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed run manifest: ") + e.what());
    }
    return m;
  }

  void write(const std::string& path) const { write_json(path, to_json()); }
  static RunManifest load(const std::string& path) { return from_json(read_json(path)); }
};

// ---------------------------------------------------------------------------
// Dataset manifest: the text needed to rebuild a Dataset bit-for-bit.

inline std::string join_numbers(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += market::format_number(xs[i]);
  }
  return out;
}

inline std::vector<double> parse_numbers(const std::string& key, const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  for (auto tok : market::detail::split_commas(text)) out.push_back(Config::parse_real(key, std::string(tok)));
  return out;
}

struct DatasetManifest {
  data::DatasetSpec spec;
  std::string ticks;
  std::string ticks_digest;
  data::NormStats feature_stats;
  data::NormStats target_stats;

  Config to_config() const {
    Config c;
    c.set("task", data::task_name(spec.task));
    c.set("lx", std::to_string(spec.window));
    c.set("k", std::to_string(spec.horizon));
    c.set("include_mid", spec.include_mid ? "true" : "false");
    c.set("split", data::format_split(spec.split));
    c.set("seed", std::to_string(spec.seed));
    c.set("delta", market::format_number(spec.delta));
    c.set("ticks", ticks);
    c.set("ticks_digest", ticks_digest);
    c.set("norm_epsilon", market::format_number(feature_stats.epsilon));
    c.set("feature_mean", join_numbers(feature_stats.mean));
    c.set("feature_std", join_numbers(feature_stats.std));
    c.set("target_mean", join_numbers(target_stats.mean));
    c.set("target_std", join_numbers(target_stats.std));
    return c;
  }

  void write(const std::string& path) const { write_text(path, to_config().to_text()); }

  static DatasetManifest load(const std::string& path) {
    auto c = Config::load(path);
    DatasetManifest m;
    m.spec.task = data::parse_task(c.require("task"));
    m.spec.window = c.integer("lx", 0);
    m.spec.horizon = c.integer("k", 0);
    m.spec.include_mid = c.boolean("include_mid", true);
    m.spec.split = data::parse_split(c.require("split"));
    m.spec.seed = c.integer("seed", 1);
    m.spec.delta = c.real("delta", 0.0);
    m.ticks = c.require("ticks");
    m.ticks_digest = c.require("ticks_digest");
    const double eps = c.real("norm_epsilon", data::kNormEpsilon);
    m.feature_stats = {parse_numbers("feature_mean", c.require("feature_mean")),
                       parse_numbers("feature_std", c.require("feature_std")), eps};
    m.target_stats = {parse_numbers("target_mean", c.str("target_mean", "")),
                      parse_numbers("target_std", c.str("target_std", "")), eps};
    return m;
  }
};

inline market::TickSeries load_ticks(const std::string& path) {
  return market::read_snapshots(path, market::guess_format(path));
}

// Rebuilds the dataset a manifest describes, refusing if the tick file
// changed since the manifest was written.
inline data::Dataset load_dataset(const DatasetManifest& m) {
  if (file_digest(m.ticks) != m.ticks_digest) {
    throw DataError("tick file '" + m.ticks + "' does not match the digest recorded in the dataset manifest");
  }
  return data::build_dataset(load_ticks(m.ticks), m.spec, &m.feature_stats,
                             m.spec.task == data::Task::movement ? nullptr : &m.target_stats);
}

// ---------------------------------------------------------------------------
// Model manifest: architecture and provenance of a checkpoint.

struct ModelManifest {
  models::ModelConfig model;
  std::string dataset;     // dataset manifest path
  std::string checkpoint;  // binary parameter file

  Config to_config() const {
    Config c;
    c.set("model", models::model_kind_name(model.kind));
    c.set("head", models::head_kind_name(model.head));
    c.set("input_dim", std::to_string(model.input_dim));
    c.set("hidden", std::to_string(model.hidden_dim));
    c.set("layers", std::to_string(model.n_layers));
    c.set("heads", std::to_string(model.n_heads));
    c.set("d_model", std::to_string(model.d_model));
    c.set("encoder_layers", std::to_string(model.encoder_layers));
    c.set("decoder_layers", std::to_string(model.decoder_layers));
    c.set("d_ff", std::to_string(model.d_ff));
    c.set("lx", std::to_string(model.window));
    c.set("k", std::to_string(model.horizon));
    c.set("decompose_window", std::to_string(model.decompose_window));
    c.set("context_mean", model.context_mean ? "true" : "false");
    c.set("stamp_alpha", market::format_number(model.stamp_alpha));
    c.set("seed", std::to_string(model.seed));
    c.set("dataset", dataset);
    c.set("checkpoint", checkpoint);
    return c;
  }

  void write(const std::string& path) const { write_text(path, to_config().to_text()); }

  static ModelManifest load(const std::string& path) {
    auto c = Config::load(path);
    ModelManifest m;
    m.model.kind = models::parse_model_kind(c.require("model"));
    m.model.head = models::parse_head_kind(c.require("head"));
    m.model.input_dim = c.integer("input_dim", 41);
    m.model.hidden_dim = c.integer("hidden", 64);
    m.model.n_layers = c.integer("layers", 1);
    m.model.n_heads = c.integer("heads", 4);
    m.model.d_model = c.integer("d_model", 64);
    m.model.encoder_layers = c.integer("encoder_layers", 2);
    m.model.decoder_layers = c.integer("decoder_layers", 1);
    m.model.d_ff = c.integer("d_ff", 256);
    m.model.window = c.integer("lx", 96);
    m.model.horizon = c.integer("k", 20);
    m.model.decompose_window = c.integer("decompose_window", 25);
    m.model.context_mean = c.boolean("context_mean", false);
    m.model.stamp_alpha = c.real("stamp_alpha", 1.0);
    m.model.seed = c.integer("seed", 1);
    m.dataset = c.require("dataset");
    m.checkpoint = c.require("checkpoint");
    return m;
  }
};

// The text manifest sits next to the checkpoint.
inline std::string model_manifest_path(const std::string& checkpoint) { return checkpoint + ".txt"; }

}  // namespace lobforge::app
