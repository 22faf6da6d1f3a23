#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lobforge/app/config.hpp"
#include "lobforge/app/manifest.hpp"
#include "lobforge/backtest/backtest.hpp"
#include "lobforge/core/error.hpp"
#include "lobforge/data/dataset.hpp"
#include "lobforge/features/features.hpp"
#include "lobforge/labeling/labeling.hpp"
#include "lobforge/market/io.hpp"
#include "lobforge/market/stream.hpp"
#include "lobforge/market/synth.hpp"
#include "lobforge/models/forecasters.hpp"
#include "lobforge/nn/checkpoint.hpp"
#include "lobforge/train/metrics.hpp"
#include "lobforge/train/trainer.hpp"

// Stage runners shared by the individual subcommands and `pipeline`. Each
// takes a flat Config whose keys match the long command-line flags, writes
// its outputs plus one run manifest, and returns the manifest path.

namespace lobforge::app {

namespace detail {

inline RunManifest start_manifest(const std::string& command, const Config& cfg, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config = cfg.values();
  m.seed = seed;
  return m;
}

inline void add_parent_if_present(RunManifest& m, const std::string& artifact) {
  if (std::filesystem::exists(manifest_path(artifact))) m.parents.push_back(manifest_path(artifact));
}

inline std::string finish(RunManifest& m, const std::string& primary_output) {
  const auto path = manifest_path(primary_output);
  m.write(path);
  return path;
}

inline bool looks_like_endpoint(const std::string& in) {
  if (std::filesystem::exists(in)) return false;
  auto colon = in.rfind(':');
  if (colon == std::string::npos || colon + 1 == in.size()) return false;
  return in.find('/') == std::string::npos &&
         in.find_first_not_of("0123456789", colon + 1) == std::string::npos;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ticks.

inline std::string run_synth(const Config& cfg, std::ostream& log) {
  market::SynthConfig sc;
  sc.regime = market::parse_regime(cfg.str("regime", "random_walk"));
  sc.n_ticks = cfg.integer("n", sc.n_ticks);
  sc.seed = cfg.integer("seed", sc.seed);
  sc.period = cfg.integer("period", sc.period);
  sc.amplitude_ticks = cfg.real("amplitude_ticks", sc.amplitude_ticks);
  sc.drift_ticks = cfg.real("drift_ticks", sc.drift_ticks);
  sc.vol_scale = cfg.real("vol_scale", sc.vol_scale);
  sc.tick_size = cfg.real("tick_size", sc.tick_size);
  sc.base_price = cfg.real("base_price", sc.base_price);
  sc.spread_ticks = cfg.real("spread_ticks", sc.spread_ticks);
  sc.tick_interval_ms = static_cast<std::int64_t>(cfg.integer("tick_interval_ms", 100));
  sc.start_ts = static_cast<std::int64_t>(cfg.integer("start_ts", static_cast<std::uint64_t>(sc.start_ts)));
  const auto out = cfg.require("out");
  auto series = market::synth_lob(sc);
  ensure_parent(out);
  market::write_snapshots(out, series, market::guess_format(out));
  log << "synth: wrote " << series.size() << " " << market::regime_name(sc.regime) << " ticks to " << out << '\n';
  auto m = detail::start_manifest("synth", cfg, sc.seed);
  m.outputs = {out};
  m.extra = {{"rows", series.size()}};
  return detail::finish(m, out);
}

inline std::string run_ingest(const Config& cfg, std::ostream& log) {
  const auto in = cfg.require("in");
  const auto out = cfg.require("out");
  auto m = detail::start_manifest("ingest", cfg, 0);
  market::TickSeries series;
  if (detail::looks_like_endpoint(in)) {
    market::CollectOptions opt;
    opt.max_retries = cfg.integer("max_retries", opt.max_retries);
    opt.log = &log;
    auto report = market::collect_stream(market::parse_endpoint(in), [&](const market::LobSnapshot& s) {
      series.snapshots.push_back(s);
    }, opt);
    if (series.empty()) throw DataError("ingest: stream delivered no snapshots");
    m.extra = {{"rows", report.rows},
               {"gaps", report.gaps},
               {"out_of_order", report.out_of_order},
               {"reconnects", report.reconnects},
               {"protocol_violations", report.protocol_violations},
               {"completed", report.completed}};
    log << "ingest: collected " << report.rows << " rows from " << in << " (gaps " << report.gaps << ")\n";
  } else {
    const auto fmt = cfg.has("format") ? market::parse_format(cfg.str("format", "")) : market::guess_format(in);
    series = market::read_snapshots(in, fmt);
    m.add_input(in);
    m.extra = {{"rows", series.size()}};
    log << "ingest: read " << series.size() << " rows from " << in << '\n';
  }
  ensure_parent(out);
  market::write_snapshots(out, series, market::guess_format(out));
  m.outputs = {out};
  return detail::finish(m, out);
}

// ---------------------------------------------------------------------------
// Labels.

// "auto" calibrates on the mids of `calibrate_split`'s training range (or
// the whole series when unset); anything else is a literal threshold.
inline double resolve_delta(const Config& cfg, std::span<const double> mid, std::span<const std::int64_t> ts,
                            std::size_t k, Json* detail_out = nullptr) {
  const auto text = cfg.str("delta", "auto");
  if (text != "auto") {
    const double d = Config::parse_real("delta", text);
    if (!(d >= 0.0)) throw ConfigError("delta must be >= 0");
    return d;
  }
  std::span<const double> use = mid;
  if (cfg.has("calibrate_split")) {
    auto r = data::split(ts, data::parse_split(cfg.str("calibrate_split", ""))).train;
    use = mid.subspan(r.begin, r.size());
  }
  auto cal = labeling::calibrate_threshold(use, k);
  if (detail_out) {
    *detail_out = {{"delta", cal.delta},
                   {"shares", {cal.shares.share[0], cal.shares.share[1], cal.shares.share[2]}},
                   {"within_tolerance", cal.within_tolerance}};
  }
  return cal.delta;
}

inline void warn_unusual_horizon(std::size_t k, std::ostream& log) {
  if (k != 20 && k != 30 && k != 50 && k != 100) {
    log << "warning: horizon " << k << " is outside the usual set {20, 30, 50, 100}\n";
  }
}

inline std::string run_label(const Config& cfg, std::ostream& log) {
  const auto in = cfg.require("ticks");
  const auto out = cfg.require("out");
  const std::size_t k = cfg.integer("k", 20);
  warn_unusual_horizon(k, log);
  auto series = load_ticks(in);
  auto mid = features::mid_prices(series);
  auto ts = series.timestamps();
  Json cal;
  const double delta = resolve_delta(cfg, mid, ts, k, &cal);
  auto labels = labeling::label_series(mid, {k, delta});
  std::ostringstream csv;
  csv << "ts_ms,label,l_t,mask\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    csv << ts[i] << ',' << labeling::code(labels.labels[i]) << ',' << market::format_number(labels.change[i]) << ','
        << (labels.mask[i] ? 1 : 0) << '\n';
  }
  write_text(out, csv.str());
  std::vector<double> changes;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.mask[i]) changes.push_back(labels.change[i]);
  auto shares = labeling::class_shares(changes, delta);
  log << "label: delta " << market::format_number(delta) << " shares fall/stationary/rise " << shares.share[0] << '/'
      << shares.share[1] << '/' << shares.share[2] << '\n';
  auto m = detail::start_manifest("label", cfg, 0);
  m.add_input(in);
  detail::add_parent_if_present(m, in);
  m.outputs = {out};
  m.extra = {{"delta", delta},
             {"labeled", labels.labeled()},
             {"shares", {shares.share[0], shares.share[1], shares.share[2]}}};
  if (!cal.is_null()) m.extra["calibration"] = cal;
  return detail::finish(m, out);
}

inline double label_manifest_delta(const std::string& labels_path) {
  auto m = RunManifest::load(manifest_path(labels_path));
  if (!m.extra.contains("delta")) throw ConfigError("label manifest lacks a delta");
  return m.extra.at("delta").get<double>();
}

// ---------------------------------------------------------------------------
// Dataset.

inline std::string run_dataset(const Config& cfg, std::ostream& log) {
  const auto ticks = cfg.require("ticks");
  const auto out = cfg.require("out");
  data::DatasetSpec spec;
  spec.task = data::parse_task(cfg.str("task", "movement"));
  spec.window = cfg.integer("lx", 96);
  spec.horizon = cfg.integer("k", 20);
  spec.include_mid = cfg.boolean("include_mid", true);
  spec.split = data::parse_split(cfg.str("split", "fraction:0.7,0.1,0.2"));
  spec.seed = cfg.integer("seed", 1);
  warn_unusual_horizon(spec.horizon, log);
  auto series = load_ticks(ticks);
  RunManifest m = detail::start_manifest("dataset", cfg, spec.seed);
  if (spec.task == data::Task::movement) {
    if (cfg.has("labels")) {
      spec.delta = label_manifest_delta(cfg.str("labels", ""));
      detail::add_parent_if_present(m, cfg.str("labels", ""));
    } else {
      Config c = cfg;
      if (!c.has("calibrate_split")) c.set("calibrate_split", data::format_split(spec.split));
      auto mid = features::mid_prices(series);
      spec.delta = resolve_delta(c, mid, series.timestamps(), spec.horizon);
    }
  }
  auto d = data::build_dataset(series, spec);
  DatasetManifest dm{spec, ticks, file_digest(ticks), d.feature_stats, d.target_stats};
  dm.write(out);
  log << "dataset: " << data::task_name(spec.task) << " train/val/test anchors " << d.train.size() << '/'
      << d.val.size() << '/' << d.test.size() << '\n';
  m.add_input(ticks);
  detail::add_parent_if_present(m, ticks);
  m.outputs = {out};
  m.extra = {{"train", d.train.size()}, {"val", d.val.size()}, {"test", d.test.size()}, {"delta", spec.delta}};
  return detail::finish(m, out);
}

// ---------------------------------------------------------------------------
// Training and evaluation.

inline models::ModelConfig model_config_from(const Config& cfg, const data::Dataset& d) {
  models::ModelConfig mc;
  mc.kind = models::parse_model_kind(cfg.str("model", "lstm"));
  mc.input_dim = d.features.cols;
  mc.window = d.spec.window;
  mc.horizon = d.spec.horizon;
  mc.head = d.spec.task == data::Task::movement ? models::HeadKind::movement : models::HeadKind::regression_seq;
  mc.hidden_dim = cfg.integer("hidden", mc.hidden_dim);
  mc.n_layers = cfg.integer("layers", mc.n_layers);
  mc.n_heads = cfg.integer("heads", mc.n_heads);
  mc.d_model = cfg.integer("d_model", mc.d_model);
  mc.encoder_layers = cfg.integer("encoder_layers", mc.encoder_layers);
  mc.decoder_layers = cfg.integer("decoder_layers", mc.decoder_layers);
  mc.d_ff = cfg.integer("d_ff", mc.d_ff);
  mc.decompose_window = cfg.integer("decompose_window", mc.decompose_window);
  mc.context_mean = cfg.boolean("context_mean", mc.context_mean);
  mc.stamp_alpha = cfg.real("stamp_alpha", mc.stamp_alpha);
  mc.seed = cfg.integer("seed", mc.seed);
  return mc;
}

inline train::TrainConfig train_config_from(const Config& cfg, data::Task task) {
  auto tc = train::default_train_config(task);
  tc.epochs = cfg.integer("epochs", tc.epochs);
  tc.batch_size = cfg.integer("batch", tc.batch_size);
  tc.lr = cfg.real("lr", tc.lr);
  tc.patience = cfg.integer("patience", tc.patience);
  tc.seed = cfg.integer("seed", tc.seed);
  tc.clip_norm = cfg.real("clip", tc.clip_norm);
  tc.max_batches_per_epoch = cfg.integer("max_batches", 0);
  return tc;
}

inline std::string run_train(const Config& cfg, std::ostream& log) {
  const auto ds_path = cfg.require("dataset");
  const auto out = cfg.require("out");
  auto dm = DatasetManifest::load(ds_path);
  auto d = load_dataset(dm);
  auto mc = model_config_from(cfg, d);
  auto tc = train_config_from(cfg, d.spec.task);
  tc.log = &log;
  auto model = models::make_forecaster(mc);
  log << "train: " << models::model_kind_name(mc.kind) << " on " << d.train.size() << " windows\n";
  auto hist = train::fit(*model, d, tc);
  auto params = model->parameters();
  ensure_parent(out);
  nn::save_checkpoint(out, params);
  ModelManifest{mc, ds_path, out}.write(model_manifest_path(out));

  auto m = detail::start_manifest("train", cfg, mc.seed);
  m.add_input(ds_path);
  m.add_input(dm.ticks);
  detail::add_parent_if_present(m, ds_path);
  m.outputs = {out, model_manifest_path(out)};
  Json epochs = Json::array();
  for (const auto& e : hist.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  m.extra = {{"best_epoch", hist.best_epoch},
             {"best_val_loss", hist.best_val_loss},
             {"stopped_early", hist.stopped_early},
             {"steps", hist.steps},
             {"epochs", epochs}};
  return detail::finish(m, out);
}

inline Json report_json(const train::EvalReport& r, const std::string& split, const models::ModelConfig& mc) {
  Json j;
  j["task"] = data::task_name(r.task);
  j["model"] = models::model_kind_name(mc.kind);
  j["horizon"] = mc.horizon;
  j["split"] = split;
  j["samples"] = r.samples;
  if (r.task == data::Task::movement) {
    const auto& c = r.classification;
    Json cls;
    cls["accuracy"] = c.accuracy;
    cls["macro_precision"] = c.macro_precision;
    cls["macro_recall"] = c.macro_recall;
    cls["macro_f1"] = c.macro_f1;
    const char* names[] = {"fall", "stationary", "rise"};
    cls["per_class"] = Json::array();
    for (std::size_t i = 0; i < train::kClasses; ++i) {
      cls["per_class"].push_back({{"class", names[i]},
                                  {"precision", c.precision[i]},
                                  {"recall", c.recall[i]},
                                  {"f1", c.f1[i]},
                                  {"support", c.support[i]},
                                  {"undefined", c.undefined[i]}});
    }
    cls["confusion"] = c.confusion;
    j["classification"] = cls;
  } else {
    Json per = Json::array();
    for (const auto& h : r.horizons) {
      Json row = {{"step", h.step}, {"mse", h.mse}, {"mae", h.mae}};
      row["r2"] = h.r2_defined ? Json(h.r2) : Json(nullptr);
      if (h.step == 0) {
        j["regression"]["pooled"] = row;
      } else {
        per.push_back(row);
      }
    }
    j["regression"]["per_step"] = per;
  }
  return j;
}

inline const std::vector<std::size_t>& split_anchors(const data::Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("split must be train|val|test, got '" + split + "'");
}

// Loads a checkpoint with its text manifest into a fresh model.
inline std::unique_ptr<models::Forecaster> load_model(const std::string& ckpt, ModelManifest* mm_out = nullptr) {
  auto mm = ModelManifest::load(model_manifest_path(ckpt));
  auto model = models::make_forecaster(mm.model);
  auto params = model->parameters();
  nn::load_checkpoint(ckpt, params);
  if (mm_out) *mm_out = mm;
  return model;
}

inline std::string run_eval(const Config& cfg, std::ostream& log) {
  const auto ckpt = cfg.require("model");
  const auto out = cfg.require("out");
  ModelManifest mm;
  auto model = load_model(ckpt, &mm);
  const auto ds_path = cfg.str("dataset", mm.dataset);
  auto d = load_dataset(DatasetManifest::load(ds_path));
  if (d.spec.window != mm.model.window || d.spec.horizon != mm.model.horizon ||
      d.features.cols != mm.model.input_dim) {
    throw ConfigError("dataset shape does not match the model's window, horizon or input width");
  }
  const auto split = cfg.str("split", "test");
  const auto& anchors = split_anchors(d, split);
  train::Predictions preds;
  auto rep = train::evaluate(*model, d, anchors, &preds);
  write_json(out, report_json(rep, split, mm.model));

  auto m = detail::start_manifest("eval", cfg, mm.model.seed);
  m.add_input(ckpt);
  m.add_input(ds_path);
  detail::add_parent_if_present(m, ckpt);
  m.outputs = {out};
  if (cfg.has("signals")) {
    if (d.spec.task != data::Task::movement) throw ConfigError("signals are only produced for the movement task");
    const auto sig = cfg.str("signals", "");
    std::ostringstream csv;
    csv << "ts_ms,signal,label,p_fall,p_stationary,p_rise\n";
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      csv << d.ts[anchors[i]] << ',' << preds.classes[i] << ',' << d.label(anchors[i]) << ','
          << market::format_number(preds.probs[i][0]) << ',' << market::format_number(preds.probs[i][1]) << ','
          << market::format_number(preds.probs[i][2]) << '\n';
    }
    write_text(sig, csv.str());
    m.outputs.push_back(sig);
  }
  if (rep.task == data::Task::movement) {
    log << "eval: " << split << " accuracy " << rep.classification.accuracy << " macro-F1 "
        << rep.classification.macro_f1 << " on " << rep.samples << " windows\n";
  } else {
    log << "eval: " << split << " pooled mse " << rep.horizons[0].mse << " on " << rep.samples << " windows\n";
  }
  return detail::finish(m, out);
}

// ---------------------------------------------------------------------------
// Backtests.

struct AlignedSignals {
  std::vector<int> signals;
  std::vector<double> mids;
  std::vector<std::int64_t> ts;
};

// Reads `ts_ms,signal,...` rows and lines them up with the ticks spanning
// the first to last signal timestamp. Ticks without a signal hold (1).
inline AlignedSignals align_signals(const std::string& signals_path, const market::TickSeries& ticks) {
  std::ifstream in(signals_path);
  if (!in) throw DataError("cannot open signals '" + signals_path + "'");
  std::string line;
  std::getline(in, line);
  if (market::detail::trim(line).substr(0, 5) != "ts_ms") throw DataError("signals file lacks its header");
  std::map<std::int64_t, int> by_ts;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (market::detail::trim(line).empty()) continue;
    ++row;
    auto f = market::detail::split_commas(line);
    if (f.size() < 2) throw DataError("signals row " + std::to_string(row) + ": expected ts_ms,signal");
    std::int64_t t = 0;
    int s = 0;
    auto a = std::from_chars(f[0].data(), f[0].data() + f[0].size(), t);
    auto b = std::from_chars(f[1].data(), f[1].data() + f[1].size(), s);
    if (a.ec != std::errc() || b.ec != std::errc() || s < 0 || s > 2) {
      throw DataError("signals row " + std::to_string(row) + ": malformed");
    }
    by_ts[t] = s;
  }
  if (by_ts.empty()) throw DataError("signals file has no rows");
  AlignedSignals out;
  const auto first = by_ts.begin()->first, last = by_ts.rbegin()->first;
  std::size_t matched = 0;
  for (const auto& snap : ticks.snapshots) {
    if (snap.ts < first || snap.ts > last) continue;
    auto it = by_ts.find(snap.ts);
    out.signals.push_back(it == by_ts.end() ? 1 : it->second);
    matched += it != by_ts.end();
    out.mids.push_back(features::mid_price(snap));
    out.ts.push_back(snap.ts);
  }
  if (matched != by_ts.size()) {
    throw DataError(std::to_string(by_ts.size() - matched) + " signal timestamps are missing from the tick file");
  }
  return out;
}

inline backtest::BacktestConfig backtest_config_from(const Config& cfg) {
  backtest::BacktestConfig bc;
  bc.shares = cfg.real("shares", bc.shares);
  bc.delay = cfg.integer("delay", bc.delay);
  bc.cost_rate = cfg.real("cost", bc.cost_rate);
  bc.reverse_on_opposite = cfg.boolean("reverse", bc.reverse_on_opposite);
  return bc;
}

inline std::string equity_path(const std::string& out) {
  auto p = std::filesystem::path(out);
  return (p.parent_path() / (p.stem().string() + ".equity.csv")).string();
}

inline std::string run_backtest_cmd(const Config& cfg, std::ostream& log) {
  const auto sig_path = cfg.require("signals");
  const auto ticks_path = cfg.require("ticks");
  const auto out = cfg.require("out");
  auto bc = backtest_config_from(cfg);
  auto al = align_signals(sig_path, load_ticks(ticks_path));
  auto led = backtest::run_backtest(al.signals, al.mids, al.ts, bc);
  const double total = backtest::cpr(led);

  Json j;
  j["shares"] = bc.shares;
  j["delay"] = bc.delay;
  j["cost_rate"] = bc.cost_rate;
  j["reverse_on_opposite"] = bc.reverse_on_opposite;
  j["ticks"] = al.ts.size();
  j["cpr"] = total;
  try {
    j["sharpe"] = backtest::sharpe_annualized(led.daily_cpr);
  } catch (const DataError& e) {
    j["sharpe"] = nullptr;
    j["sharpe_undefined"] = e.what();
  }
  j["trades"] = Json::array();
  for (const auto& t : led.trades) {
    j["trades"].push_back({{"open_ts", t.open_ts},
                           {"close_ts", t.close_ts},
                           {"side", backtest::side_name(t.side)},
                           {"open_price", t.open_price},
                           {"close_price", t.close_price},
                           {"pnl", t.pnl},
                           {"marked", t.marked}});
  }
  j["daily"] = Json::array();
  for (std::size_t i = 0; i < led.daily_cpr.size(); ++i) {
    j["daily"].push_back({{"day_start_ts", led.day_ts[i]}, {"cpr", led.daily_cpr[i]}});
  }
  write_json(out, j);
  std::ostringstream csv;
  csv << "ts_ms,mid,position,equity\n";
  for (std::size_t i = 0; i < al.ts.size(); ++i) {
    csv << al.ts[i] << ',' << market::format_number(al.mids[i]) << ',' << static_cast<int>(led.position[i]) << ','
        << market::format_number(led.equity[i]) << '\n';
  }
  write_text(equity_path(out), csv.str());
  log << "backtest: " << led.trades.size() << " trades, CPR " << total << '\n';

  auto m = detail::start_manifest("backtest", cfg, 0);
  m.add_input(sig_path);
  m.add_input(ticks_path);
  detail::add_parent_if_present(m, sig_path);
  m.outputs = {out, equity_path(out)};
  return detail::finish(m, out);
}

inline std::string run_sweep(const Config& cfg, std::ostream& log) {
  const auto sig_path = cfg.require("signals");
  const auto ticks_path = cfg.require("ticks");
  const auto out = cfg.require("out");
  auto bc = backtest_config_from(cfg);
  auto grid = backtest::parse_cost_grid(cfg.str("cost_grid", "0:0.0001:11"));
  auto al = align_signals(sig_path, load_ticks(ticks_path));
  auto rows = backtest::cost_sweep(al.signals, al.mids, al.ts, bc, grid);
  Json j = Json::array();
  std::ostringstream csv;
  csv << "cost_rate,cpr,sharpe,trades\n";
  for (const auto& r : rows) {
    j.push_back({{"cost_rate", r.cost_rate},
                 {"cpr", r.cpr},
                 {"sharpe", r.sharpe ? Json(*r.sharpe) : Json(nullptr)},
                 {"trades", r.trades}});
    csv << market::format_number(r.cost_rate) << ',' << market::format_number(r.cpr) << ','
        << (r.sharpe ? market::format_number(*r.sharpe) : std::string("nan")) << ',' << r.trades << '\n';
  }
  write_json(out, {{"delay", bc.delay}, {"shares", bc.shares}, {"rows", j}});
  auto csv_path = std::filesystem::path(out).replace_extension(".csv").string();
  write_text(csv_path, csv.str());
  log << "sweep: " << rows.size() << " cost points, CPR " << rows.front().cpr << " -> " << rows.back().cpr << '\n';
  auto m = detail::start_manifest("sweep", cfg, 0);
  m.add_input(sig_path);
  m.add_input(ticks_path);
  detail::add_parent_if_present(m, sig_path);
  m.outputs = {out, csv_path};
  return detail::finish(m, out);
}

// ---------------------------------------------------------------------------
// Pipeline.

inline const std::set<std::string>& pipeline_keys() {
  static const std::set<std::string> keys = {
      "workdir", "ticks", "format", "regime", "n", "synth_seed", "period", "amplitude_ticks", "drift_ticks",
      "vol_scale", "tick_size", "base_price", "spread_ticks", "tick_interval_ms", "start_ts", "task", "k",
      "delta", "lx", "split", "include_mid", "model", "hidden", "layers", "heads", "d_model", "encoder_layers",
      "decoder_layers", "d_ff", "decompose_window", "context_mean", "stamp_alpha", "epochs", "batch", "lr",
      "patience", "clip", "max_batches", "seed", "eval_split", "delay", "cost", "shares", "reverse", "cost_grid"};
  return keys;
}

struct PipelineResult {
  std::string workdir;
  std::string manifest;
  std::vector<std::string> stage_manifests;
  std::vector<std::string> skipped;
};

namespace detail {

inline Config pick(const Config& all, std::initializer_list<const char*> keys) {
  Config c;
  for (const char* k : keys)
    if (all.has(k)) c.set(k, all.str(k, ""));
  return c;
}

// A stage can be skipped when its manifest records the same config and all
// recorded inputs still hash to the recorded digests.
inline bool up_to_date(const Config& stage_cfg, const std::string& primary_output) {
  const auto mp = manifest_path(primary_output);
  if (!std::filesystem::exists(mp)) return false;
  RunManifest m;
  try {
    m = RunManifest::load(mp);
  } catch (const Error&) {
    return false;
  }
  if (m.config != stage_cfg.values()) return false;
  for (const auto& [path, digest] : m.inputs) {
    if (!std::filesystem::exists(path) || file_digest(path) != digest) return false;
  }
  for (const auto& o : m.outputs)
    if (!std::filesystem::exists(o)) return false;
  return true;
}

}  // namespace detail

// synth or ingest -> label -> dataset -> train -> eval -> backtest -> sweep.
// Backtest and sweep run only for the movement task. With `resume`, stages
// whose manifests are current are skipped.
inline PipelineResult run_pipeline(const Config& cfg, std::ostream& log, bool resume = false) {
  cfg.check_keys(pipeline_keys());
  PipelineResult res;
  res.workdir = cfg.str("workdir", "lobforge_run");
  std::filesystem::create_directories(res.workdir);
  auto at = [&](const std::string& name) { return (std::filesystem::path(res.workdir) / name).string(); };
  const auto task = data::parse_task(cfg.str("task", "movement"));

  auto stage = [&](const std::string& name, Config sc, const std::string& out, auto&& runner) {
    sc.set("out", out);
    if (resume && detail::up_to_date(sc, out)) {
      log << "pipeline: " << name << " is up to date, skipping\n";
      res.skipped.push_back(name);
      res.stage_manifests.push_back(manifest_path(out));
      return;
    }
    try {
      res.stage_manifests.push_back(runner(sc, log));
    } catch (const ConfigError& e) {
      throw ConfigError("stage '" + name + "' failed: " + e.what());
    } catch (const DataError& e) {
      throw DataError("stage '" + name + "' failed: " + e.what());
    } catch (const DivergenceError& e) {
      throw DivergenceError("stage '" + name + "' failed: " + e.what());
    } catch (const InvariantError& e) {
      throw InvariantError("stage '" + name + "' failed: " + e.what());
    }
  };

  std::string ticks;
  if (cfg.has("ticks")) {
    ticks = at("ticks.csv");
    auto c = detail::pick(cfg, {"format"});
    c.set("in", cfg.str("ticks", ""));
    stage("ingest", c, ticks, run_ingest);
  } else {
    ticks = at("ticks.csv");
    auto c = detail::pick(cfg, {"regime", "n", "period", "amplitude_ticks", "drift_ticks", "vol_scale", "tick_size",
                                "base_price", "spread_ticks", "tick_interval_ms", "start_ts"});
    c.set("seed", cfg.str("synth_seed", "7"));
    stage("synth", c, ticks, run_synth);
  }

  const auto split = cfg.str("split", "fraction:0.7,0.1,0.2");
  std::string labels;
  if (task == data::Task::movement) {
    labels = at("labels.csv");
    auto c = detail::pick(cfg, {"k", "delta"});
    c.set("ticks", ticks);
    c.set("calibrate_split", split);
    stage("label", c, labels, run_label);
  }

  const auto dataset = at("dataset.txt");
  {
    auto c = detail::pick(cfg, {"task", "lx", "k", "include_mid", "seed"});
    c.set("split", split);
    c.set("ticks", ticks);
    if (!labels.empty()) c.set("labels", labels);
    stage("dataset", c, dataset, run_dataset);
  }

  const auto ckpt = at("model.ckpt");
  {
    auto c = detail::pick(cfg, {"model", "hidden", "layers", "heads", "d_model", "encoder_layers", "decoder_layers",
                                "d_ff", "decompose_window", "context_mean", "stamp_alpha", "epochs", "batch", "lr",
                                "patience", "clip", "max_batches", "seed"});
    c.set("dataset", dataset);
    stage("train", c, ckpt, run_train);
  }

  const auto report = at("report.json");
  const auto signals = at("signals.csv");
  {
    Config c;
    c.set("model", ckpt);
    c.set("dataset", dataset);
    c.set("split", cfg.str("eval_split", "test"));
    if (task == data::Task::movement) c.set("signals", signals);
    stage("eval", c, report, run_eval);
  }

  if (task == data::Task::movement) {
    auto c = detail::pick(cfg, {"delay", "cost", "shares", "reverse"});
    c.set("signals", signals);
    c.set("ticks", ticks);
    stage("backtest", c, at("ledger.json"), run_backtest_cmd);
    auto s = detail::pick(cfg, {"delay", "shares", "reverse", "cost_grid"});
    s.set("signals", signals);
    s.set("ticks", ticks);
    stage("sweep", s, at("sweep.json"), run_sweep);
  } else {
    log << "pipeline: backtest and sweep need movement signals; skipped for task " << data::task_name(task) << '\n';
  }

  RunManifest pm = detail::start_manifest("pipeline", cfg, cfg.integer("seed", 1));
  pm.parents = res.stage_manifests;
  pm.outputs = {report};
  res.manifest = at("pipeline.manifest.json");
  pm.write(res.manifest);
  log << "pipeline: done, manifest " << res.manifest << '\n';
  return res;
}

// Re-executes the pipeline recorded in `manifest`, optionally into another
// working directory.
inline PipelineResult rerun_pipeline(const std::string& manifest, std::ostream& log,
                                     const std::vector<std::string>& overrides = {}) {
  auto m = RunManifest::load(manifest);
  if (m.command != "pipeline") throw ConfigError("'" + manifest + "' is not a pipeline manifest");
  Config cfg;
  for (const auto& [k, v] : m.config) cfg.set(k, v);
  for (const auto& o : overrides) cfg.apply_override(o);
  return run_pipeline(cfg, log);
}

}  // namespace lobforge::app
