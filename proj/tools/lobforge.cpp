// lobforge: command-line front end for ingestion, labelling, training,
// evaluation and backtesting. Exit codes: 0 ok, 2 config, 3 data,
// 4 training divergence, 5 internal invariant violation.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lobforge/app/commands.hpp"

namespace {

using lobforge::app::Config;

struct Flag {
  const char* key;
  const char* help;
};

// Registers --key options whose values land in a Config under the same key.
class FlagSet {
 public:
  FlagSet(CLI::App* cmd, std::vector<Flag> flags) {
    for (const auto& f : flags) {
      auto& slot = values_[f.key];
      std::string name = std::string("--") + f.key;
      for (auto& ch : name)
        if (ch == '_') ch = '-';
      cmd->add_option(name, slot, f.help);
    }
  }

  Config config() const {
    Config c;
    for (const auto& [k, v] : values_)
      if (!v.empty()) c.set(k, v);
    return c;
  }

 private:
  std::map<std::string, std::string> values_;
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const lobforge::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const lobforge::DataError*>(&e)) return 3;
  if (dynamic_cast<const lobforge::DivergenceError*>(&e)) return 4;
  return 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lobforge: limit order book forecasting and backtesting"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic order book series");
  FlagSet synth_f(synth, {{"regime", "random_walk|trend_plus_noise|sawtooth"},
                          {"n", "number of ticks"},
                          {"seed", "generator seed"},
                          {"period", "cycle length in ticks"},
                          {"amplitude_ticks", "oscillation amplitude in price ticks"},
                          {"drift_ticks", "trend drift per tick"},
                          {"vol_scale", "noise scale in price ticks"},
                          {"tick_size", "price tick"},
                          {"base_price", "starting mid-price"},
                          {"spread_ticks", "quoted spread in ticks"},
                          {"tick_interval_ms", "milliseconds between snapshots"},
                          {"start_ts", "first timestamp (ms since epoch)"},
                          {"out", "output file (.csv or .jsonl)"}});

  auto* ingest = app.add_subcommand("ingest", "read snapshots from a file or a host:port stream");
  FlagSet ingest_f(ingest, {{"in", "input path or host:port"},
                            {"format", "csv|jsonl (file input)"},
                            {"max_retries", "stream reconnect attempts"},
                            {"out", "output file (.csv or .jsonl)"}});

  auto* label = app.add_subcommand("label", "compute movement labels");
  FlagSet label_f(label, {{"ticks", "tick file"},
                          {"k", "horizon"},
                          {"delta", "threshold or 'auto'"},
                          {"calibrate_split", "calibrate 'auto' on this split's training range"},
                          {"out", "labels CSV"}});

  auto* dataset = app.add_subcommand("dataset", "build a dataset manifest");
  FlagSet dataset_f(dataset, {{"ticks", "tick file"},
                              {"task", "mid_price|mid_diff|movement"},
                              {"lx", "window length"},
                              {"k", "horizon"},
                              {"split", "fraction:a,b,c or by_day:a,b,c"},
                              {"seed", "seed"},
                              {"delta", "movement threshold or 'auto'"},
                              {"labels", "labels CSV whose manifest supplies delta"},
                              {"include_mid", "append mid-price feature (true|false)"},
                              {"out", "dataset manifest"}});

  const std::vector<Flag> model_flags = {{"model", "mlp|lstm|dlstm|seq2seq|attention|transformer"},
                                         {"hidden", "hidden width"},
                                         {"layers", "stacked LSTM layers"},
                                         {"heads", "attention heads"},
                                         {"d_model", "transformer width"},
                                         {"encoder_layers", "transformer encoder layers"},
                                         {"decoder_layers", "transformer decoder layers"},
                                         {"d_ff", "transformer feed-forward width"},
                                         {"decompose_window", "dlstm moving-average window (odd)"},
                                         {"context_mean", "seq2seq context from mean encoder state"},
                                         {"stamp_alpha", "transformer value-embedding weight"},
                                         {"epochs", "maximum epochs"},
                                         {"batch", "batch size"},
                                         {"lr", "learning rate"},
                                         {"patience", "early-stopping patience"},
                                         {"clip", "gradient norm clip (0 disables)"},
                                         {"max_batches", "cap on batches per epoch (0 = all)"},
                                         {"seed", "initialization and shuffling seed"},
                                         {"dataset", "dataset manifest"},
                                         {"out", "checkpoint path"}};
  auto* train = app.add_subcommand("train", "train a forecaster");
  FlagSet train_f(train, model_flags);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  FlagSet eval_f(eval, {{"model", "checkpoint path"},
                        {"dataset", "dataset manifest (defaults to the training one)"},
                        {"split", "train|val|test"},
                        {"signals", "write per-window movement signals CSV here"},
                        {"out", "report JSON"}});

  const std::vector<Flag> bt_flags = {{"signals", "signals CSV (ts_ms,signal,...)"},
                                      {"ticks", "tick file"},
                                      {"delay", "execution delay in ticks"},
                                      {"cost", "cost rate per side"},
                                      {"shares", "position size"},
                                      {"reverse", "reverse on opposite signal (true|false)"},
                                      {"out", "ledger JSON"}};
  auto* bt = app.add_subcommand("backtest", "run the signal backtest");
  FlagSet bt_f(bt, bt_flags);

  auto sweep_flags = bt_flags;
  sweep_flags.push_back({"cost_grid", "start:stop:count"});
  auto* sweep = app.add_subcommand("sweep", "backtest over a grid of cost rates");
  FlagSet sweep_f(sweep, sweep_flags);

  auto* pipeline = app.add_subcommand("pipeline", "run all stages from a config file or a pipeline manifest");
  std::string config_path, manifest;
  std::vector<std::string> overrides;
  bool resume = false;
  pipeline->add_option("--config", config_path, "key = value config file");
  pipeline->add_option("--manifest", manifest, "re-run a recorded pipeline manifest");
  pipeline->add_option("--set", overrides, "key=value override (repeatable)");
  pipeline->add_flag("--resume", resume, "skip stages whose manifests are current");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto& log = std::cerr;
    if (synth->parsed()) lobforge::app::run_synth(synth_f.config(), log);
    if (ingest->parsed()) lobforge::app::run_ingest(ingest_f.config(), log);
    if (label->parsed()) lobforge::app::run_label(label_f.config(), log);
    if (dataset->parsed()) lobforge::app::run_dataset(dataset_f.config(), log);
    if (train->parsed()) lobforge::app::run_train(train_f.config(), log);
    if (eval->parsed()) lobforge::app::run_eval(eval_f.config(), log);
    if (bt->parsed()) lobforge::app::run_backtest_cmd(bt_f.config(), log);
    if (sweep->parsed()) lobforge::app::run_sweep(sweep_f.config(), log);
    if (pipeline->parsed()) {
      if (config_path.empty() == manifest.empty()) {
        throw lobforge::ConfigError("pipeline needs exactly one of --config or --manifest");
      }
      if (!manifest.empty()) {
        lobforge::app::rerun_pipeline(manifest, log, overrides);
      } else {
        auto cfg = Config::load(config_path);
        for (const auto& o : overrides) cfg.apply_override(o);
        lobforge::app::run_pipeline(cfg, log, resume);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
