#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/data/dataset.hpp"
#include "lobforge/models/forecasters.hpp"
#include "lobforge/nn/ops.hpp"
#include "lobforge/nn/optim.hpp"
#include "lobforge/train/metrics.hpp"

namespace lobforge::train {

enum class Loss { l2, cross_entropy };

inline Loss parse_loss(std::string_view s) {
  if (s == "l2") return Loss::l2;
  if (s == "cross_entropy") return Loss::cross_entropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

inline const char* loss_name(Loss l) { return l == Loss::l2 ? "l2" : "cross_entropy"; }

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  Loss loss = Loss::cross_entropy;
  double clip_norm = 5.0;
  std::size_t max_batches_per_epoch = 0;  // 0 = full epoch
  std::ostream* log = nullptr;
};

inline TrainConfig default_train_config(data::Task task) {
  TrainConfig c;
  if (task == data::Task::movement) {
    c.batch_size = 64;
    c.loss = Loss::cross_entropy;
  } else {
    c.batch_size = 32;
    c.loss = Loss::l2;
  }
  return c;
}

inline void validate(const TrainConfig& c, data::Task task) {
  if (c.epochs == 0 || c.batch_size == 0 || !(c.lr > 0.0) || c.patience == 0) {
    throw ConfigError("epochs, batch_size, lr and patience must be positive");
  }
  const bool movement = task == data::Task::movement;
  if (movement != (c.loss == Loss::cross_entropy)) {
    throw ConfigError("loss must be cross_entropy for movement and l2 for regression tasks");
  }
}

// Stops once `patience` consecutive epochs fail to improve on the best
// validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records the loss of the next epoch (1-based); returns true to stop.
  bool observe(double val_loss) {
    ++epoch_;
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved_last() const { return best_epoch_ == epoch_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::size_t steps = 0;
};

inline bool uses_teacher(const models::Forecaster& m) {
  const auto k = m.config().kind;
  return k == models::ModelKind::seq2seq || k == models::ModelKind::attention;
}

inline nn::Tensor batch_loss(const models::Forecaster& model, const data::BatchData& b, Loss loss) {
  nn::Tensor out = model.forward(b.batch);
  return loss == Loss::cross_entropy ? nn::cross_entropy(out, b.labels) : nn::mse_loss(out, b.targets);
}

// Mean loss over `anchors` without teacher forcing or graph recording.
inline double evaluate_loss(const models::Forecaster& model, const data::Dataset& d,
                            std::span<const std::size_t> anchors, Loss loss, std::size_t batch_size) {
  nn::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < anchors.size(); i += batch_size) {
    auto chunk = anchors.subspan(i, std::min(batch_size, anchors.size() - i));
    total += batch_loss(model, data::make_batch(d, chunk), loss).item() * static_cast<double>(chunk.size());
  }
  return anchors.empty() ? 0.0 : total / static_cast<double>(anchors.size());
}

inline std::vector<std::vector<double>> snapshot(const nn::ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

inline void restore(nn::ParamList& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.values() = saved[i];
}

// Adam with global-norm clipping, seeded per-epoch shuffling, validation
// after every epoch and restoration of the best-validation weights. With an
// empty validation split the training loss drives early stopping.
inline TrainHistory fit(models::Forecaster& model, const data::Dataset& d, const TrainConfig& cfg) {
  validate(cfg, d.spec.task);
  if (d.train.empty()) throw DataError("train: empty training split");
  auto params = model.parameters();
  nn::Adam opt(params, {.lr = cfg.lr});
  EarlyStopping stopper(cfg.patience);
  TrainHistory hist;
  auto best = snapshot(params);
  const bool teacher = uses_teacher(model);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = data::epoch_order(d.train, cfg.seed, epoch);
    double running = 0.0;
    std::size_t seen = 0, batches = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      if (cfg.max_batches_per_epoch && batches == cfg.max_batches_per_epoch) break;
      auto chunk = std::span<const std::size_t>(order).subspan(i, std::min(cfg.batch_size, order.size() - i));
      auto batch = data::make_batch(d, chunk, teacher);
      double value = 0.0;
      try {
        opt.zero_grad();
        auto loss = batch_loss(model, batch, cfg.loss);
        value = loss.item();
        loss.backward();
      } catch (const InvariantError& e) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(value)) throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch));
      if (cfg.clip_norm > 0.0) nn::clip_grad_norm(params, cfg.clip_norm);
      opt.step();
      running += value * static_cast<double>(chunk.size());
      seen += chunk.size();
      ++batches;
      ++hist.steps;
    }
    EpochRecord rec{epoch, running / static_cast<double>(seen), 0.0};
    rec.val_loss = d.val.empty() ? rec.train_loss : evaluate_loss(model, d, d.val, cfg.loss, cfg.batch_size);
    if (!std::isfinite(rec.val_loss)) throw DivergenceError("non-finite validation loss");
    hist.epochs.push_back(rec);
    const bool stop = stopper.observe(rec.val_loss);
    if (stopper.improved_last()) best = snapshot(params);
    if (cfg.log) {
      *cfg.log << "epoch " << epoch << " train_loss " << rec.train_loss << " val_loss " << rec.val_loss
               << (stopper.improved_last() ? " *" : "") << '\n';
    }
    if (stop) {
      hist.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  restore(params, best);
  hist.best_epoch = stopper.best_epoch();
  hist.best_val_loss = stopper.best_loss();
  return hist;
}

struct Predictions {
  std::vector<std::size_t> anchors;
  std::vector<int> classes;                 // movement
  std::vector<std::array<double, 3>> probs;  // movement
  std::vector<std::vector<double>> values;  // regression, de-normalized, k per anchor
};

inline Predictions predict(const models::Forecaster& model, const data::Dataset& d,
                           std::span<const std::size_t> anchors, std::size_t batch_size = 256) {
  nn::NoGradGuard guard;
  Predictions out;
  out.anchors.assign(anchors.begin(), anchors.end());
  for (std::size_t i = 0; i < anchors.size(); i += batch_size) {
    auto chunk = anchors.subspan(i, std::min(batch_size, anchors.size() - i));
    auto b = data::make_batch(d, chunk);
    nn::Tensor y = model.forward(b.batch);
    const std::size_t w = y.dim(1);
    if (d.spec.task == data::Task::movement) {
      nn::Tensor p = nn::softmax(y);
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        std::span<const double> row(p.values().data() + r * w, w);
        out.classes.push_back(models::argmax_class(row));
        out.probs.push_back({row[0], row[1], row[2]});
      }
    } else {
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        std::vector<double> v(w);
        for (std::size_t j = 0; j < w; ++j) v[j] = data::denormalize_value(y.values()[r * w + j], d.target_stats);
        out.values.push_back(std::move(v));
      }
    }
  }
  return out;
}

struct HorizonMetrics {
  std::size_t step = 0;  // 1-based horizon step, 0 = all steps pooled
  double mse = 0.0, mae = 0.0, r2 = 0.0;
  bool r2_defined = true;
};

struct EvalReport {
  data::Task task = data::Task::movement;
  std::size_t samples = 0;
  std::vector<HorizonMetrics> horizons;  // regression
  ClassificationReport classification;   // movement
};

inline EvalReport evaluate(const models::Forecaster& model, const data::Dataset& d,
                           std::span<const std::size_t> anchors, Predictions* preds_out = nullptr) {
  if (anchors.empty()) throw DataError("evaluate: no samples");
  EvalReport rep;
  rep.task = d.spec.task;
  rep.samples = anchors.size();
  auto preds = predict(model, d, anchors);
  if (d.spec.task == data::Task::movement) {
    std::vector<int> labels;
    for (std::size_t t : anchors) labels.push_back(d.label(t));
    rep.classification = classification_report(preds.classes, labels);
  } else {
    const std::size_t k = d.spec.horizon;
    std::vector<std::vector<double>> p(k + 1), y(k + 1);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      auto truth = d.raw_target(anchors[i]);
      for (std::size_t j = 0; j < k; ++j) {
        p[j + 1].push_back(preds.values[i][j]);
        y[j + 1].push_back(truth[j]);
        p[0].push_back(preds.values[i][j]);
        y[0].push_back(truth[j]);
      }
    }
    for (std::size_t j = 0; j <= k; ++j) {
      HorizonMetrics h;
      h.step = j;
      h.mse = mse(p[j], y[j]);
      h.mae = mae(p[j], y[j]);
      try {
        h.r2 = r2_oos(p[j], y[j]);
      } catch (const DataError&) {
        h.r2_defined = false;
      }
      rep.horizons.push_back(h);
    }
  }
  if (preds_out) *preds_out = std::move(preds);
  return rep;
}

}  // namespace lobforge::train
