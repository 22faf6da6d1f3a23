#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"

namespace lobforge::train {

namespace detail {
inline void check_pair(std::span<const double> pred, std::span<const double> truth, const char* what) {
  if (pred.size() != truth.size()) throw InvariantError(std::string(what) + ": length mismatch");
  if (pred.empty()) throw DataError(std::string(what) + ": empty input");
}
}  // namespace detail

inline double mse(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

inline double mae(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

// 1 - SSE / SST with the squared total sum around the mean of the truth.
inline double r2_oos(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth, "r2_oos");
  double mean = 0.0;
  for (double y : truth) mean += y;
  mean /= static_cast<double>(truth.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    sse += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    sst += (truth[i] - mean) * (truth[i] - mean);
  }
  if (!(sst > 0.0)) throw DataError("r2_oos: truth has zero variance");
  return 1.0 - sse / sst;
}

inline constexpr std::size_t kClasses = 3;

struct ClassificationReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::array<double, kClasses> precision{}, recall{}, f1{};
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  std::array<std::array<std::size_t, kClasses>, kClasses> confusion{};  // [truth][pred]
  std::array<std::size_t, kClasses> support{};
  // Set for classes whose precision or recall had a zero denominator (reported as 0).
  std::array<bool, kClasses> undefined{};
};

inline ClassificationReport report_from_confusion(const std::array<std::array<std::size_t, kClasses>, kClasses>& cm) {
  ClassificationReport r;
  r.confusion = cm;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < kClasses; ++i)
    for (std::size_t j = 0; j < kClasses; ++j) {
      r.n += cm[i][j];
      r.support[i] += cm[i][j];
      if (i == j) correct += cm[i][j];
    }
  if (r.n == 0) throw DataError("classification_report: empty input");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  for (std::size_t c = 0; c < kClasses; ++c) {
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < kClasses; ++i) predicted += cm[i][c];
    const double tp = static_cast<double>(cm[c][c]);
    if (predicted > 0) {
      r.precision[c] = tp / static_cast<double>(predicted);
    } else {
      r.undefined[c] = true;
    }
    if (r.support[c] > 0) {
      r.recall[c] = tp / static_cast<double>(r.support[c]);
    } else {
      r.undefined[c] = true;
    }
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
    r.macro_precision += r.precision[c] / kClasses;
    r.macro_recall += r.recall[c] / kClasses;
    r.macro_f1 += r.f1[c] / kClasses;
  }
  return r;
}

inline ClassificationReport classification_report(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw InvariantError("classification_report: length mismatch");
  if (preds.empty()) throw DataError("classification_report: empty input");
  std::array<std::array<std::size_t, kClasses>, kClasses> cm{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2 || preds[i] < 0 || preds[i] > 2) {
      throw DataError("classification_report: class out of {0,1,2}");
    }
    ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return report_from_confusion(cm);
}

}  // namespace lobforge::train
