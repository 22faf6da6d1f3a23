#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/nn/ops.hpp"
#include "lobforge/nn/tensor.hpp"

namespace lobforge::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

using Rng = std::mt19937_64;

// Uniform in +-1/sqrt(fan_in).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight_(init_uniform({in, out}, in, rng)), bias_(Tensor::zeros({out}, true)) {}

  // x: [..., in] -> [..., out]
  Tensor operator()(const Tensor& x) const { return add(matmul_any(x), bias_); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }

 private:
  Tensor matmul_any(const Tensor& x) const {
    if (x.rank() >= 2) return matmul(x, weight_);
    return reshape(matmul(reshape(x, {1, x.size()}), weight_), {weight_.dim(1)});
  }

  Tensor weight_;
  Tensor bias_;
};

struct LstmState {
  Tensor h;  // [B, H]
  Tensor c;  // [B, H]
};

inline LstmState zero_state(std::size_t batch, std::size_t hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
}

// One LSTM step with separate gate weights acting on [h_{t-1}, x_t]:
//   f = sigma(W_f z + b_f), i = sigma(W_i z + b_i), c~ = tanh(W_c z + b_c),
//   c = f*c_{t-1} + i*c~,   o = sigma(W_o z + b_o),  h = o*tanh(c).
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, Rng& rng) : input_(input), hidden_(hidden) {
    const std::size_t fan_in = input + hidden;
    for (auto* w : {&w_f_, &w_i_, &w_c_, &w_o_}) *w = init_uniform({fan_in, hidden}, fan_in, rng);
    b_f_ = Tensor::full({hidden}, 1.0, true);
    b_i_ = Tensor::zeros({hidden}, true);
    b_c_ = Tensor::zeros({hidden}, true);
    b_o_ = Tensor::zeros({hidden}, true);
  }

  LstmState operator()(const Tensor& x, const LstmState& state) const {
    if (x.rank() != 2 || x.dim(1) != input_ || state.h.rank() != 2 || state.h.dim(1) != hidden_ ||
        state.h.dim(0) != x.dim(0) || state.c.shape() != state.h.shape()) {
      throw InvariantError("lstm_cell: expected x [B," + std::to_string(input_) + "] and state [B," +
                           std::to_string(hidden_) + "], got " + to_string(x.shape()) + " and " +
                           to_string(state.h.shape()));
    }
    const Tensor z = concat({state.h, x}, 1);
    const Tensor forget = sigmoid(add(matmul(z, w_f_), b_f_));
    const Tensor input = sigmoid(add(matmul(z, w_i_), b_i_));
    const Tensor candidate = tanh(add(matmul(z, w_c_), b_c_));
    const Tensor cell = add(mul(forget, state.c), mul(input, candidate));
    const Tensor output = sigmoid(add(matmul(z, w_o_), b_o_));
    return {mul(output, tanh(cell)), cell};
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".W_f", w_f_});
    out.push_back({prefix + ".b_f", b_f_});
    out.push_back({prefix + ".W_i", w_i_});
    out.push_back({prefix + ".b_i", b_i_});
    out.push_back({prefix + ".W_c", w_c_});
    out.push_back({prefix + ".b_c", b_c_});
    out.push_back({prefix + ".W_o", w_o_});
    out.push_back({prefix + ".b_o", b_o_});
  }

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  Tensor w_f_, w_i_, w_c_, w_o_;
  Tensor b_f_, b_i_, b_c_, b_o_;
};

struct LstmRun {
  std::vector<Tensor> outputs;  // top-layer h per step, each [B, H]
  std::vector<LstmState> final_states;  // per layer
};

// Stacked LSTM over a [B, L, d] sequence.
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::size_t input, std::size_t hidden, std::size_t layers, Rng& rng) {
    if (layers < 1) throw ConfigError("lstm needs at least one layer");
    for (std::size_t l = 0; l < layers; ++l) cells_.emplace_back(l == 0 ? input : hidden, hidden, rng);
  }

  LstmRun operator()(const Tensor& x, const std::vector<LstmState>& initial = {}) const {
    if (x.rank() != 3 || x.dim(2) != cells_.front().input_size()) {
      throw InvariantError("lstm: expected input [B, L, " + std::to_string(cells_.front().input_size()) + "], got " +
                           to_string(x.shape()));
    }
    const std::size_t batch = x.dim(0), len = x.dim(1), hidden = hidden_size();
    std::vector<LstmState> states = initial;
    if (states.empty()) states.assign(cells_.size(), zero_state(batch, hidden));
    LstmRun run;
    run.outputs.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      Tensor in = select(x, 1, t);
      for (std::size_t l = 0; l < cells_.size(); ++l) {
        states[l] = cells_[l](in, states[l]);
        in = states[l].h;
      }
      run.outputs.push_back(in);
    }
    run.final_states = std::move(states);
    return run;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t l = 0; l < cells_.size(); ++l) cells_[l].collect(prefix + ".l" + std::to_string(l), out);
  }

  std::size_t hidden_size() const { return cells_.front().hidden_size(); }
  std::size_t layers() const { return cells_.size(); }
  const LstmCell& cell(std::size_t l) const { return cells_.at(l); }

 private:
  std::vector<LstmCell> cells_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain_(Tensor::full({d}, 1.0, true)), bias_(Tensor::zeros({d}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain_, bias_); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gain", gain_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  Tensor gain_, bias_;
};

struct Decomposition {
  Tensor trend;
  Tensor remainder;
};

// Moving-average trend along the time axis (axis 0 for [L, d], axis 1 for
// [B, L, d]) and the remainder x - trend.
inline Decomposition series_decompose(const Tensor& x, std::size_t window) {
  if (x.rank() != 2 && x.rank() != 3) throw InvariantError("series_decompose expects [L, d] or [B, L, d]");
  const std::size_t axis = x.rank() == 3 ? 1 : 0;
  Tensor trend = moving_average(x, window, axis);
  return {trend, sub(x, trend)};
}

struct Attention {
  Tensor output;   // [B, Lq, dv]
  Tensor weights;  // [B, Lq, Lk], rows sum to 1 over kept keys
};

// softmax(Q K^T / sqrt(d_k)) V with an optional [Lq, Lk] keep-mask.
inline Attention scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask = {}) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1) ||
      q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0)) {
    throw InvariantError("attention: incompatible Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                         ", V " + to_string(v.shape()));
  }
  if (q.dim(2) == 0) throw InvariantError("attention: d_k must be positive");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt), mask);
  return {matmul(weights, v), weights};
}

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t heads, Rng& rng) : heads_(heads) {
    if (heads == 0 || d_model % heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                        " heads");
    }
    q_ = Linear(d_model, d_model, rng);
    k_ = Linear(d_model, d_model, rng);
    v_ = Linear(d_model, d_model, rng);
    o_ = Linear(d_model, d_model, rng);
  }

  // Self-attention when q_src and kv_src are the same tensor.
  Tensor operator()(const Tensor& q_src, const Tensor& kv_src, const Mask& mask = {},
                    std::vector<Tensor>* weights = nullptr) const {
    const Tensor q = q_(q_src), k = k_(kv_src), v = v_(kv_src);
    const std::size_t dh = q.dim(2) / heads_;
    std::vector<Tensor> outs;
    outs.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      auto att = scaled_dot_attention(slice(q, 2, h * dh, dh), slice(k, 2, h * dh, dh), slice(v, 2, h * dh, dh), mask);
      if (weights) weights->push_back(att.weights);
      outs.push_back(att.output);
    }
    return o_(heads_ == 1 ? outs.front() : concat(outs, 2));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    q_.collect(prefix + ".q", out);
    k_.collect(prefix + ".k", out);
    v_.collect(prefix + ".v", out);
    o_.collect(prefix + ".o", out);
  }

  std::size_t heads() const { return heads_; }
  const Linear& query() const { return q_; }
  const Linear& key() const { return k_; }
  const Linear& value() const { return v_; }
  const Linear& out() const { return o_; }

 private:
  std::size_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t d_ff, Rng& rng) : in_(d_model, d_ff, rng), out_(d_ff, d_model, rng) {}

  Tensor operator()(const Tensor& x) const { return out_(relu(in_(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    in_.collect(prefix + ".in", out);
    out_.collect(prefix + ".out", out);
  }

 private:
  Linear in_, out_;
};

// Calendar fields used for the learned stamp embeddings.
struct CalendarIndex {
  std::size_t hour = 0, minute = 0, second = 0;
};

inline CalendarIndex calendar_of(std::int64_t ts_ms) {
  std::int64_t secs = ts_ms / 1000;
  if (ts_ms < 0 && ts_ms % 1000 != 0) --secs;
  std::int64_t day_secs = secs % 86400;
  if (day_secs < 0) day_secs += 86400;
  return {static_cast<std::size_t>(day_secs / 3600), static_cast<std::size_t>((day_secs / 60) % 60),
          static_cast<std::size_t>(day_secs % 60)};
}

// Fixed sinusoid table: PE[pos, 2i] = sin(pos / base^(2i/d)),
// PE[pos, 2i+1] = cos(pos / base^(2i/d)), with base = 2 * window_len.
inline std::vector<double> sinusoid_table(std::size_t positions, std::size_t d_model, std::size_t window_len) {
  std::vector<double> pe(positions * d_model);
  const double base = 2.0 * static_cast<double>(window_len);
  for (std::size_t pos = 0; pos < positions; ++pos)
    for (std::size_t i = 0; 2 * i < d_model; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(base, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d_model) pe[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

// alpha * u + PE + sum of calendar embeddings, where u is a per-position
// linear projection of the raw features to d_model.
class TimestampEncoding {
 public:
  TimestampEncoding() = default;
  TimestampEncoding(std::size_t d_x, std::size_t d_model, std::size_t window_len, Rng& rng, double alpha = 1.0)
      : d_model_(d_model), window_len_(window_len), alpha_(alpha), value_(d_x, d_model, rng) {
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("timestamp encoding needs an even d_model");
    hour_ = init_uniform({24, d_model}, d_model, rng);
    minute_ = init_uniform({60, d_model}, d_model, rng);
    second_ = init_uniform({60, d_model}, d_model, rng);
  }

  // x: [B, L, d_x]; ts: B*L stamps or empty to skip the calendar term;
  // positions start at pos_offset.
  Tensor operator()(const Tensor& x, const std::vector<std::int64_t>& ts, std::size_t pos_offset = 0) const {
    if (x.rank() != 3) throw InvariantError("timestamp encoding expects [B, L, d_x]");
    const std::size_t b = x.dim(0), len = x.dim(1);
    Tensor out = scale(value_(x), alpha_);
    auto pe = sinusoid_table(pos_offset + len, d_model_, window_len_);
    pe.erase(pe.begin(), pe.begin() + static_cast<std::ptrdiff_t>(pos_offset * d_model_));
    out = add(out, Tensor::from({len, d_model_}, std::move(pe)));
    if (!ts.empty()) {
      if (ts.size() != b * len) throw InvariantError("timestamp encoding: expected one stamp per position");
      std::vector<std::size_t> h(ts.size()), m(ts.size()), s(ts.size());
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const auto c = calendar_of(ts[i]);
        h[i] = c.hour;
        m[i] = c.minute;
        s[i] = c.second;
      }
      out = add(out, embedding(hour_, h, {b, len}));
      out = add(out, embedding(minute_, m, {b, len}));
      out = add(out, embedding(second_, s, {b, len}));
    }
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    value_.collect(prefix + ".value", out);
    out.push_back({prefix + ".hour", hour_});
    out.push_back({prefix + ".minute", minute_});
    out.push_back({prefix + ".second", second_});
  }

  double alpha() const { return alpha_; }
  void set_alpha(double a) { alpha_ = a; }
  Tensor& hour_table() { return hour_; }
  Tensor& minute_table() { return minute_; }
  Tensor& second_table() { return second_; }

 private:
  std::size_t d_model_ = 0;
  std::size_t window_len_ = 1;
  double alpha_ = 1.0;
  Linear value_;
  Tensor hour_, minute_, second_;
};

}  // namespace lobforge::nn
