#pragma once

// Finite-difference cases for every op, layer and model, shared by the unit
// tests and the acceptance runner. Each case builds fresh inputs from a seed.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lobforge/models/forecasters.hpp"
#include "lobforge/nn/layers.hpp"
#include "test_util.hpp"

namespace gradcases {

using namespace lobforge;
using namespace lobforge::nn;
using testutil::grad_check;
using testutil::GradCheckResult;
using testutil::random_tensor;

inline constexpr double kTol = 1e-4;
inline constexpr std::uint64_t kSeeds = 20;

struct Case {
  std::string name;
  std::function<GradCheckResult(std::uint64_t)> run;
};

// Values away from the relu kink so central differences stay smooth.
inline Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(s), rng);
  for (auto& v : t.values()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

inline std::vector<Case> op_cases() {
  return {
      {"add",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
         return grad_check([&] { return add(a, b); }, {a, b}, s);
       }},
      {"sub",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng);
         return grad_check([&] { return sub(a, b); }, {a, b}, s);
       }},
      {"mul_broadcast",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
         return grad_check([&] { return mul(a, b); }, {a, b}, s);
       }},
      {"scale",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({5}, rng);
         return grad_check([&] { return scale(a, -1.7); }, {a}, s);
       }},
      {"sigmoid",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({6}, rng, -4, 4);
         return grad_check([&] { return sigmoid(a); }, {a}, s);
       }},
      {"tanh",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({6}, rng, -3, 3);
         return grad_check([&] { return nn::tanh(a); }, {a}, s);
       }},
      {"relu",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = away_from_zero({7}, rng);
         return grad_check([&] { return relu(a); }, {a}, s);
       }},
      {"matmul_shared",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng);
         return grad_check([&] { return matmul(a, b); }, {a, b}, s);
       }},
      {"matmul_batched",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 2}, rng);
         return grad_check([&] { return matmul(a, b); }, {a, b}, s);
       }},
      {"transpose",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 3, 4}, rng);
         return grad_check([&] { return transpose(a); }, {a}, s);
       }},
      {"reshape",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 6}, rng);
         return grad_check([&] { return nn::tanh(reshape(a, {3, 4})); }, {a}, s);
       }},
      {"concat",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 2, 3}, rng), b = random_tensor({2, 1, 3}, rng);
         return grad_check([&] { return concat({a, b, a}, 1); }, {a, b}, s);
       }},
      {"slice",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({3, 5, 2}, rng);
         return grad_check([&] { return slice(a, 1, 1, 3); }, {a}, s);
       }},
      {"select",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({3, 4}, rng);
         return grad_check([&] { return add(select(a, 1, 2), select(a, 1, 0)); }, {a}, s);
       }},
      {"sum",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({4, 2}, rng);
         return grad_check([&] { return sum(mul(a, a)); }, {a}, s);
       }},
      {"mean",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({4, 2}, rng);
         return grad_check([&] { return mean(mul(a, a)); }, {a}, s);
       }},
      {"mean_axis",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 3, 4}, rng);
         return grad_check([&] { return mean_axis(a, 1); }, {a}, s);
       }},
      {"softmax",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 5}, rng, -2, 2);
         return grad_check([&] { return softmax(a); }, {a}, s);
       }},
      {"softmax_masked",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 4, 4}, rng, -2, 2);
         return grad_check([&] { return softmax(a, causal_mask(4)); }, {a}, s);
       }},
      {"layer_norm",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto x = random_tensor({3, 6}, rng, -2, 2), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
         return grad_check([&] { return layer_norm(x, g, b); }, {x, g, b}, s);
       }},
      {"moving_average",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto a = random_tensor({2, 7, 3}, rng);
         return grad_check([&] { return moving_average(a, 5, 1); }, {a}, s);
       }},
      {"embedding",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto t = random_tensor({6, 3}, rng);
         return grad_check([&] { return embedding(t, {0, 5, 2, 2}, {2, 2}); }, {t}, s);
       }},
      {"mse_loss",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto p = random_tensor({4, 2}, rng), y = random_tensor({4, 2}, rng);
         return grad_check([&] { return mse_loss(p, y); }, {p, y}, s);
       }},
      {"cross_entropy",
       [](std::uint64_t s) {
         std::mt19937_64 rng(s);
         auto z = random_tensor({5, 3}, rng, -3, 3);
         std::vector<int> lab{0, 2, 1, 1, 2};
         return grad_check([&] { return cross_entropy(z, lab); }, {z}, s);
       }},
  };
}


inline std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamList& ps) {
  for (const auto& p : ps) inputs.push_back(p.tensor);
  return inputs;
}

inline std::vector<Case> layer_cases() {
  return {
      {"linear",
       [](std::uint64_t s) {
         Rng rng(s);
         Linear lin(4, 3, rng);
         auto x = random_tensor({2, 5, 4}, rng);
         ParamList ps;
         lin.collect("l", ps);
         return grad_check([&] { return lin(x); }, with_params({x}, ps), s);
       }},
      {"lstm_cell",
       [](std::uint64_t s) {
         Rng rng(s);
         LstmCell cell(3, 4, rng);
         auto x = random_tensor({2, 3}, rng), h = random_tensor({2, 4}, rng), c = random_tensor({2, 4}, rng);
         ParamList ps;
         cell.collect("c", ps);
         return grad_check(
             [&] {
               auto st = cell(x, {h, c});
               return concat({st.h, st.c}, 1);
             },
             with_params({x, h, c}, ps), s);
       }},
      {"lstm_stacked",
       [](std::uint64_t s) {
         Rng rng(s);
         Lstm lstm(3, 4, 2, rng);
         auto x = random_tensor({2, 5, 3}, rng);
         ParamList ps;
         lstm.collect("l", ps);
         return grad_check([&] { return lstm(x).outputs.back(); }, with_params({x}, ps), s);
       }},
      {"layer_norm_module",
       [](std::uint64_t s) {
         Rng rng(s);
         LayerNorm ln(5);
         auto x = random_tensor({3, 5}, rng, -2, 2);
         ParamList ps;
         ln.collect("n", ps);
         return grad_check([&] { return ln(x); }, with_params({x}, ps), s);
       }},
      {"series_decompose",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor({2, 9, 3}, rng);
         return grad_check(
             [&] {
               auto d = series_decompose(x, 5);
               return concat({d.trend, scale(d.remainder, 2.0)}, 2);
             },
             {x}, s);
       }},
      {"attention",
       [](std::uint64_t s) {
         Rng rng(s);
         auto q = random_tensor({2, 3, 4}, rng), k = random_tensor({2, 5, 4}, rng), v = random_tensor({2, 5, 3}, rng);
         return grad_check([&] { return scaled_dot_attention(q, k, v).output; }, {q, k, v}, s);
       }},
      {"multi_head_attention",
       [](std::uint64_t s) {
         Rng rng(s);
         MultiHeadAttention mha(4, 2, rng);
         auto q = random_tensor({2, 3, 4}, rng), kv = random_tensor({2, 5, 4}, rng);
         ParamList ps;
         mha.collect("a", ps);
         return grad_check([&] { return mha(q, kv); }, with_params({q, kv}, ps), s);
       }},
      {"feed_forward",
       [](std::uint64_t s) {
         Rng rng(s);
         FeedForward ff(4, 6, rng);
         auto x = random_tensor({2, 3, 4}, rng);
         ParamList ps;
         ff.collect("f", ps);
         return grad_check([&] { return ff(x); }, with_params({x}, ps), s);
       }},
      {"timestamp_encoding",
       [](std::uint64_t s) {
         Rng rng(s);
         TimestampEncoding enc(3, 4, 6, rng, 0.7);
         auto x = random_tensor({2, 6, 3}, rng);
         std::vector<std::int64_t> ts(12);
         for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = 1'656'806'400'000 + static_cast<std::int64_t>(i) * 61'001;
         ParamList ps;
         enc.collect("e", ps);
         return grad_check([&] { return enc(x, ts); }, with_params({x}, ps), s, 1e-5, 40);
       }},
  };
}

// ---------------------------------------------------------------------------
// Models

inline models::ModelConfig small_model(models::ModelKind kind, models::HeadKind head, std::uint64_t seed = 1) {
  models::ModelConfig c;
  c.kind = kind;
  c.head = head;
  c.input_dim = 3;
  c.hidden_dim = 4;
  c.n_layers = 1;
  c.window = 6;
  c.horizon = 3;
  c.d_model = 4;
  c.n_heads = 2;
  c.d_ff = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.decompose_window = 3;
  c.seed = seed;
  return c;
}

inline std::vector<std::int64_t> stamps(std::size_t n, std::int64_t start = 1'656'806'400'000) {
  std::vector<std::int64_t> ts(n);
  for (std::size_t i = 0; i < n; ++i) ts[i] = start + static_cast<std::int64_t>(i) * 1500;
  return ts;
}

inline models::Batch random_batch(const models::ModelConfig& c, std::size_t b, std::mt19937_64& rng,
                                  bool requires_grad = false) {
  models::Batch batch;
  batch.inputs = random_tensor({b, c.window, c.input_dim}, rng, -1, 1, requires_grad);
  if (c.kind == models::ModelKind::transformer) batch.ts = stamps(b * c.window);
  return batch;
}

struct Variant {
  models::ModelKind kind;
  models::HeadKind head;
};

inline std::vector<Variant> all_variants() {
  using models::HeadKind;
  using models::ModelKind;
  std::vector<Variant> v;
  for (auto k : {ModelKind::mlp, ModelKind::lstm, ModelKind::dlstm, ModelKind::transformer}) {
    v.push_back({k, HeadKind::movement});
    v.push_back({k, HeadKind::regression_seq});
  }
  v.push_back({ModelKind::seq2seq, HeadKind::regression_seq});
  v.push_back({ModelKind::attention, HeadKind::regression_seq});
  return v;
}

inline std::string variant_name(const Variant& v) {
  return std::string(models::model_kind_name(v.kind)) + "_" + models::head_kind_name(v.head);
}

// Whole-model check against inputs and up to 12 coordinates per parameter.
inline GradCheckResult model_grad_check(const Variant& v, std::uint64_t seed) {
  auto cfg = small_model(v.kind, v.head, seed);
  auto m = models::make_forecaster(cfg);
  // a stream distinct from the model's init, else inputs copy the weights
  std::mt19937_64 rng(seed + 1000);
  auto batch = random_batch(cfg, 2, rng, true);
  std::vector<Tensor> inputs{batch.inputs};
  // zero-initialized biases behind a dead relu layer sit exactly on the
  // kink; jitter every parameter so the check runs at a generic point
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& p : m->parameters()) {
    for (auto& x : p.tensor.values()) x += jitter(rng);
    inputs.push_back(p.tensor);
  }
  return grad_check([&] { return m->forward(batch); }, inputs, seed, 1e-5, 12);
}

inline std::vector<Case> model_cases() {
  std::vector<Case> out;
  for (const auto& v : all_variants()) out.push_back({variant_name(v), [v](std::uint64_t s) { return model_grad_check(v, s); }});
  return out;
}

}  // namespace gradcases
