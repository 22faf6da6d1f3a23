#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/nn/layers.hpp"
#include "lobforge/nn/ops.hpp"

namespace lobforge::models {

using nn::Tensor;

enum class ModelKind { mlp, lstm, dlstm, seq2seq, attention, transformer };
enum class HeadKind { regression_seq, movement };

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "dlstm") return ModelKind::dlstm;
  if (s == "seq2seq") return ModelKind::seq2seq;
  if (s == "attention") return ModelKind::attention;
  if (s == "transformer") return ModelKind::transformer;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::lstm: return "lstm";
    case ModelKind::dlstm: return "dlstm";
    case ModelKind::seq2seq: return "seq2seq";
    case ModelKind::attention: return "attention";
    case ModelKind::transformer: return "transformer";
  }
  return "?";
}

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "regression_seq") return HeadKind::regression_seq;
  if (s == "movement") return HeadKind::movement;
  throw ConfigError("unknown head '" + std::string(s) + "'");
}

inline const char* head_kind_name(HeadKind h) {
  return h == HeadKind::movement ? "movement" : "regression_seq";
}

struct ModelConfig {
  ModelKind kind = ModelKind::lstm;
  std::size_t input_dim = 41;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 1;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t d_ff = 256;
  std::size_t window = 96;  // L_x
  std::size_t horizon = 20;  // k
  HeadKind head = HeadKind::movement;
  std::size_t decompose_window = 25;
  bool context_mean = false;  // seq2seq: mean of encoder states instead of the last one
  double stamp_alpha = 1.0;
  std::uint64_t seed = 1;

  std::size_t output_dim() const { return head == HeadKind::movement ? 3 : horizon; }
};

inline void validate(const ModelConfig& c) {
  if (c.input_dim == 0 || c.hidden_dim == 0 || c.window == 0 || c.horizon == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (c.kind == ModelKind::dlstm && (c.decompose_window == 0 || c.decompose_window % 2 == 0)) {
    throw ConfigError("dlstm decompose_window must be odd");
  }
  if ((c.kind == ModelKind::seq2seq || c.kind == ModelKind::attention) && c.head != HeadKind::regression_seq) {
    throw ConfigError(std::string(model_kind_name(c.kind)) + " supports only the regression_seq head");
  }
  if (c.kind == ModelKind::transformer && (c.n_heads == 0 || c.d_model % c.n_heads != 0)) {
    throw ConfigError("transformer d_model must be divisible by n_heads");
  }
}

struct Batch {
  Tensor inputs;                   // [B, L, d]
  std::vector<std::int64_t> ts;    // B*L stamps (transformer calendar term), may be empty
  Tensor teacher;                  // [B, k] targets for teacher forcing, may be undefined

  std::size_t size() const { return inputs.dim(0); }
};

class Forecaster {
 public:
  explicit Forecaster(ModelConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }
  virtual ~Forecaster() = default;
  Forecaster(const Forecaster&) = delete;
  Forecaster& operator=(const Forecaster&) = delete;

  // [B, 3] logits for the movement head, [B, k] values otherwise.
  virtual Tensor forward(const Batch& batch) const = 0;
  virtual nn::ParamList parameters() const = 0;

  const ModelConfig& config() const { return cfg_; }

 protected:
  void check_input(const Batch& b) const {
    const auto& x = b.inputs;
    if (x.rank() != 3 || x.dim(1) != cfg_.window || x.dim(2) != cfg_.input_dim) {
      throw InvariantError(std::string(model_kind_name(cfg_.kind)) + ": expected input [B, " +
                           std::to_string(cfg_.window) + ", " + std::to_string(cfg_.input_dim) + "], got " +
                           nn::to_string(x.shape()));
    }
  }

  ModelConfig cfg_;
};

// Class prediction: lowest class index among maximal entries.
inline int argmax_class(std::span<const double> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

inline Tensor probabilities(const Tensor& logits) { return nn::softmax(logits); }

class MlpForecaster final : public Forecaster {
 public:
  explicit MlpForecaster(ModelConfig cfg) : Forecaster(std::move(cfg)) {
    nn::Rng rng(cfg_.seed);
    const std::size_t flat = cfg_.window * cfg_.input_dim;
    l1_ = nn::Linear(flat, cfg_.hidden_dim, rng);
    l2_ = nn::Linear(cfg_.hidden_dim, cfg_.hidden_dim, rng);
    out_ = nn::Linear(cfg_.hidden_dim, cfg_.output_dim(), rng);
  }

  Tensor forward(const Batch& b) const override {
    check_input(b);
    Tensor x = nn::reshape(b.inputs, {b.size(), cfg_.window * cfg_.input_dim});
    return out_(nn::relu(l2_(nn::relu(l1_(x)))));
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    l1_.collect("mlp.l1", p);
    l2_.collect("mlp.l2", p);
    out_.collect("mlp.out", p);
    return p;
  }

 private:
  nn::Linear l1_, l2_, out_;
};

// Final hidden state of the unrolled LSTM feeds a linear head.
class LstmForecaster final : public Forecaster {
 public:
  explicit LstmForecaster(ModelConfig cfg) : Forecaster(std::move(cfg)) {
    nn::Rng rng(cfg_.seed);
    lstm_ = nn::Lstm(cfg_.input_dim, cfg_.hidden_dim, cfg_.n_layers, rng);
    head_ = nn::Linear(cfg_.hidden_dim, cfg_.output_dim(), rng);
  }

  Tensor forward(const Batch& b) const override {
    check_input(b);
    return head_(lstm_(b.inputs).outputs.back());
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    lstm_.collect("lstm", p);
    head_.collect("head", p);
    return p;
  }

 private:
  nn::Lstm lstm_;
  nn::Linear head_;
};

// Moving-average decomposition of the window; trend and remainder run
// through separate LSTMs whose final hidden states are summed before the head.
class DlstmForecaster final : public Forecaster {
 public:
  explicit DlstmForecaster(ModelConfig cfg) : Forecaster(std::move(cfg)) {
    nn::Rng rng(cfg_.seed);
    trend_ = nn::Lstm(cfg_.input_dim, cfg_.hidden_dim, cfg_.n_layers, rng);
    remainder_ = nn::Lstm(cfg_.input_dim, cfg_.hidden_dim, cfg_.n_layers, rng);
    head_ = nn::Linear(cfg_.hidden_dim, cfg_.output_dim(), rng);
  }

  Tensor forward(const Batch& b) const override {
    check_input(b);
    auto parts = nn::series_decompose(b.inputs, cfg_.decompose_window);
    return forward_parts(parts.trend, parts.remainder);
  }

  // Head applied to explicitly supplied branch inputs.
  Tensor forward_parts(const Tensor& trend, const Tensor& remainder) const {
    const Tensor h_trend = trend_(trend).outputs.back();
    const Tensor h_rem = remainder_(remainder).outputs.back();
    return head_(nn::add(h_trend, h_rem));
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    trend_.collect("trend", p);
    remainder_.collect("remainder", p);
    head_.collect("head", p);
    return p;
  }

 private:
  nn::Lstm trend_, remainder_;
  nn::Linear head_;
};

struct ContextAttention {
  Tensor context;  // [B, H]
  Tensor weights;  // [B, L]
};

// Dot-product scores s_i = h_i . d, softmax weights, context = sum_i a_i h_i.
inline ContextAttention dot_context(const Tensor& encoder_states, const Tensor& query) {
  const std::size_t b = encoder_states.dim(0), len = encoder_states.dim(1), h = encoder_states.dim(2);
  Tensor scores = nn::reshape(nn::matmul(encoder_states, nn::reshape(query, {b, h, 1})), {b, 1, len});
  Tensor weights = nn::softmax(scores);
  Tensor context = nn::reshape(nn::matmul(weights, encoder_states), {b, h});
  return {context, nn::reshape(weights, {b, len})};
}

// LSTM encoder-decoder with iterated one-step decoding. Each decoder step
// consumes [previous output, context]; outputs come from [d_t, context].
// With `attend` the context is recomputed from the encoder states at every
// step by dot-product attention on d_t.
class RecurrentSeqForecaster : public Forecaster {
 public:
  RecurrentSeqForecaster(ModelConfig cfg, bool attend) : Forecaster(std::move(cfg)), attend_(attend) {
    nn::Rng rng(cfg_.seed);
    encoder_ = nn::Lstm(cfg_.input_dim, cfg_.hidden_dim, cfg_.n_layers, rng);
    decoder_ = nn::LstmCell(1 + cfg_.hidden_dim, cfg_.hidden_dim, rng);
    out_ = nn::Linear(2 * cfg_.hidden_dim, 1, rng);
  }

  Tensor forward(const Batch& b) const override {
    check_input(b);
    const std::size_t batch = b.size(), h = cfg_.hidden_dim, k = cfg_.horizon;
    const bool teacher = b.teacher.defined();
    if (teacher && (b.teacher.rank() != 2 || b.teacher.dim(0) != batch || b.teacher.dim(1) != k)) {
      throw InvariantError("teacher targets must be [B, k]");
    }
    auto enc = encoder_(b.inputs);
    Tensor states;
    if (attend_ || cfg_.context_mean) {
      std::vector<Tensor> rows;
      rows.reserve(enc.outputs.size());
      for (const auto& o : enc.outputs) rows.push_back(nn::reshape(o, {batch, 1, h}));
      states = nn::concat(rows, 1);
    }
    Tensor context = cfg_.context_mean && !attend_ ? nn::mean_axis(states, 1) : enc.outputs.back();
    nn::LstmState dec{context, Tensor::zeros({batch, h})};
    Tensor prev = Tensor::zeros({batch, 1});
    std::vector<Tensor> ys;
    ys.reserve(k);
    for (std::size_t t = 0; t < k; ++t) {
      dec = decoder_(nn::concat({prev, context}, 1), dec);
      if (attend_) context = dot_context(states, dec.h).context;
      Tensor y = out_(nn::concat({dec.h, context}, 1));
      ys.push_back(y);
      prev = teacher ? nn::slice(b.teacher, 1, t, 1) : y;
    }
    return k == 1 ? ys.front() : nn::concat(ys, 1);
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    encoder_.collect("encoder", p);
    decoder_.collect("decoder", p);
    out_.collect("out", p);
    return p;
  }

 private:
  bool attend_;
  nn::Lstm encoder_;
  nn::LstmCell decoder_;
  nn::Linear out_;
};

class Seq2SeqForecaster final : public RecurrentSeqForecaster {
 public:
  explicit Seq2SeqForecaster(ModelConfig cfg) : RecurrentSeqForecaster(std::move(cfg), false) {}
};

class AttentionForecaster final : public RecurrentSeqForecaster {
 public:
  explicit AttentionForecaster(ModelConfig cfg) : RecurrentSeqForecaster(std::move(cfg), true) {}
};

struct EncoderLayer {
  nn::MultiHeadAttention attn;
  nn::LayerNorm norm1, norm2;
  nn::FeedForward ffn;
};

struct DecoderLayer {
  nn::MultiHeadAttention self_attn, cross_attn;
  nn::LayerNorm norm1, norm2, norm3;
  nn::FeedForward ffn;
};

// Post-norm encoder-decoder transformer emitting all k steps in one pass.
// Decoder tokens are a learned per-step query plus the sinusoid position
// continuing after the window. The movement head reads the whole predicted
// k-sequence.
class TransformerForecaster final : public Forecaster {
 public:
  explicit TransformerForecaster(ModelConfig cfg) : Forecaster(std::move(cfg)) {
    nn::Rng rng(cfg_.seed);
    const std::size_t dm = cfg_.d_model;
    embed_ = nn::TimestampEncoding(cfg_.input_dim, dm, cfg_.window, rng, cfg_.stamp_alpha);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
      encoder_.push_back({nn::MultiHeadAttention(dm, cfg_.n_heads, rng), nn::LayerNorm(dm), nn::LayerNorm(dm),
                          nn::FeedForward(dm, cfg_.d_ff, rng)});
    }
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) {
      decoder_.push_back({nn::MultiHeadAttention(dm, cfg_.n_heads, rng), nn::MultiHeadAttention(dm, cfg_.n_heads, rng),
                          nn::LayerNorm(dm), nn::LayerNorm(dm), nn::LayerNorm(dm),
                          nn::FeedForward(dm, cfg_.d_ff, rng)});
    }
    query_ = nn::init_uniform({cfg_.horizon, dm}, dm, rng);
    project_ = nn::Linear(dm, 1, rng);
    if (cfg_.head == HeadKind::movement) head_ = nn::Linear(cfg_.horizon, 3, rng);
  }

  Tensor forward(const Batch& b) const override {
    check_input(b);
    Tensor seq = predict_sequence(b);
    return cfg_.head == HeadKind::movement ? head_(seq) : seq;
  }

  // [B, k] predicted values before any movement head.
  Tensor predict_sequence(const Batch& b, std::vector<Tensor>* attention = nullptr) const {
    Tensor memory = encode(b, attention);
    return project(decode(memory, decoder_tokens(b.size()), attention));
  }

  Tensor encode(const Batch& b, std::vector<Tensor>* attention = nullptr) const {
    Tensor x = embed_(b.inputs, b.ts);
    for (const auto& layer : encoder_) {
      x = layer.norm1(nn::add(x, layer.attn(x, x, {}, attention)));
      x = layer.norm2(nn::add(x, layer.ffn(x)));
    }
    return x;
  }

  Tensor decoder_tokens(std::size_t batch) const {
    const std::size_t k = cfg_.horizon, dm = cfg_.d_model;
    auto pe = nn::sinusoid_table(cfg_.window + k, dm, cfg_.window);
    pe.erase(pe.begin(), pe.begin() + static_cast<std::ptrdiff_t>(cfg_.window * dm));
    Tensor tokens = nn::add(query_, Tensor::from({k, dm}, std::move(pe)));
    return nn::add(Tensor::zeros({batch, k, dm}), tokens);
  }

  Tensor decode(const Tensor& memory, const Tensor& tokens, std::vector<Tensor>* attention = nullptr) const {
    const auto mask = nn::causal_mask(tokens.dim(1));
    Tensor y = tokens;
    for (const auto& layer : decoder_) {
      y = layer.norm1(nn::add(y, layer.self_attn(y, y, mask, attention)));
      y = layer.norm2(nn::add(y, layer.cross_attn(y, memory, {}, attention)));
      y = layer.norm3(nn::add(y, layer.ffn(y)));
    }
    return y;
  }

  Tensor project(const Tensor& decoded) const {
    return nn::reshape(project_(decoded), {decoded.dim(0), decoded.dim(1)});
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    embed_.collect("embed", p);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const auto pre = "enc" + std::to_string(i);
      encoder_[i].attn.collect(pre + ".attn", p);
      encoder_[i].norm1.collect(pre + ".norm1", p);
      encoder_[i].ffn.collect(pre + ".ffn", p);
      encoder_[i].norm2.collect(pre + ".norm2", p);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const auto pre = "dec" + std::to_string(i);
      decoder_[i].self_attn.collect(pre + ".self_attn", p);
      decoder_[i].norm1.collect(pre + ".norm1", p);
      decoder_[i].cross_attn.collect(pre + ".cross_attn", p);
      decoder_[i].norm2.collect(pre + ".norm2", p);
      decoder_[i].ffn.collect(pre + ".ffn", p);
      decoder_[i].norm3.collect(pre + ".norm3", p);
    }
    p.push_back({"dec.query", query_});
    project_.collect("project", p);
    if (cfg_.head == HeadKind::movement) head_.collect("movement_head", p);
    return p;
  }

  nn::TimestampEncoding& embedding() { return embed_; }
  nn::Linear& movement_head() { return head_; }

 private:
  nn::TimestampEncoding embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Tensor query_;
  nn::Linear project_;
  nn::Linear head_;
};

inline std::unique_ptr<Forecaster> make_forecaster(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::mlp: return std::make_unique<MlpForecaster>(cfg);
    case ModelKind::lstm: return std::make_unique<LstmForecaster>(cfg);
    case ModelKind::dlstm: return std::make_unique<DlstmForecaster>(cfg);
    case ModelKind::seq2seq: return std::make_unique<Seq2SeqForecaster>(cfg);
    case ModelKind::attention: return std::make_unique<AttentionForecaster>(cfg);
    case ModelKind::transformer: return std::make_unique<TransformerForecaster>(cfg);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace lobforge::models
