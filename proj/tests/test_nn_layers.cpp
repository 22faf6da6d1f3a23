#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lobforge/nn/checkpoint.hpp"
#include "lobforge/nn/layers.hpp"
#include "lobforge/nn/optim.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

using namespace lobforge;
using namespace lobforge::nn;
using testutil::random_tensor;

namespace {

void fill(ParamList& ps, double v) {
  for (auto& p : ps) std::fill(p.tensor.values().begin(), p.tensor.values().end(), v);
}

}  // namespace

TEST(LstmCell, ZeroParametersHalveTheCell) {
  Rng rng(1);
  LstmCell cell(3, 2, rng);
  ParamList ps;
  cell.collect("c", ps);
  fill(ps, 0.0);
  auto x = Tensor::from({1, 3}, {5, -2, 7});
  auto s = cell(x, zero_state(1, 2));
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
  auto s2 = cell(x, {Tensor::zeros({1, 2}), Tensor::full({1, 2}, 1.0)});
  for (double v : s2.c.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  for (double v : s2.h.values()) EXPECT_DOUBLE_EQ(v, 0.5 * std::tanh(0.5));
}

TEST(LstmCell, ShapeMismatchIsAnInvariantError) {
  Rng rng(1);
  LstmCell cell(3, 2, rng);
  EXPECT_THROW(cell(Tensor::zeros({1, 4}), zero_state(1, 2)), InvariantError);
  EXPECT_THROW(cell(Tensor::zeros({2, 3}), zero_state(1, 2)), InvariantError);
}

// The cell is carried across steps: running two steps by hand equals the
// stacked runner's output.
TEST(Lstm, CarriesStateAcrossSteps) {
  Rng rng(4);
  Lstm lstm(2, 3, 2, rng);
  auto x = random_tensor({1, 4, 2}, rng, -1, 1, false);
  auto run = lstm(x);
  ASSERT_EQ(run.outputs.size(), 4u);
  std::vector<LstmState> st(2, zero_state(1, 3));
  Tensor top;
  for (std::size_t t = 0; t < 4; ++t) {
    Tensor in = select(x, 1, t);
    for (std::size_t l = 0; l < 2; ++l) {
      st[l] = lstm.cell(l)(in, st[l]);
      in = st[l].h;
    }
    top = in;
  }
  EXPECT_EQ(top.values(), run.outputs.back().values());
  EXPECT_EQ(run.final_states[1].c.values(), st[1].c.values());
}

TEST(Decompose, SpikeSpreadsOverTheWindow) {
  auto x = Tensor::from({5, 1}, {0, 0, 3, 0, 0});
  auto d = series_decompose(x, 3);
  EXPECT_EQ(d.trend.values(), (std::vector<double>{0, 1, 1, 1, 0}));
  EXPECT_EQ(d.remainder.values(), (std::vector<double>{0, -1, 2, -1, 0}));
}

TEST(Decompose, ConstantInputHasZeroRemainder) {
  // values like 101.37 are not exact after a plain sum-then-divide
  for (double c : {4.25, 101.37, -0.1, 1e6 + 0.1}) {
    for (std::size_t w : {1u, 5u, 25u}) {
      auto d = series_decompose(Tensor::full({2, 9, 3}, c), w);
      for (double v : d.remainder.values()) ASSERT_EQ(v, 0.0) << c << " window " << w;
      for (double v : d.trend.values()) ASSERT_EQ(v, c);
    }
  }
}

// Property: trend + remainder reconstructs the input to 1e-12.
TEST(Decompose, ReconstructsTheInput) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 3 + rng() % 40, w = 1 + 2 * (rng() % 6);
    auto x = random_tensor({2, len, 3}, rng, -100, 100, false);
    auto d = series_decompose(x, w);
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(d.trend[i] + d.remainder[i], x[i], 1e-12);
  }
}

TEST(Attention, SingletonKeyReturnsItsValue) {
  std::mt19937_64 rng(6);
  auto q = random_tensor({1, 3, 4}, rng, -1, 1, false);
  auto k = random_tensor({1, 1, 4}, rng, -1, 1, false);
  auto v = Tensor::from({1, 1, 2}, {7, -3});
  auto a = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(a.output[2 * i], 7);
    EXPECT_DOUBLE_EQ(a.output[2 * i + 1], -3);
  }
}

TEST(Attention, IdenticalKeysAverageTheValues) {
  std::mt19937_64 rng(7);
  auto q = random_tensor({1, 2, 3}, rng, -1, 1, false);
  auto k = Tensor::full({1, 4, 3}, 0.3);
  auto v = Tensor::from({1, 4, 1}, {1, 2, 3, 6});
  auto a = scaled_dot_attention(q, k, v);
  EXPECT_NEAR(a.output[0], 3.0, 1e-14);
  EXPECT_NEAR(a.output[1], 3.0, 1e-14);
}

TEST(Attention, CausalMaskHidesTheFuture) {
  std::mt19937_64 rng(8);
  auto q = random_tensor({1, 5, 4}, rng, -1, 1, false);
  auto k = random_tensor({1, 5, 4}, rng, -1, 1, false);
  auto v = random_tensor({1, 5, 2}, rng, -1, 1, false);
  auto base = scaled_dot_attention(q, k, v, causal_mask(5));
  // perturb the last key and value; rows 0..3 must not move
  auto k2 = Tensor::from(k.shape(), k.values()), v2 = Tensor::from(v.shape(), v.values());
  for (std::size_t j = 0; j < 4; ++j) k2.values()[16 + j] += 10;
  v2.values()[8] += 10;
  auto moved = scaled_dot_attention(q, k2, v2, causal_mask(5));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(base.output[i], moved.output[i]);
  EXPECT_NE(base.output[8], moved.output[8]);
}

TEST(Attention, SingleHeadEqualsDirectAttention) {
  Rng rng(9);
  MultiHeadAttention mha(4, 1, rng);
  auto x = random_tensor({2, 3, 4}, rng, -1, 1, false);
  auto y = mha(x, x);
  auto direct = mha.out()(scaled_dot_attention(mha.query()(x), mha.key()(x), mha.value()(x)).output);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], direct[i], 1e-14);
  EXPECT_THROW(MultiHeadAttention(6, 4, rng), ConfigError);
}

TEST(PositionalEncoding, PositionZeroIsSinZeroCosOne) {
  auto pe = sinusoid_table(3, 6, 10);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_DOUBLE_EQ(pe[6], std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe[7], std::cos(1.0));
  EXPECT_DOUBLE_EQ(pe[6 + 2], std::sin(1.0 / std::pow(20.0, 2.0 / 6.0)));
}

TEST(TimestampEncoding, ZeroAlphaAndZeroTablesGivePurePositionalEncoding) {
  Rng rng(10);
  TimestampEncoding enc(3, 4, 5, rng, 0.0);
  for (auto* t : {&enc.hour_table(), &enc.minute_table(), &enc.second_table()})
    std::fill(t->values().begin(), t->values().end(), 0.0);
  auto x = random_tensor({2, 5, 3}, rng, -1, 1, false);
  std::vector<std::int64_t> ts(10, 1'656'806'400'000);
  auto y = enc(x, ts, 2);
  auto pe = sinusoid_table(7, 4, 5);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(y[b * 20 + i], pe[8 + i], 1e-15);
  EXPECT_THROW(TimestampEncoding(3, 5, 5, rng), ConfigError);
}

TEST(TimestampEncoding, CalendarFields) {
  auto c = calendar_of(1'656'806'400'000 + (13 * 3600 + 7 * 60 + 42) * 1000LL + 999);
  EXPECT_EQ(c.hour, 13u);
  EXPECT_EQ(c.minute, 7u);
  EXPECT_EQ(c.second, 42u);
  auto neg = calendar_of(-1);
  EXPECT_EQ(neg.hour, 23u);
  EXPECT_EQ(neg.second, 59u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto w = Tensor::from({3}, {1, -2, 3}, true);
  Adam opt({{"w", w}}, {0.1});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(w.values(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradientSign) {
  auto w = Tensor::from({3}, {0, 0, 0}, true);
  w.grad_buffer() = {5.0, -0.01, 300.0};
  Adam opt({{"w", w}}, {0.01});
  opt.step();
  EXPECT_NEAR(w[0], -0.01, 1e-8);
  EXPECT_NEAR(w[1], 0.01, 1e-5);
  EXPECT_NEAR(w[2], -0.01, 1e-8);
}

TEST(Adam, MinimizesAQuadratic) {
  auto w = Tensor::from({1}, {1.0}, true);
  Adam opt({{"w", w}}, {1e-2});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(mul(w, w)).backward();
    opt.step();
  }
  EXPECT_LT(std::abs(w[0]), 1e-2);
}

TEST(ClipGradNorm, RescalesOnlyAboveTheLimit) {
  auto a = Tensor::from({2}, {0, 0}, true), b = Tensor::from({1}, {0}, true);
  a.grad_buffer() = {3, 0};
  b.grad_buffer() = {4};
  ParamList ps{{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 5.0);
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(11);
  Lstm a(3, 4, 2, rng), b(3, 4, 2, rng);
  ParamList pa, pb;
  a.collect("m", pa);
  b.collect("m", pb);
  std::stringstream buf;
  save_arrays(buf, pa);
  restore_params(pb, load_arrays(buf));
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
}

TEST(Checkpoint, MismatchesAreDataErrors) {
  Rng rng(12);
  Lstm a(3, 4, 1, rng), wide(3, 5, 1, rng), deep(3, 4, 2, rng);
  ParamList pa, pw, pd;
  a.collect("m", pa);
  wide.collect("m", pw);
  deep.collect("m", pd);
  std::stringstream buf;
  save_arrays(buf, pa);
  const std::string bytes = buf.str();
  std::stringstream b1(bytes), b2(bytes), b3(bytes.substr(0, bytes.size() - 3)), b4("NOTACKPT");
  EXPECT_THROW(restore_params(pw, load_arrays(b1)), DataError);
  EXPECT_THROW(restore_params(pd, load_arrays(b2)), DataError);
  EXPECT_THROW(load_arrays(b3), DataError);
  EXPECT_THROW(load_arrays(b4), DataError);
}

class LayerGradCheck : public ::testing::TestWithParam<gradcases::Case> {};

TEST_P(LayerGradCheck, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= gradcases::kSeeds; ++seed) {
    auto r = GetParam().run(seed);
    ASSERT_GT(r.checked, 0u);
    ASSERT_LE(r.max_rel_error, gradcases::kTol) << GetParam().name << " seed " << seed << " " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradCheck, ::testing::ValuesIn(gradcases::layer_cases()),
                         [](const auto& info) { return info.param.name; });
