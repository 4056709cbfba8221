// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gret/config.hpp"
#include "gret/fusion.hpp"
#include "gret/global_representation.hpp"
#include "gret/gradcheck.hpp"
#include "gret/model.hpp"
#include "gret/ops.hpp"
#include "gret/transformer.hpp"
#include "test_util.hpp"

namespace gret {
namespace {

using testing::bitwise_equal;
using testing::random_tensor;

Tensor probe(const Tensor& t) {
  std::vector<double> w(t.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 + 0.9 * static_cast<double>(i));
  return ops::sum(ops::mul(t, Tensor::from(t.shape(), w)));
}

void fill(Tensor t, double v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

ModelConfig tiny(GretFlags flags = {}) {
  ModelConfig c;
  c.d_model = 8;
  c.ffn_hidden = 12;
  c.heads = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.vocab = 12;
  c.capsules = 3;
  c.routing_iters = 3;
  c.flags = flags;
  return c;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<int> dist(tokens::kFirstContent, static_cast<int>(vocab) - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// ---- config ---------------------------------------------------------------

TEST(Config, FlagsRoundTrip) {
  EXPECT_EQ(GretFlags{}.str(), "none");
  EXPECT_EQ(GretFlags::parse("gate, capsule").str(), "capsule,gate");
  EXPECT_EQ(GretFlags::parse("all"), (GretFlags{true, true, true}));
  EXPECT_EQ(GretFlags::parse(""), GretFlags{});
  EXPECT_THROW(GretFlags::parse("capsules"), ConfigError);
  EXPECT_TRUE(GretFlags::parse("gate").subset_of(GretFlags::parse("gate,aggregate")));
  EXPECT_FALSE(GretFlags::parse("capsule").subset_of(GretFlags::parse("gate")));
}

TEST(Config, KeyValueParsing) {
  auto kv = parse_key_values("# header\nd_model = 16\n\n heads=2 # trailing\nd_model=24\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv["d_model"], "24");
  EXPECT_EQ(kv["heads"], "2");
  EXPECT_THROW(parse_key_values("just words"), ConfigError);
}

TEST(Config, SetAndFieldsAreInverse) {
  ModelConfig a = ModelConfig::paper_base(GretFlags::parse("capsule,gate"));
  ModelConfig b;
  for (const auto& [k, v] : a.fields()) EXPECT_TRUE(b.set(k, v)) << k;
  EXPECT_EQ(a.fields(), b.fields());
  EXPECT_FALSE(b.set("nonsense", "1"));
  try {
    b.set("heads", "two");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "heads");
  }
}

TEST(Config, ValidateNamesField) {
  auto c = ModelConfig::desk();
  c.heads = 5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "heads");
  }
  c = ModelConfig::desk();
  c.label_smoothing = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.encoder_layers = 0;
  EXPECT_NO_THROW(c.validate());
  c.flags.capsule = true;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, FingerprintTracksArchitectureOnly) {
  auto a = ModelConfig::desk();
  auto b = a;
  b.dropout = 0.3;
  b.seed = 99;
  EXPECT_EQ(a.architecture_fingerprint(), b.architecture_fingerprint());
  b.routing_iters = 2;
  EXPECT_NE(a.architecture_fingerprint(), b.architecture_fingerprint());
  EXPECT_EQ(to_hex(sha256("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// ---- transformer ----------------------------------------------------------

TEST(Transformer, ZeroEncoderLayersKeepsEmbeddingOnly) {
  auto cfg = tiny();
  cfg.encoder_layers = 0;
  nn::ParamStore store(1);
  Transformer t(cfg, store);
  std::vector<int> src{4, 5, 1};
  auto enc = t.encode(src);
  ASSERT_EQ(enc.layers.size(), 1u);
  EXPECT_EQ(enc.last().shape(), (Shape{3, 8}));

  auto gcfg = tiny(GretFlags::parse("capsule"));
  nn::ParamStore gs(1);
  global::GlobalRepresentation g(gcfg, gs);
  EXPECT_THROW(g.aggregate_layers(enc), ContractError);
}

TEST(Transformer, RejectsBadIds) {
  nn::ParamStore store(1);
  Transformer t(tiny(), store);
  EXPECT_THROW(t.encode(std::vector<int>{}), ContractError);
  EXPECT_THROW(t.encode(std::vector<int>{4, 12}), ContractError);
  EXPECT_THROW(t.encode(std::vector<int>{-1}), ContractError);
  EXPECT_THROW(t.encode(std::vector<int>{tokens::kPad, tokens::kPad}), ContractError);
}

TEST(Transformer, PaddedContentDoesNotLeak) {
  nn::ParamStore store(3);
  Transformer t(tiny(), store);
  std::vector<int> a{5, 6, 7, 1, 9, 10};
  std::vector<std::uint8_t> mask{0, 0, 0, 0, 1, 1};
  auto b = a;
  b[4] = 4;
  b[5] = 11;
  auto ea = t.encode(a, mask);
  auto eb = t.encode(b, mask);
  for (std::size_t m = 0; m < ea.layers.size(); ++m) {
    auto ra = ops::slice(ea.layers[m], 0, 0, 4);
    auto rb = ops::slice(eb.layers[m], 0, 0, 4);
    EXPECT_TRUE(bitwise_equal(ra, rb)) << "layer " << m;
  }
  std::vector<int> prefix{0, 5, 6};
  EXPECT_TRUE(bitwise_equal(t.decode_step(prefix, ea).logits, t.decode_step(prefix, eb).logits));
}

TEST(Transformer, EncoderRowsAreLayerNormalized) {
  nn::ParamStore store(4);
  Transformer t(tiny(), store);
  std::mt19937_64 rng(4);
  auto enc = t.encode(random_ids(rng, 7, 12));
  for (const auto& h : enc.layers) {
    for (std::size_t i = 0; i < h.dim(0); ++i) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < 8; ++j) mean += h.at({i, j});
      mean /= 8;
      for (std::size_t j = 0; j < 8; ++j) var += (h.at({i, j}) - mean) * (h.at({i, j}) - mean);
      var /= 8;
      EXPECT_NEAR(mean, 0.0, 1e-12);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(Transformer, SingleTokenPrefix) {
  nn::ParamStore store(5);
  Transformer t(tiny(), store);
  auto enc = t.encode(std::vector<int>{4, 5, 1});
  auto out = t.decode_step(std::vector<int>{tokens::kBos}, enc);
  EXPECT_EQ(out.logits.shape(), (Shape{1, 12}));
  EXPECT_FALSE(out.fused.has_value());
}

TEST(Transformer, CausalPrefix) {
  nn::ParamStore store(6);
  Transformer t(tiny(), store);
  std::mt19937_64 rng(6);
  auto enc = t.encode(random_ids(rng, 5, 12));
  std::vector<int> y{0, 4, 5, 6, 7};
  auto full = t.decode_step(y, enc).logits;
  for (std::size_t j = 0; j + 1 < y.size(); ++j) {
    auto z = y;
    for (std::size_t k = j + 1; k < z.size(); ++k) z[k] = 11;
    auto other = t.decode_step(z, enc).logits;
    EXPECT_TRUE(bitwise_equal(ops::slice(full, 0, 0, j + 1), ops::slice(other, 0, 0, j + 1)));
  }
}

TEST(Transformer, DecoderReadsOnlyLastEncoderLayer) {
  nn::ParamStore store(7);
  Transformer t(tiny(), store);
  std::mt19937_64 rng(7);
  auto enc = t.encode(random_ids(rng, 5, 12));
  std::vector<int> y{0, 4, 5};
  auto before = t.decode_step(y, enc).logits;
  enc.layers[0] = random_tensor(rng, enc.layers[0].shape());
  EXPECT_TRUE(bitwise_equal(before, t.decode_step(y, enc).logits));

  auto other = tiny();
  other.encoder_layers = 3;
  nn::ParamStore s2(7);
  Transformer t3(other, s2);
  EXPECT_THROW(t3.decode_step(y, enc), ContractError);
}

TEST(Transformer, EmbeddingGradientFlowsThroughCrossAttention) {
  nn::ParamStore store(8);
  auto cfg = tiny();
  Transformer t(cfg, store);
  std::vector<int> src{5, 6, 7, 1};
  std::vector<int> y{0, 8, 9};
  auto loss = [&] { return probe(t.decode_step(y, t.encode(src)).logits); };
  auto table = store.get("embed.source.table");
  // one coordinate of the row for token 6
  const std::size_t idx = 6 * cfg.d_model + 3;
  auto l = loss();
  backward(l);
  const double analytic = table.grad().data()[idx];
  store.zero_grad();
  const double eps = 1e-5;
  auto d = table.mutable_data();
  const double orig = d[idx];
  double hi, lo;
  {
    autodiff::NoGradGuard ng;
    d[idx] = orig + eps;
    hi = loss().item();
    d[idx] = orig - eps;
    lo = loss().item();
  }
  d[idx] = orig;
  const double numeric = (hi - lo) / (2 * eps);
  EXPECT_GT(std::abs(analytic), 1e-8);
  EXPECT_LE(std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)}),
            1e-4);
}

TEST(Transformer, ZeroStatesGiveUniformProbabilities) {
  nn::ParamStore store(9);
  Transformer t(tiny(), store);
  auto logits = t.output_logits(Tensor::zeros({2, 8}));
  auto p = nn::softmax(logits);
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 12.0);
  EXPECT_THROW(t.output_logits(Tensor::zeros({2, 7})), ShapeError);
}

TEST(Transformer, OutputProjectionGradientCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = tiny();
    cfg.d_model = 4;
    cfg.vocab = 6;
    nn::ParamStore store(seed);
    Transformer t(cfg, store);
    std::mt19937_64 rng(seed);
    auto x = random_tensor(rng, {2, 4}, -1, 1, true);
    std::vector<Tensor> params{store.get("output.proj.weight"), store.get("output.proj.bias"), x};
    EXPECT_LE(finite_difference_check_params([&] { return probe(t.output_logits(x)); }, params),
              1e-4);
  }
}

TEST(Transformer, TiedEmbeddingsShareOneTable) {
  auto cfg = tiny();
  cfg.tie_embeddings = true;
  nn::ParamStore store(2);
  Transformer t(cfg, store);
  EXPECT_TRUE(store.contains("embed.shared.table"));
  EXPECT_FALSE(store.contains("embed.source.table"));
  EXPECT_FALSE(store.contains("output.proj.weight"));
  auto enc = t.encode(std::vector<int>{4, 5, 1});
  EXPECT_EQ(t.decode_step(std::vector<int>{0, 4}, enc).logits.shape(), (Shape{2, 12}));
}

TEST(Transformer, PerSublayerLayoutDiffers) {
  auto a = tiny();
  auto b = tiny();
  b.joint_attention_ln = false;
  nn::ParamStore sa(3), sb(3);
  Transformer ta(a, sa), tb(b, sb);
  EXPECT_EQ(sb.size(), sa.size() + 2 * b.decoder_layers);
  std::vector<int> src{4, 5, 6, 1};
  std::vector<int> y{0, 4};
  EXPECT_FALSE(bitwise_equal(ta.decode_step(y, ta.encode(src)).logits,
                             tb.decode_step(y, tb.encode(src)).logits));
}

// ---- global representation -------------------------------------------------

TEST(Squash, Examples) {
  auto z = global::squash(Tensor::from({2}, {0.0, 0.0}));
  EXPECT_EQ(z.data()[0], 0.0);
  EXPECT_EQ(z.data()[1], 0.0);
  auto u = global::squash(Tensor::from({2}, {1.0, 0.0}));
  EXPECT_DOUBLE_EQ(u.data()[0], 0.5);
  EXPECT_EQ(u.data()[1], 0.0);
  auto v = global::squash(Tensor::from({2}, {3.0, 4.0}));
  EXPECT_NEAR(v.data()[0], 0.576923, 1e-6);
  EXPECT_NEAR(v.data()[1], 0.769231, 1e-6);
  EXPECT_DOUBLE_EQ(v.data()[0], 25.0 / 26.0 * 3.0 / 5.0);
}

TEST(Squash, NormStaysInsideUnitBall) {
  std::mt19937_64 rng(1);
  auto x = random_tensor(rng, {50, 6}, -20, 20);
  auto y = global::squash(x);
  for (std::size_t r = 0; r < 50; ++r) {
    double n = 0;
    for (std::size_t j = 0; j < 6; ++j) n += y.at({r, j}) * y.at({r, j});
    EXPECT_LT(std::sqrt(n), 1.0);
  }
}

TEST(Squash, GradientCheck) {
  std::mt19937_64 rng(2);
  for (int s = 0; s < 20; ++s) {
    auto x = random_tensor(rng, {4, 3}, -2, 2);
    EXPECT_LE(finite_difference_check([](const Tensor& t) { return probe(global::squash(t)); }, x),
              1e-4);
  }
  // squash-norm composite
  auto x = random_tensor(rng, {5}, -1, 1);
  auto f = [](const Tensor& t) { return ops::sqrt(ops::sum(ops::mul(global::squash(t), global::squash(t)))); };
  EXPECT_LE(finite_difference_check(f, x), 1e-4);
  EXPECT_THROW(finite_difference_check(f, x, 0.0), ContractError);
}

TEST(Squash, ZeroRowHasZeroGradient) {
  auto x = Tensor::from({2, 2}, {0.0, 0.0, 1.0, 2.0}, true);
  auto y = probe(global::squash(x));
  backward(y);
  EXPECT_EQ(x.grad().data()[0], 0.0);
  EXPECT_EQ(x.grad().data()[1], 0.0);
}

TEST(PermutationInvariantSum, OrderFree) {
  std::vector<double> a{1e16, 1.0, -1e16, 3.5, 0.25};
  std::vector<double> b{0.25, -1e16, 3.5, 1.0, 1e16};
  EXPECT_EQ(global::permutation_invariant_sum(a), global::permutation_invariant_sum(b));
}

TEST(MaskedMean, IgnoresMaskedRows) {
  auto x = Tensor::from({3, 2}, {1.0, 2.0, 100.0, -7.0, 3.0, 4.0});
  std::vector<std::uint8_t> mask{0, 1, 0};
  auto m = global::masked_mean(x, mask);
  EXPECT_EQ(m.data()[0], 2.0);
  EXPECT_EQ(m.data()[1], 3.0);
  std::vector<std::uint8_t> all{1, 1, 1};
  EXPECT_THROW(global::masked_mean(x, all), ContractError);
  std::mt19937_64 rng(3);
  auto y = random_tensor(rng, {3, 4});
  EXPECT_LE(finite_difference_check([&](const Tensor& t) { return probe(global::masked_mean(t, mask)); }, y),
            1e-4);
}

TEST(TransformInputs, IdentityAndZero) {
  std::mt19937_64 rng(4);
  auto h = random_tensor(rng, {3, 2});
  auto eye = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto hhat = global::transform_inputs(h, eye);
  EXPECT_TRUE(bitwise_equal(ops::reshape(hhat, {3, 2}), h));

  auto w = Tensor::zeros({3, 2, 4});
  auto zero = global::transform_inputs(h, w);
  std::vector<std::uint8_t> mask(3, 0);
  auto st = global::dynamic_routing(zero, mask, 3);
  for (double v : st.capsules.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(global::transform_inputs(h, Tensor::zeros({3, 3, 4})), ShapeError);
}

TEST(TransformInputs, GradientCheck) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 10; ++s) {
    auto h = random_tensor(rng, {3, 2}, -1, 1, true);
    auto w = random_tensor(rng, {2, 2, 3}, -1, 1, true);
    std::vector<Tensor> params{h, w};
    EXPECT_LE(finite_difference_check_params([&] { return probe(global::transform_inputs(h, w)); }, params),
              1e-4);
  }
}

TEST(Routing, WorkedExample) {
  auto hhat = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  std::vector<std::uint8_t> mask{0, 0};
  auto st = global::dynamic_routing(hhat, mask, 1);
  EXPECT_EQ(st.coefficients[0].data()[0], 0.5);
  EXPECT_EQ(st.coefficients[0].data()[1], 0.5);
  EXPECT_NEAR(st.capsules.data()[0], 0.23570, 1e-5);
  EXPECT_NEAR(st.capsules.data()[1], 0.23570, 1e-5);
  EXPECT_EQ(st.iteration, 1u);
}

TEST(Routing, SingleIterationIsSquashedMaskedMean) {
  std::mt19937_64 rng(6);
  for (int s = 0; s < 10; ++s) {
    const std::size_t k = 3, n = 5, w = 4;
    auto hhat = random_tensor(rng, {k, n, w}, -2, 2);
    std::vector<std::uint8_t> mask{0, 0, 1, 0, 1};
    auto st = global::dynamic_routing(hhat, mask, 1);
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> mean(w, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) continue;
        for (std::size_t j = 0; j < w; ++j) mean[j] += hhat.at({c, i, j}) / 3.0;
      }
      double sq = 0;
      for (double v : mean) sq += v * v;
      for (std::size_t j = 0; j < w; ++j) {
        EXPECT_NEAR(st.capsules.at({c, j}), mean[j] * std::sqrt(sq) / (1 + sq), 1e-12);
      }
    }
  }
}

TEST(Routing, CoefficientsNormalizedAndCapsulesBounded) {
  std::mt19937_64 rng(7);
  auto hhat = random_tensor(rng, {4, 6, 3}, -3, 3);
  std::vector<std::uint8_t> mask{0, 0, 0, 0, 1, 1};
  auto st = global::dynamic_routing(hhat, mask, 3);
  ASSERT_EQ(st.coefficients.size(), 3u);
  for (const auto& c : st.coefficients) {
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t i = 0; i < 6; ++i) total += c.at({r, i});
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_EQ(c.at({r, 4}), 0.0);
      EXPECT_EQ(c.at({r, 5}), 0.0);
    }
  }
  for (std::size_t r = 0; r < 4; ++r) {
    double n = 0;
    for (std::size_t j = 0; j < 3; ++j) n += st.capsules.at({r, j}) * st.capsules.at({r, j});
    EXPECT_LT(std::sqrt(n), 1.0);
  }
  EXPECT_THROW(global::dynamic_routing(hhat, mask, 0), ContractError);
}

TEST(Routing, PermutationInvariant) {
  std::mt19937_64 rng(8);
  for (int s = 0; s < 20; ++s) {
    const std::size_t k = 3, n = 7, w = 4;
    auto hhat = random_tensor(rng, {k, n, w}, -2, 2);
    std::vector<std::uint8_t> mask{0, 0, 1, 0, 0, 1, 0};
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> data(k * n * w);
    std::vector<std::uint8_t> pmask(n);
    for (std::size_t i = 0; i < n; ++i) {
      pmask[i] = mask[perm[i]];
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < w; ++j) data[(c * n + i) * w + j] = hhat.at({c, perm[i], j});
      }
    }
    auto a = global::dynamic_routing(hhat, mask, 3);
    auto b = global::dynamic_routing(Tensor::from({k, n, w}, data), pmask, 3);
    EXPECT_TRUE(bitwise_equal(a.capsules, b.capsules));
  }
}

TEST(Routing, MaskedInputsIgnored) {
  std::mt19937_64 rng(9);
  auto hhat = random_tensor(rng, {2, 4, 3});
  std::vector<std::uint8_t> mask{0, 1, 0, 0};
  auto other = hhat.clone();
  auto d = other.mutable_data();
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < 3; ++j) d[(c * 4 + 1) * 3 + j] = 1e3 * static_cast<double>(j + 1);
  }
  EXPECT_TRUE(bitwise_equal(global::dynamic_routing(hhat, mask, 3).capsules,
                            global::dynamic_routing(other, mask, 3).capsules));
}

TEST(Routing, GradientCheckUnrolled) {
  std::mt19937_64 rng(10);
  for (int s = 0; s < 20; ++s) {
    auto hhat = random_tensor(rng, {2, 3, 4}, -1, 1);
    std::vector<std::uint8_t> mask{0, static_cast<std::uint8_t>(s % 2), 0};
    auto f = [&](const Tensor& t) { return probe(global::dynamic_routing(t, mask, 3).capsules); };
    EXPECT_LE(finite_difference_check(f, hhat), 1e-4);
  }
}

TEST(AttentivePooling, SingleCapsule) {
  nn::ParamStore store(1);
  auto pool = global::AttentivePooling::create(store, "p", 3, 5, 4);
  std::mt19937_64 rng(1);
  auto u = random_tensor(rng, {1, 3});
  Tensor a;
  auto out = pool(u, &a);
  EXPECT_EQ(a.data()[0], 1.0);
  EXPECT_TRUE(bitwise_equal(out, pool.output(ops::reshape(u, {3}))));
}

TEST(AttentivePooling, IdenticalCapsulesUniform) {
  nn::ParamStore store(2);
  auto pool = global::AttentivePooling::create(store, "p", 3, 5, 4);
  auto u = Tensor::from({4, 3}, {0.1, -0.2, 0.3, 0.1, -0.2, 0.3, 0.1, -0.2, 0.3, 0.1, -0.2, 0.3});
  Tensor a;
  auto out = pool(u, &a);
  for (double v : a.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto expected = pool.output(Tensor::from({3}, {0.1, -0.2, 0.3}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], expected.data()[i], 1e-15);
}

TEST(AttentivePooling, GradientCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    nn::ParamStore store(seed);
    auto pool = global::AttentivePooling::create(store, "p", 2, 3, 2);
    std::mt19937_64 rng(seed);
    auto u = random_tensor(rng, {3, 2}, -1, 1, true);
    std::vector<Tensor> params{u};
    for (const auto& [_, t] : store.items()) params.push_back(t);
    EXPECT_LE(finite_difference_check_params([&] { return probe(pool(u)); }, params), 1e-4);
  }
}

TEST(GlobalRepresentation, ZeroGruGivesZeroState) {
  auto cfg = tiny(GretFlags::parse("capsule,aggregate"));
  cfg.encoder_layers = 1;
  nn::ParamStore store(1);
  Transformer t(cfg, store);
  global::GlobalRepresentation g(cfg, store);
  for (const auto& name : store.names()) {
    if (name.rfind("global.gru", 0) == 0) fill(store.get(name), 0.0);
  }
  auto s = g.aggregate_layers(t.encode(std::vector<int>{4, 5, 1}));
  ASSERT_EQ(s.per_layer.size(), 1u);
  for (double v : s.final().data()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalRepresentation, LayerCountsPerFlags) {
  std::vector<int> src{4, 5, 6, 1};
  for (auto flags : {"capsule", "gate", "capsule,gate"}) {
    auto cfg = tiny(GretFlags::parse(flags));
    nn::ParamStore store(2);
    Transformer t(cfg, store);
    global::GlobalRepresentation g(cfg, store);
    EXPECT_EQ(g.aggregate_layers(t.encode(src)).per_layer.size(), 1u) << flags;
  }
  auto cfg = tiny(GretFlags::parse("capsule,aggregate"));
  nn::ParamStore store(2);
  Transformer t(cfg, store);
  global::GlobalRepresentation g(cfg, store);
  EXPECT_EQ(g.aggregate_layers(t.encode(src)).per_layer.size(), 2u);
  EXPECT_TRUE(store.contains("global.layer0.capsule.weight"));
  EXPECT_TRUE(store.contains("global.layer1.capsule.weight"));
}

TEST(GlobalRepresentation, CapsuleFreeUsesMaskedMean) {
  auto cfg = tiny(GretFlags::parse("gate"));
  nn::ParamStore store(3);
  Transformer t(cfg, store);
  global::GlobalRepresentation g(cfg, store);
  auto enc = t.encode(std::vector<int>{4, 5, 6, 1});
  EXPECT_TRUE(bitwise_equal(g.aggregate_layers(enc).final(),
                            global::masked_mean(enc.last(), enc.pad_mask)));
  EXPECT_THROW(g.route_layer(enc, 1), ContractError);
}

TEST(GlobalRepresentation, AggregationDiffersFromLastLayerAlone) {
  auto agg = tiny(GretFlags::parse("capsule,aggregate"));
  auto last = tiny(GretFlags::parse("capsule"));
  nn::ParamStore sa(4), sl(4);
  Transformer ta(agg, sa), tl(last, sl);
  global::GlobalRepresentation ga(agg, sa), gl(last, sl);
  // same names, same values for the layer-2 capsules and pooling
  EXPECT_TRUE(bitwise_equal(sa.get("global.layer1.capsule.weight"), sl.get("global.layer1.capsule.weight")));
  std::vector<int> src{4, 5, 6, 7, 1};
  auto enc = ta.encode(src);
  auto s = ga.aggregate_layers(enc);
  auto alone = gl.aggregate_layers(enc);
  EXPECT_GT(ops::sum(ops::mul(s.per_layer[0], s.per_layer[0])).item(), 0.0);
  EXPECT_FALSE(bitwise_equal(s.final(), alone.final()));
}

TEST(GlobalRepresentation, PadContentInvariant) {
  auto cfg = tiny(GretFlags::parse("capsule,aggregate,gate"));
  GretModel model(cfg);
  std::vector<int> a{5, 6, 7, 1, 9, 10};
  std::vector<std::uint8_t> mask{0, 0, 0, 0, 1, 1};
  auto b = a;
  b[4] = 11;
  b[5] = 4;
  EXPECT_TRUE(bitwise_equal(*model.encode(a, mask).global_state, *model.encode(b, mask).global_state));
}

// ---- fusion ---------------------------------------------------------------

TEST(ContextGate, ZeroParametersGiveHalfGate) {
  nn::ParamStore store(1);
  auto gate = fusion::ContextGate::create(store, "g", 3);
  fill(gate.proj.weight, 0.0);
  std::mt19937_64 rng(1);
  auto r = random_tensor(rng, {2, 3});
  auto s = random_tensor(rng, {3});
  auto out = gate(r, s);
  for (double v : out.gate.data()) EXPECT_EQ(v, 0.5);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(out.fused.at({j, i}), r.at({j, i}) + 0.5 * s.at({i}));
    }
  }
}

TEST(ContextGate, ZeroGlobalIsIdentity) {
  nn::ParamStore store(2);
  auto gate = fusion::ContextGate::create(store, "g", 4);
  std::mt19937_64 rng(2);
  auto r = random_tensor(rng, {3, 4});
  auto out = gate(r, Tensor::zeros({4}));
  EXPECT_TRUE(bitwise_equal(out.fused, r));
  for (double v : out.gate.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(gate(r, Tensor::zeros({3})), ShapeError);
}

TEST(ContextGate, GradientCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    nn::ParamStore store(seed);
    auto gate = fusion::ContextGate::create(store, "g", 2);
    std::mt19937_64 rng(seed);
    auto r = random_tensor(rng, {3, 2}, -1, 1, true);
    auto s = random_tensor(rng, {2}, -1, 1, true);
    std::vector<Tensor> params{gate.proj.weight, gate.proj.bias, r, s};
    EXPECT_LE(finite_difference_check_params([&] { return probe(gate(r, s).fused); }, params), 1e-4);
  }
}

TEST(ContextGate, SaturatedGateMatchesPlainAddition) {
  nn::ParamStore store(3);
  auto gate = fusion::ContextGate::create(store, "g", 4);
  fill(gate.proj.bias, 30.0);
  std::mt19937_64 rng(3);
  auto r = random_tensor(rng, {3, 4});
  auto s = random_tensor(rng, {4});
  auto gated = fusion::fuse_states(r, s, GretFlags::parse("gate"), &gate);
  auto plain = fusion::fuse_states(r, s, GretFlags::parse("capsule"), nullptr);
  for (std::size_t i = 0; i < gated.numel(); ++i) EXPECT_NEAR(gated.data()[i], plain.data()[i], 1e-6);
  EXPECT_THROW(fusion::fuse_states(r, std::nullopt, GretFlags::parse("capsule"), nullptr), ContractError);
  EXPECT_TRUE(bitwise_equal(fusion::fuse_states(r, std::nullopt, {}, nullptr), r));
}

// ---- full model -----------------------------------------------------------

TEST(GretModel, FlagsOffMatchesBaseline) {
  auto cfg = tiny();
  cfg.seed = 17;
  GretModel model(cfg);
  nn::ParamStore store(17);
  Transformer base(cfg, store);
  EXPECT_EQ(model.params().size(), store.size());
  std::mt19937_64 rng(5);
  for (int b = 0; b < 10; ++b) {
    auto src = random_ids(rng, 2 + b % 5, cfg.vocab);
    auto y = random_ids(rng, 1 + b % 4, cfg.vocab);
    y[0] = tokens::kBos;
    auto expected = base.decode_step(y, base.encode(src)).logits;
    EXPECT_TRUE(bitwise_equal(model.logits(src, y), expected));
  }
}

TEST(GretModel, GateOnWithZeroGlobalMatchesBaseline) {
  auto cfg = tiny(GretFlags::parse("gate"));
  GretModel model(cfg);
  nn::ParamStore store(cfg.seed);
  Transformer base(cfg, store);
  std::vector<int> src{4, 5, 6, 1};
  std::vector<int> y{0, 4, 5};
  auto enc = model.encode(src);
  enc.global_state = Tensor::zeros({cfg.d_model});
  auto out = model.decode_step(y, enc);
  ASSERT_TRUE(out.fused.has_value());
  EXPECT_TRUE(bitwise_equal(out.logits, base.decode_step(y, base.encode(src)).logits));
}

TEST(GretModel, FusedPresentOnlyWithGate) {
  std::vector<int> src{4, 5, 6, 1};
  std::vector<int> y{0, 4};
  GretModel additive(tiny(GretFlags::parse("capsule")));
  EXPECT_FALSE(additive.decode_step(y, additive.encode(src)).fused.has_value());
  auto enc = additive.encode(src);
  enc.global_state.reset();
  EXPECT_THROW(additive.decode_step(y, enc), ContractError);
}

TEST(GretModel, GateParametersOnlyInFusion) {
  GretModel model(tiny(GretFlags::parse("capsule,aggregate,gate")));
  std::vector<int> src{4, 5, 6, 1};
  std::vector<int> y{0, 4, 5};
  auto enc = model.encode(src);
  // encoder-side results never depend on the gate
  auto before = *enc.global_state;
  fill(model.params().get("fusion.gate.weight"), 0.25);
  EXPECT_TRUE(bitwise_equal(*model.encode(src).global_state, before));
  auto with = model.decode_step(y, enc);
  EXPECT_TRUE(bitwise_equal(with.last_layer, model.transformer().decode_states(y, enc)));
}

TEST(GretModel, FullModelGradientCheck) {
  auto cfg = tiny(GretFlags::parse("capsule,aggregate,gate"));
  cfg.d_model = 4;
  cfg.ffn_hidden = 4;
  cfg.heads = 2;
  cfg.vocab = 6;
  cfg.capsules = 2;
  cfg.d_cap = 2;
  cfg.capsule_ffn_hidden = 3;
  GretModel model(cfg);
  std::vector<int> src{4, 5, 1};
  std::vector<int> y{0, 5};
  std::vector<Tensor> params;
  for (const auto& [_, t] : model.params().items()) params.push_back(t);
  EXPECT_LE(finite_difference_check_params([&] { return probe(model.logits(src, y)); }, params),
            1e-4);
}

}  // namespace
}  // namespace gret
