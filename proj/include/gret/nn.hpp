// SPDX-License-Identifier: Apache-2.0
//
// Parameterized layers shared by the baseline Transformer and the global
// representation extensions.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gret/tensor.hpp"

namespace gret::nn {

enum class Init {
  kXavier,  // uniform in ±sqrt(6 / (fan_in + fan_out))
  kZeros,
  kOnes,
};

/// Named, seed-deterministic parameter collection. Iteration is by name.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Draws depend only on (seed, name, shape), never on creation order.
  Tensor create(const std::string& name, Shape shape, Init init);
  /// Adds an existing tensor (checkpoint loading). Marks it requires_grad.
  void insert(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& items() const { return params_; }

  void zero_grad();

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

/// Creates `name` in `store` with weights for rank >= 2 shapes and zeros for
/// rank-1 shapes (biases). Fan-in/out are the last two axes.
Tensor init_params(ParamStore& store, const std::string& name, Shape shape);

/// Stable 64-bit FNV-1a of a string.
std::uint64_t name_hash(std::string_view name);

/// Inverted dropout shared by every sublayer. Inactive when rate is 0 or no
/// generator is attached (evaluation).
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

Tensor dropout(const Tensor& x, const Dropout& ctx);

/// Boolean mask over the trailing axes of a tensor; true entries are excluded.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> blocked;

  bool empty() const { return blocked.empty(); }
  static Mask none() { return {}; }
  static Mask from(Shape shape, std::vector<std::uint8_t> blocked);
};

/// Row softmax over the last axis with max subtraction. Masked entries are
/// exactly 0. Throws ContractError for a fully masked row.
Tensor softmax(const Tensor& x, const Mask& mask = Mask::none());

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined

  static Linear create(ParamStore& store, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor scale;  // [d], ones
  Tensor shift;  // [d], zeros
  static constexpr double kEps = 1e-6;

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t d);
  Tensor operator()(const Tensor& x) const;
};

/// linear -> relu -> linear
struct FeedForward {
  Linear fc1, fc2;

  static FeedForward create(ParamStore& store, const std::string& name, std::size_t in,
                            std::size_t hidden, std::size_t out);
  Tensor operator()(const Tensor& x, const Dropout& drop = {}) const;
};

struct Embedding {
  Tensor table;  // [vocab, d]

  static Embedding create(ParamStore& store, const std::string& name, std::size_t vocab,
                          std::size_t d);
  Tensor operator()(std::span<const int> ids) const;
};

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t heads = 1;
  bool causal = false;

  void validate() const;
};

struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear q, k, v, o;

  static MultiHeadAttention create(ParamStore& store, const std::string& name,
                                   AttentionConfig cfg);

  /// query [Lq, d], key/value [Lk, d]. `key_blocked` (size Lk, or empty)
  /// excludes padded keys. Causal attention requires Lq == Lk. When
  /// `weights` is non-null it receives the [heads, Lq, Lk] attention weights.
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    std::span<const std::uint8_t> key_blocked = {}, const Dropout& drop = {},
                    Tensor* weights = nullptr) const;
};

/// Cho et al. GRU:
///   z = σ(x Wz + h Uz + bz), r = σ(x Wr + h Ur + br)
///   h~ = tanh(x Wh + (r ⊙ h) Uh + bh), h' = z ⊙ h + (1 - z) ⊙ h~
struct GruCell {
  Linear wz, uz, wr, ur, wh, uh;  // w* carry the biases

  static GruCell create(ParamStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& input, const Tensor& state) const;
};

}  // namespace gret::nn
