// SPDX-License-Identifier: Apache-2.0
//
// Baseline Transformer encoder-decoder.
//
// Encoder layer m:  X = LN(X + SelfAttn(X));  H^m = LN(X + FFN(X))
// Decoder layer, literal layout (default):
//   Y = LN(Y + SelfAttn_causal(Y) + CrossAttn(Y, H^M));  R = LN(Y + FFN(Y))
// Decoder layer, per-sublayer layout (joint_attention_ln = false):
//   Y = LN(Y + SelfAttn_causal(Y)); Y = LN(Y + CrossAttn(Y, H^M)); R = LN(Y + FFN(Y))

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gret/config.hpp"
#include "gret/nn.hpp"
#include "gret/tensor.hpp"

namespace gret {

struct EncoderOutput {
  /// H^1..H^M, each [I, d_model]. With zero encoder layers this holds only the
  /// embedding output.
  std::vector<Tensor> layers;
  /// One entry per source position; 1 marks padding.
  std::vector<std::uint8_t> pad_mask;
  /// s^M, filled by the global representation when the model uses one.
  std::optional<Tensor> global_state;

  const Tensor& last() const { return layers.back(); }
  std::size_t length() const { return pad_mask.size(); }
};

struct DecoderOutput {
  Tensor last_layer;            // R^N, [J, d_model]
  std::optional<Tensor> fused;  // present iff the context gate is enabled
  Tensor logits;                // [J, V]
};

/// Sinusoidal position table [length, d].
Tensor sinusoidal_positions(std::size_t length, std::size_t d);

class Transformer {
 public:
  /// Creates every baseline parameter in `store` (names are the same for the
  /// baseline and for the extended model).
  Transformer(const ModelConfig& cfg, nn::ParamStore& store);

  const ModelConfig& config() const { return cfg_; }

  /// `source` ids, PAD positions are masked. Needs at least one real token.
  EncoderOutput encode(std::span<const int> source, const nn::Dropout& drop = {}) const;
  /// Explicit mask (1 = padding), same length as `source`.
  EncoderOutput encode(std::span<const int> source, std::span<const std::uint8_t> blocked,
                       const nn::Dropout& drop = {}) const;

  /// R^N for a decoder prefix (BOS first).
  Tensor decode_states(std::span<const int> prefix, const EncoderOutput& enc,
                       const nn::Dropout& drop = {}) const;

  /// Projection of decoder states to vocabulary logits.
  Tensor output_logits(const Tensor& states) const;

  /// decode_states followed by output_logits.
  DecoderOutput decode_step(std::span<const int> prefix, const EncoderOutput& enc,
                            const nn::Dropout& drop = {}) const;

 private:
  struct EncoderLayer {
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln1, ln2;
    nn::FeedForward ffn;
  };
  struct DecoderLayer {
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::LayerNorm ln1, ln2, ln3;  // ln3 only in the per-sublayer layout
    nn::FeedForward ffn;
  };

  Tensor embed(const nn::Embedding& table, std::span<const int> ids,
               const nn::Dropout& drop) const;
  void check_ids(std::span<const int> ids, const char* what) const;

  ModelConfig cfg_;
  nn::Embedding src_embed_, tgt_embed_;
  nn::Linear out_proj_;    // untied
  Tensor out_bias_;        // tied: logits = R E^T + b
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

}  // namespace gret
