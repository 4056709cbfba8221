// SPDX-License-Identifier: Apache-2.0

#include "gret/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gret/ops.hpp"

namespace gret {

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<double> pe(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({length, d}, std::move(pe));
}

Transformer::Transformer(const ModelConfig& cfg, nn::ParamStore& store) : cfg_(cfg) {
  cfg_.validate();
  const auto d = cfg_.d_model, v = cfg_.vocab;
  if (cfg_.tie_embeddings) {
    src_embed_ = nn::Embedding::create(store, "embed.shared", v, d);
    tgt_embed_ = src_embed_;
    out_bias_ = store.create("output.bias", {v}, nn::Init::kZeros);
  } else {
    src_embed_ = nn::Embedding::create(store, "embed.source", v, d);
    tgt_embed_ = nn::Embedding::create(store, "embed.target", v, d);
    out_proj_ = nn::Linear::create(store, "output.proj", d, v);
  }
  const nn::AttentionConfig bidir{d, cfg_.heads, false};
  const nn::AttentionConfig causal{d, cfg_.heads, true};
  for (std::size_t m = 0; m < cfg_.encoder_layers; ++m) {
    const std::string p = "encoder." + std::to_string(m);
    encoder_.push_back({nn::MultiHeadAttention::create(store, p + ".self_attn", bidir),
                        nn::LayerNorm::create(store, p + ".ln1", d),
                        nn::LayerNorm::create(store, p + ".ln2", d),
                        nn::FeedForward::create(store, p + ".ffn", d, cfg_.ffn_hidden, d)});
  }
  for (std::size_t n = 0; n < cfg_.decoder_layers; ++n) {
    const std::string p = "decoder." + std::to_string(n);
    DecoderLayer layer{nn::MultiHeadAttention::create(store, p + ".self_attn", causal),
                       nn::MultiHeadAttention::create(store, p + ".cross_attn", bidir),
                       nn::LayerNorm::create(store, p + ".ln1", d),
                       nn::LayerNorm::create(store, p + ".ln2", d),
                       {},
                       nn::FeedForward::create(store, p + ".ffn", d, cfg_.ffn_hidden, d)};
    if (!cfg_.joint_attention_ln) layer.ln3 = nn::LayerNorm::create(store, p + ".ln3", d);
    decoder_.push_back(std::move(layer));
  }
}

void Transformer::check_ids(std::span<const int> ids, const char* what) const {
  if (ids.empty()) throw ContractError(std::string(what) + ": empty sequence");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw ContractError(std::string(what) + ": token id " + std::to_string(id) +
                          " outside vocabulary of " + std::to_string(cfg_.vocab));
    }
  }
}

Tensor Transformer::embed(const nn::Embedding& table, std::span<const int> ids,
                          const nn::Dropout& drop) const {
  auto x = ops::scale(table(ids), std::sqrt(static_cast<double>(cfg_.d_model)));
  x = ops::add(x, sinusoidal_positions(ids.size(), cfg_.d_model));
  return nn::dropout(x, drop);
}

EncoderOutput Transformer::encode(std::span<const int> source, const nn::Dropout& drop) const {
  std::vector<std::uint8_t> blocked(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) blocked[i] = source[i] == tokens::kPad;
  return encode(source, blocked, drop);
}

EncoderOutput Transformer::encode(std::span<const int> source,
                                  std::span<const std::uint8_t> blocked,
                                  const nn::Dropout& drop) const {
  check_ids(source, "encode");
  if (blocked.size() != source.size()) {
    throw ContractError("encode: mask length " + std::to_string(blocked.size()) + " for " +
                        std::to_string(source.size()) + " tokens");
  }
  EncoderOutput out;
  out.pad_mask.assign(blocked.begin(), blocked.end());
  if (std::all_of(blocked.begin(), blocked.end(), [](std::uint8_t b) { return b != 0; })) {
    throw ContractError("encode: sequence has no non-pad token");
  }

  auto x = embed(src_embed_, source, drop);
  if (encoder_.empty()) out.layers.push_back(x);
  for (const auto& layer : encoder_) {
    auto a = nn::dropout(layer.self_attn(x, x, x, out.pad_mask, drop), drop);
    x = layer.ln1(ops::add(x, a));
    auto f = nn::dropout(layer.ffn(x, drop), drop);
    x = layer.ln2(ops::add(x, f));
    out.layers.push_back(x);
  }
  return out;
}

Tensor Transformer::decode_states(std::span<const int> prefix, const EncoderOutput& enc,
                                  const nn::Dropout& drop) const {
  check_ids(prefix, "decode");
  const std::size_t expected_layers = cfg_.encoder_layers == 0 ? 1 : cfg_.encoder_layers;
  if (enc.layers.size() != expected_layers || enc.last().rank() != 2 ||
      enc.last().dim(1) != cfg_.d_model || enc.last().dim(0) != enc.length()) {
    throw ContractError("decode: encoder output does not match this model's configuration");
  }
  const Tensor& memory = enc.last();
  auto y = embed(tgt_embed_, prefix, drop);
  for (const auto& layer : decoder_) {
    auto sa = nn::dropout(layer.self_attn(y, y, y, {}, drop), drop);
    if (cfg_.joint_attention_ln) {
      auto ca = nn::dropout(layer.cross_attn(y, memory, memory, enc.pad_mask, drop), drop);
      y = layer.ln1(ops::add(ops::add(y, sa), ca));
      y = layer.ln2(ops::add(y, nn::dropout(layer.ffn(y, drop), drop)));
    } else {
      y = layer.ln1(ops::add(y, sa));
      auto ca = nn::dropout(layer.cross_attn(y, memory, memory, enc.pad_mask, drop), drop);
      y = layer.ln2(ops::add(y, ca));
      y = layer.ln3(ops::add(y, nn::dropout(layer.ffn(y, drop), drop)));
    }
  }
  return y;
}

Tensor Transformer::output_logits(const Tensor& states) const {
  if (states.rank() < 1 || states.shape().back() != cfg_.d_model) {
    throw ShapeError("output_logits: states " + shape_str(states.shape()) + " for d_model " +
                     std::to_string(cfg_.d_model));
  }
  if (cfg_.tie_embeddings) {
    return ops::affine(states, ops::transpose(tgt_embed_.table), out_bias_);
  }
  return out_proj_(states);
}

DecoderOutput Transformer::decode_step(std::span<const int> prefix, const EncoderOutput& enc,
                                       const nn::Dropout& drop) const {
  DecoderOutput out;
  out.last_layer = decode_states(prefix, enc, drop);
  out.logits = output_logits(out.last_layer);
  return out;
}

}  // namespace gret
