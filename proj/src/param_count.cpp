// SPDX-License-Identifier: Apache-2.0

#include "gret/param_count.hpp"

namespace gret {
namespace {

std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t ffn(std::size_t in, std::size_t hidden, std::size_t out) {
  return linear(in, hidden) + linear(hidden, out);
}

}  // namespace

ParamBreakdown param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, v = cfg.vocab, h = cfg.ffn_hidden;
  const std::size_t attention = 4 * linear(d, d);
  const std::size_t norm = 2 * d;

  ParamBreakdown b;
  if (cfg.tie_embeddings) {
    b.modules["embed"] = v * d;
    b.modules["output"] = v;
  } else {
    b.modules["embed"] = 2 * v * d;
    b.modules["output"] = linear(d, v);
  }
  b.modules["encoder"] = cfg.encoder_layers * (attention + 2 * norm + ffn(d, h, d));
  const std::size_t norms = cfg.joint_attention_ln ? 2 : 3;
  b.modules["decoder"] = cfg.decoder_layers * (2 * attention + norms * norm + ffn(d, h, d));

  std::size_t global = 0;
  if (cfg.flags.capsule) {
    const std::size_t layers = cfg.flags.aggregate ? cfg.encoder_layers : 1;
    const std::size_t dc = cfg.capsule_width(), ph = cfg.capsule_hidden();
    global += layers * (cfg.capsules * d * dc + ffn(dc, ph, dc) + ffn(dc, ph, d));
  }
  // GRU: three input maps with biases, three recurrent maps without
  if (cfg.flags.aggregate) global += 3 * linear(d, d) + 3 * d * d;
  if (global) b.modules["global"] = global;
  if (cfg.flags.gate) b.modules["fusion"] = linear(2 * d, d);

  for (const auto& [_, n] : b.modules) b.total += n;
  return b;
}

ParamBreakdown count_store(const nn::ParamStore& store) {
  ParamBreakdown b;
  for (const auto& [name, t] : store.items()) {
    b.modules[name.substr(0, name.find('.'))] += t.numel();
    b.total += t.numel();
  }
  return b;
}

}  // namespace gret
