// SPDX-License-Identifier: Apache-2.0

#include "gret/model.hpp"

namespace gret {

GretModel::GretModel(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      store_(cfg.seed),
      transformer_(cfg_, store_),
      global_(cfg_, store_) {
  if (cfg_.flags.gate) gate_ = fusion::ContextGate::create(store_, "fusion.gate", cfg_.d_model);
}

EncoderOutput GretModel::encode(std::span<const int> source, const nn::Dropout& drop) const {
  auto enc = transformer_.encode(source, drop);
  if (cfg_.uses_global_state()) enc.global_state = global_.aggregate_layers(enc).final();
  return enc;
}

EncoderOutput GretModel::encode(std::span<const int> source,
                                std::span<const std::uint8_t> blocked,
                                const nn::Dropout& drop) const {
  auto enc = transformer_.encode(source, blocked, drop);
  if (cfg_.uses_global_state()) enc.global_state = global_.aggregate_layers(enc).final();
  return enc;
}

DecoderOutput GretModel::decode_step(std::span<const int> prefix, const EncoderOutput& enc,
                                     const nn::Dropout& drop) const {
  DecoderOutput out;
  out.last_layer = transformer_.decode_states(prefix, enc, drop);
  if (!cfg_.uses_global_state()) {
    out.logits = transformer_.output_logits(out.last_layer);
    return out;
  }
  auto states = fusion::fuse_states(out.last_layer, enc.global_state, cfg_.flags,
                                    gate_ ? &*gate_ : nullptr);
  if (cfg_.flags.gate) out.fused = states;
  out.logits = transformer_.output_logits(states);
  return out;
}

Tensor GretModel::logits(std::span<const int> source, std::span<const int> prefix,
                         const nn::Dropout& drop) const {
  return decode_step(prefix, encode(source, drop), drop).logits;
}

}  // namespace gret
