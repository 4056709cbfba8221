// SPDX-License-Identifier: Apache-2.0
//
// Transformer plus the optional global representation and decoder fusion,
// all sharing one parameter store.

#pragma once

#include <optional>
#include <span>

#include "gret/config.hpp"
#include "gret/fusion.hpp"
#include "gret/global_representation.hpp"
#include "gret/nn.hpp"
#include "gret/transformer.hpp"

namespace gret {

class GretModel {
 public:
  explicit GretModel(const ModelConfig& cfg);

  GretModel(const GretModel&) = delete;
  GretModel& operator=(const GretModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const Transformer& transformer() const { return transformer_; }
  const global::GlobalRepresentation& global() const { return global_; }

  /// Encoder states, plus s^M when the flags call for it.
  EncoderOutput encode(std::span<const int> source, const nn::Dropout& drop = {}) const;
  EncoderOutput encode(std::span<const int> source, std::span<const std::uint8_t> blocked,
                       const nn::Dropout& drop = {}) const;

  /// Logits for every prefix position. Needs `enc.global_state` when flags are on.
  DecoderOutput decode_step(std::span<const int> prefix, const EncoderOutput& enc,
                            const nn::Dropout& drop = {}) const;

  /// encode + decode_step over a teacher-forced prefix.
  Tensor logits(std::span<const int> source, std::span<const int> prefix,
                const nn::Dropout& drop = {}) const;

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  Transformer transformer_;
  global::GlobalRepresentation global_;
  std::optional<fusion::ContextGate> gate_;
};

}  // namespace gret
