// SPDX-License-Identifier: Apache-2.0
//
// Context gate fusing the global state into the last decoder layer:
//   g_j = sigmoid(W_g [r_j; s] + b_g),  r̄_j = r_j + g_j ⊙ s

#pragma once

#include <optional>

#include "gret/config.hpp"
#include "gret/nn.hpp"
#include "gret/tensor.hpp"
#include "gret/transformer.hpp"

namespace gret::fusion {

struct GateOutput {
  Tensor gate;   // [J, d_model], strictly inside (0, 1)
  Tensor fused;  // [J, d_model]
};

struct ContextGate {
  nn::Linear proj;  // [2 d_model, d_model]

  static ContextGate create(nn::ParamStore& store, const std::string& name, std::size_t d_model);
  GateOutput operator()(const Tensor& states, const Tensor& global) const;
};

/// Decoder states after fusion, before the output projection.
///   gate on             -> r̄
///   global state, no gate -> r + s
///   no GRET flags       -> r (the same tensor)
Tensor fuse_states(const Tensor& states, const std::optional<Tensor>& global,
                   const GretFlags& flags, const ContextGate* gate);

}  // namespace gret::fusion
