// SPDX-License-Identifier: Apache-2.0

#include "gret/fusion.hpp"

#include "gret/ops.hpp"

namespace gret::fusion {
namespace {

Tensor tile_rows(const Tensor& global, std::size_t rows) {
  const std::size_t d = global.dim(0);
  return ops::broadcast_to(ops::reshape(global, {1, d}), {rows, d});
}

void check_widths(const Tensor& states, const Tensor& global, const char* op) {
  if (states.rank() != 2 || global.rank() != 1 || states.dim(1) != global.dim(0)) {
    throw ShapeError(std::string(op) + ": states " + shape_str(states.shape()) + " vs global " +
                     shape_str(global.shape()));
  }
}

}  // namespace

ContextGate ContextGate::create(nn::ParamStore& store, const std::string& name,
                                std::size_t d_model) {
  return {nn::Linear::create(store, name, 2 * d_model, d_model)};
}

GateOutput ContextGate::operator()(const Tensor& states, const Tensor& global) const {
  check_widths(states, global, "context_gate");
  if (states.dim(1) != proj.out_features()) {
    throw ShapeError("context_gate: width " + std::to_string(states.dim(1)) + " for a gate of width " +
                     std::to_string(proj.out_features()));
  }
  const auto s = tile_rows(global, states.dim(0));
  const Tensor parts[] = {states, s};
  GateOutput out;
  out.gate = ops::sigmoid(proj(ops::concat(parts, 1)));
  out.fused = ops::add(states, ops::mul(out.gate, s));
  return out;
}

Tensor fuse_states(const Tensor& states, const std::optional<Tensor>& global,
                   const GretFlags& flags, const ContextGate* gate) {
  if (!flags.any()) return states;
  if (!global) throw ContractError("fuse_states: global state required by flags " + flags.str());
  if (flags.gate) {
    if (!gate) throw ContractError("fuse_states: gate flag set without gate parameters");
    return (*gate)(states, *global).fused;
  }
  check_widths(states, *global, "fuse_states");
  return ops::add(states, tile_rows(*global, states.dim(0)));
}

}  // namespace gret::fusion
