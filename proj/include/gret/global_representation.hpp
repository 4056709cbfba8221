// SPDX-License-Identifier: Apache-2.0
//
// Global sentence state from per-layer encoder states.
//
// Per layer m:  Ĥ_k = H^m W_k                     (one projection per capsule)
//               K capsules by dynamic routing over positions
//               ATP(U) = FFN_o(Σ_k a_k u_k),  a = softmax_k(FFN_q(mean_k u_k) · u_k)
// Across layers: s^m = GRU(ATP(U^m), s^{m-1}), s^0 = 0.
//
// Every reduction over source positions sums its terms in sorted order, so
// permuting positions (together with the mask) leaves results bitwise equal.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gret/config.hpp"
#include "gret/nn.hpp"
#include "gret/tensor.hpp"
#include "gret/transformer.hpp"

namespace gret::global {

/// Row-wise squash over the last axis: (‖t‖² / (1 + ‖t‖²)) t / ‖t‖.
/// Rows with ‖t‖ < 1e-12 map to exact zeros.
Tensor squash(const Tensor& t);

/// Sum that does not depend on the order of `terms` (sorts them in place).
double permutation_invariant_sum(std::span<double> terms);

/// Mean over unmasked rows of x [I, d] -> [d].
Tensor masked_mean(const Tensor& x, std::span<const std::uint8_t> blocked);

struct RoutingState {
  Tensor logits;    // B [K, I], after the final update
  Tensor capsules;  // U [K, d_cap]
  std::size_t iteration = 0;
  std::vector<Tensor> coefficients;  // c per iteration, each [K, I]
};

/// Ĥ [K, I, d_cap] for H [I, d_model] and a weight stack [K, d_model, d_cap].
Tensor transform_inputs(const Tensor& hidden, const Tensor& capsule_weights);

/// `iterations` rounds of: c_k = softmax_i(b_k) over unmasked positions;
/// u_k = squash(Σ_i c_ki ĥ^k_i); b_ki += ĥ^k_i · u_k. B starts at zero.
/// Differentiable through every iteration.
RoutingState dynamic_routing(const Tensor& hhat, std::span<const std::uint8_t> blocked,
                             std::size_t iterations);

struct AttentivePooling {
  nn::FeedForward query;   // d_cap -> hidden -> d_cap
  nn::FeedForward output;  // d_cap -> hidden -> d_model

  static AttentivePooling create(nn::ParamStore& store, const std::string& name,
                                 std::size_t d_cap, std::size_t hidden, std::size_t d_model);
  /// U [K, d_cap] -> [d_model]. `weights` receives a [K] when non-null.
  Tensor operator()(const Tensor& capsules, Tensor* weights = nullptr) const;
};

struct GlobalState {
  std::vector<Tensor> per_layer;  // s^1..s^M with aggregation, otherwise just s^M
  const Tensor& final() const { return per_layer.back(); }
};

/// Owns the capsule, pooling and GRU parameters selected by the config flags.
class GlobalRepresentation {
 public:
  GlobalRepresentation(const ModelConfig& cfg, nn::ParamStore& store);

  /// Capsule-free ablations pool with the masked mean of H^m instead of routing.
  GlobalState aggregate_layers(const EncoderOutput& enc) const;

  /// Routing for encoder layer `m` (0-based), exposed for inspection.
  RoutingState route_layer(const EncoderOutput& enc, std::size_t m) const;

  /// Layers that carry capsule parameters (all with aggregation, else the last).
  std::size_t first_capsule_layer() const;

 private:
  struct CapsuleLayer {
    Tensor weights;  // [K, d_model, d_cap]
    AttentivePooling pool;
  };

  Tensor pooled_layer(const EncoderOutput& enc, std::size_t m) const;

  ModelConfig cfg_;
  std::vector<CapsuleLayer> layers_;  // indexed by m - first_capsule_layer()
  std::optional<nn::GruCell> gru_;
};

}  // namespace gret::global
