// SPDX-License-Identifier: Apache-2.0

#include "gret/global_representation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gret/ops.hpp"

namespace gret::global {

using autodiff::grad_of;
using autodiff::make_result;

namespace {

constexpr double kSquashZero = 1e-12;

void check_mask(std::span<const std::uint8_t> blocked, std::size_t positions, const char* op) {
  if (blocked.size() != positions) {
    throw ShapeError(std::string(op) + ": mask of length " + std::to_string(blocked.size()) +
                     " for " + std::to_string(positions) + " positions");
  }
  if (std::all_of(blocked.begin(), blocked.end(), [](std::uint8_t b) { return b != 0; })) {
    throw ContractError(std::string(op) + ": every position is masked");
  }
}

// Softmax of each row of B [K, I] over unmasked positions.
Tensor routing_softmax(const Tensor& logits, std::span<const std::uint8_t> blocked) {
  const std::size_t k = logits.dim(0), n = logits.dim(1);
  const auto b = logits.data();
  std::vector<double> out(k * n, 0.0);
  std::vector<double> terms;
  for (std::size_t r = 0; r < k; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!blocked[i]) peak = std::max(peak, b[r * n + i]);
    }
    terms.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (blocked[i]) continue;
      out[r * n + i] = std::exp(b[r * n + i] - peak);
      terms.push_back(out[r * n + i]);
    }
    const double total = permutation_invariant_sum(terms);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] /= total;
  }
  return make_result({k, n}, std::move(out), {logits},
                     [k, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto gb = grad_of(in[0]);
                       if (gb.empty()) return;
                       for (std::size_t r = 0; r < k; ++r) {
                         const double* y = o.data.data() + r * n;
                         const double* g = o.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
                         for (std::size_t i = 0; i < n; ++i) gb[r * n + i] += y[i] * (g[i] - dot);
                       }
                     });
}

// S[k, :] = Σ_{i unmasked} C[k, i] Ĥ[k, i, :]
Tensor weighted_position_sum(const Tensor& coeff, const Tensor& hhat,
                             std::span<const std::uint8_t> blocked) {
  const std::size_t k = hhat.dim(0), n = hhat.dim(1), w = hhat.dim(2);
  const auto c = coeff.data();
  const auto h = hhat.data();
  std::vector<double> out(k * w);
  std::vector<double> terms;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      terms.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (!blocked[i]) terms.push_back(c[r * n + i] * h[(r * n + i) * w + j]);
      }
      out[r * w + j] = permutation_invariant_sum(terms);
    }
  }
  auto mask = std::make_shared<std::vector<std::uint8_t>>(blocked.begin(), blocked.end());
  return make_result({k, w}, std::move(out), {coeff, hhat},
                     [k, n, w, mask](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto gc = grad_of(in[0]);
                       auto gh = grad_of(in[1]);
                       const auto& c = in[0]->data;
                       const auto& h = in[1]->data;
                       for (std::size_t r = 0; r < k; ++r) {
                         const double* g = o.grad.data() + r * w;
                         for (std::size_t i = 0; i < n; ++i) {
                           if ((*mask)[i]) continue;
                           const double* hv = h.data() + (r * n + i) * w;
                           if (!gc.empty()) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < w; ++j) dot += g[j] * hv[j];
                             gc[r * n + i] += dot;
                           }
                           if (!gh.empty()) {
                             double* dst = gh.data() + (r * n + i) * w;
                             for (std::size_t j = 0; j < w; ++j) dst[j] += g[j] * c[r * n + i];
                           }
                         }
                       }
                     });
}

}  // namespace

double permutation_invariant_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

Tensor squash(const Tensor& t) {
  const std::size_t w = t.shape().back();
  const std::size_t rows = t.numel() / w;
  const auto x = t.data();
  std::vector<double> out(t.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < w; ++j) sq += x[r * w + j] * x[r * w + j];
    const double norm = std::sqrt(sq);
    if (norm < kSquashZero) continue;
    const double factor = norm / (1.0 + sq);
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x[r * w + j] * factor;
  }
  return make_result(t.shape(), std::move(out), {t},
                     [rows, w](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto gx = grad_of(in[0]);
                       if (gx.empty()) return;
                       const auto& x = in[0]->data;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = x.data() + r * w;
                         const double* g = o.grad.data() + r * w;
                         double sq = 0.0, gx_dot = 0.0;
                         for (std::size_t j = 0; j < w; ++j) {
                           sq += xr[j] * xr[j];
                           gx_dot += g[j] * xr[j];
                         }
                         const double norm = std::sqrt(sq);
                         if (norm < kSquashZero) continue;  // the map is O(‖t‖²) at the origin
                         const double f = norm / (1.0 + sq);
                         // f'(n) / n with f(n) = n / (1 + n²)
                         const double df_over_n = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * norm);
                         for (std::size_t j = 0; j < w; ++j) {
                           gx[r * w + j] += f * g[j] + xr[j] * df_over_n * gx_dot;
                         }
                       }
                     });
}

Tensor masked_mean(const Tensor& x, std::span<const std::uint8_t> blocked) {
  if (x.rank() != 2) throw ShapeError("masked_mean: expected [I, d], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), w = x.dim(1);
  check_mask(blocked, n, "masked_mean");
  const double count = static_cast<double>(std::count(blocked.begin(), blocked.end(), 0));
  const auto v = x.data();
  std::vector<double> out(w);
  std::vector<double> terms;
  for (std::size_t j = 0; j < w; ++j) {
    terms.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (!blocked[i]) terms.push_back(v[i * w + j]);
    }
    out[j] = permutation_invariant_sum(terms) / count;
  }
  auto mask = std::make_shared<std::vector<std::uint8_t>>(blocked.begin(), blocked.end());
  return make_result({w}, std::move(out), {x},
                     [n, w, count, mask](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto gx = grad_of(in[0]);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < n; ++i) {
                         if ((*mask)[i]) continue;
                         for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += o.grad[j] / count;
                       }
                     });
}

Tensor transform_inputs(const Tensor& hidden, const Tensor& capsule_weights) {
  if (hidden.rank() != 2 || capsule_weights.rank() != 3 ||
      hidden.dim(1) != capsule_weights.dim(1)) {
    throw ShapeError("transform_inputs: hidden " + shape_str(hidden.shape()) + " vs weights " +
                     shape_str(capsule_weights.shape()));
  }
  const std::size_t k = capsule_weights.dim(0), n = hidden.dim(0), d = hidden.dim(1);
  auto tiled = ops::broadcast_to(ops::reshape(hidden, {1, n, d}), {k, n, d});
  return ops::bmm(tiled, capsule_weights);
}

RoutingState dynamic_routing(const Tensor& hhat, std::span<const std::uint8_t> blocked,
                             std::size_t iterations) {
  if (iterations == 0) throw ContractError("dynamic_routing: needs at least one iteration");
  if (hhat.rank() != 3) throw ShapeError("dynamic_routing: expected [K, I, d], got " + shape_str(hhat.shape()));
  const std::size_t k = hhat.dim(0), n = hhat.dim(1), w = hhat.dim(2);
  check_mask(blocked, n, "dynamic_routing");

  RoutingState state;
  state.logits = Tensor::zeros({k, n});
  for (std::size_t it = 0; it < iterations; ++it) {
    auto c = routing_softmax(state.logits, blocked);
    state.coefficients.push_back(c);
    state.capsules = squash(weighted_position_sum(c, hhat, blocked));
    // b_ki += ĥ^k_i · u_k
    auto agreement = ops::bmm(hhat, ops::reshape(state.capsules, {k, w, 1}));
    state.logits = ops::add(state.logits, ops::reshape(agreement, {k, n}));
    state.iteration = it + 1;
  }
  return state;
}

AttentivePooling AttentivePooling::create(nn::ParamStore& store, const std::string& name,
                                          std::size_t d_cap, std::size_t hidden,
                                          std::size_t d_model) {
  return {nn::FeedForward::create(store, name + ".query", d_cap, hidden, d_cap),
          nn::FeedForward::create(store, name + ".output", d_cap, hidden, d_model)};
}

Tensor AttentivePooling::operator()(const Tensor& capsules, Tensor* weights) const {
  if (capsules.rank() != 2) throw ShapeError("attentive_pool: expected [K, d_cap], got " + shape_str(capsules.shape()));
  const std::size_t k = capsules.dim(0), w = capsules.dim(1);
  auto query_vec = query(ops::mean_axis(capsules, 0));                               // [d_cap]
  auto scores = ops::reshape(ops::matmul(capsules, ops::reshape(query_vec, {w, 1})), {k});
  auto a = nn::softmax(scores);
  if (weights) *weights = a;
  auto pooled = ops::reshape(ops::matmul(ops::reshape(a, {1, k}), capsules), {w});
  return output(pooled);
}

GlobalRepresentation::GlobalRepresentation(const ModelConfig& cfg, nn::ParamStore& store)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.flags.capsule) {
    for (std::size_t m = first_capsule_layer(); m < cfg_.encoder_layers; ++m) {
      const std::string p = "global.layer" + std::to_string(m);
      layers_.push_back(
          {store.create(p + ".capsule.weight", {cfg_.capsules, cfg_.d_model, cfg_.capsule_width()},
                        nn::Init::kXavier),
           AttentivePooling::create(store, p + ".pool", cfg_.capsule_width(),
                                    cfg_.capsule_hidden(), cfg_.d_model)});
    }
  }
  if (cfg_.flags.aggregate) gru_ = nn::GruCell::create(store, "global.gru", cfg_.d_model);
}

std::size_t GlobalRepresentation::first_capsule_layer() const {
  return cfg_.flags.aggregate ? 0 : cfg_.encoder_layers - 1;
}

RoutingState GlobalRepresentation::route_layer(const EncoderOutput& enc, std::size_t m) const {
  if (!cfg_.flags.capsule || m < first_capsule_layer() || m >= cfg_.encoder_layers) {
    throw ContractError("route_layer: layer " + std::to_string(m) + " has no capsules");
  }
  const auto& layer = layers_[m - first_capsule_layer()];
  return dynamic_routing(transform_inputs(enc.layers[m], layer.weights), enc.pad_mask,
                         cfg_.routing_iters);
}

Tensor GlobalRepresentation::pooled_layer(const EncoderOutput& enc, std::size_t m) const {
  if (!cfg_.flags.capsule) return masked_mean(enc.layers[m], enc.pad_mask);
  const auto routed = route_layer(enc, m);
  return layers_[m - first_capsule_layer()].pool(routed.capsules);
}

GlobalState GlobalRepresentation::aggregate_layers(const EncoderOutput& enc) const {
  if (!cfg_.flags.any()) throw ContractError("aggregate_layers: no GRET flag enabled");
  if (cfg_.encoder_layers == 0 || enc.layers.size() != cfg_.encoder_layers) {
    throw ContractError("aggregate_layers: encoder output must hold one state per layer");
  }
  GlobalState out;
  if (!cfg_.flags.aggregate) {
    out.per_layer.push_back(pooled_layer(enc, cfg_.encoder_layers - 1));
    return out;
  }
  auto state = Tensor::zeros({cfg_.d_model});
  for (std::size_t m = 0; m < cfg_.encoder_layers; ++m) {
    state = (*gru_)(pooled_layer(enc, m), state);
    out.per_layer.push_back(state);
  }
  return out;
}

}  // namespace gret::global
