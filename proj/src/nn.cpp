// SPDX-License-Identifier: Apache-2.0

#include "gret/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gret/ops.hpp"

namespace gret::nn {

using autodiff::grad_of;
using autodiff::make_result;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
}

}  // namespace

std::uint64_t name_hash(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor ParamStore::create(const std::string& name, Shape shape, Init init) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
  const std::size_t n = numel_of(shape);
  std::vector<double> data(n, init == Init::kOnes ? 1.0 : 0.0);
  if (init == Init::kXavier) {
    if (shape.size() < 2) throw ContractError("ParamStore: xavier init needs rank >= 2 for '" + name + "'");
    const double fan_in = static_cast<double>(shape[shape.size() - 2]);
    const double fan_out = static_cast<double>(shape.back());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64(name_hash(name))));
    for (auto& v : data) v = (2.0 * unit_double(rng()) - 1.0) * bound;
  }
  auto t = Tensor::from(std::move(shape), std::move(data), true);
  params_.emplace(name, t);
  return t;
}

void ParamStore::insert(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  params_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Tensor init_params(ParamStore& store, const std::string& name, Shape shape) {
  const Init init = shape.size() >= 2 ? Init::kXavier : Init::kZeros;
  return store.create(name, std::move(shape), init);
}

Tensor dropout(const Tensor& x, const Dropout& ctx) {
  if (!ctx.active()) return x;
  const double keep = 1.0 - ctx.rate;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = unit_double((*ctx.rng)()) < keep ? 1.0 / keep : 0.0;
  return ops::mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Mask Mask::from(Shape shape, std::vector<std::uint8_t> blocked) {
  if (numel_of(shape) != blocked.size()) {
    throw ShapeError("Mask: shape " + shape_str(shape) + " does not match " +
                     std::to_string(blocked.size()) + " entries");
  }
  return Mask{std::move(shape), std::move(blocked)};
}

Tensor softmax(const Tensor& x, const Mask& mask) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::size_t mask_rows = 0;
  if (!mask.empty()) {
    const auto& ms = mask.shape;
    bool ok = !ms.empty() && ms.size() <= x.rank();
    for (std::size_t i = 0; ok && i < ms.size(); ++i) {
      ok = ms[ms.size() - 1 - i] == x.shape()[x.rank() - 1 - i];
    }
    if (!ok) {
      throw ShapeError("softmax: mask shape " + shape_str(ms) + " incompatible with " +
                       shape_str(x.shape()));
    }
    mask_rows = mask.blocked.size() / n;
  }
  const auto in = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * n;
    double* yr = out.data() + r * n;
    const std::uint8_t* mr = mask.empty() ? nullptr : mask.blocked.data() + (r % mask_rows) * n;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!mr || !mr[j]) peak = std::max(peak, xr[j]);
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      throw ContractError("softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mr && mr[j]) continue;
      yr[j] = std::exp(xr[j] - peak);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  return make_result(x.shape(), std::move(out), {x},
                     [n, rows](const TensorImpl& o, std::span<const ImplPtr> inp) {
                       auto gx = grad_of(inp[0]);
                       if (gx.empty()) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = o.data.data() + r * n;
                         const double* g = o.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
                       }
                     });
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in,
                      std::size_t out, bool with_bias) {
  Linear l;
  l.weight = store.create(name + ".weight", {in, out}, Init::kXavier);
  if (with_bias) l.bias = store.create(name + ".bias", {out}, Init::kZeros);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return ops::affine(x, weight, bias); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t d) {
  if (d < 2) throw ContractError("LayerNorm: width must be >= 2");
  return {store.create(name + ".scale", {d}, Init::kOnes),
          store.create(name + ".shift", {d}, Init::kZeros)};
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  const std::size_t d = scale.numel();
  if (x.shape().back() != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto g = scale.data();
  const auto b = shift.data();
  // Normalized core and per-row inverse std, kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * g[j] + b[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, scale, shift},
      [d, rows, xhat, inv_std](const TensorImpl& o, std::span<const ImplPtr> inp) {
        auto gx = grad_of(inp[0]);
        auto gg = grad_of(inp[1]);
        auto gb = grad_of(inp[2]);
        const auto& gamma = inp[1]->data;
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* go = o.grad.data() + r * d;
          const double* h = xhat->data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            if (!gg.empty()) gg[j] += go[j] * h[j];
            if (!gb.empty()) gb[j] += go[j];
          }
          if (gx.empty()) continue;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = go[j] * gamma[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * h[j];
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += (*inv_std)[r] * (dh[j] - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
          }
        }
      });
}

FeedForward FeedForward::create(ParamStore& store, const std::string& name, std::size_t in,
                                std::size_t hidden, std::size_t out) {
  if (hidden < 1) throw ContractError("FeedForward: hidden width must be >= 1");
  return {Linear::create(store, name + ".fc1", in, hidden),
          Linear::create(store, name + ".fc2", hidden, out)};
}

Tensor FeedForward::operator()(const Tensor& x, const Dropout& drop) const {
  return fc2(dropout(ops::relu(fc1(x)), drop));
}

Embedding Embedding::create(ParamStore& store, const std::string& name, std::size_t vocab,
                            std::size_t d) {
  return {store.create(name + ".table", {vocab, d}, Init::kXavier)};
}

Tensor Embedding::operator()(std::span<const int> ids) const { return ops::gather_rows(table, ids); }

void AttentionConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ContractError("AttentionConfig: d_model " + std::to_string(d_model) +
                        " must be a positive multiple of heads " + std::to_string(heads));
  }
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name,
                                              AttentionConfig cfg) {
  cfg.validate();
  const auto d = cfg.d_model;
  return {cfg, Linear::create(store, name + ".q", d, d), Linear::create(store, name + ".k", d, d),
          Linear::create(store, name + ".v", d, d), Linear::create(store, name + ".o", d, d)};
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      std::span<const std::uint8_t> key_blocked,
                                      const Dropout& drop, Tensor* weights) const {
  const std::size_t d = cfg.d_model, h = cfg.heads, dh = d / h;
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.dim(1) != d ||
      key.dim(1) != d || value.shape() != key.shape()) {
    throw ShapeError("attention: query " + shape_str(query.shape()) + ", key " +
                     shape_str(key.shape()) + ", value " + shape_str(value.shape()) +
                     " for d_model " + std::to_string(d));
  }
  const std::size_t lq = query.dim(0), lk = key.dim(0);
  if (!key_blocked.empty() && key_blocked.size() != lk) {
    throw ShapeError("attention: key mask of length " + std::to_string(key_blocked.size()) +
                     " for " + std::to_string(lk) + " keys");
  }
  if (cfg.causal && lq != lk) throw ContractError("attention: causal mode needs equal lengths");

  Mask mask;
  if (cfg.causal || !key_blocked.empty()) {
    std::vector<std::uint8_t> blocked(lq * lk, 0);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        blocked[i * lk + j] = (cfg.causal && j > i) || (!key_blocked.empty() && key_blocked[j]);
      }
    }
    mask = Mask::from({lq, lk}, std::move(blocked));
  }

  auto split = [&](const Tensor& t, std::size_t len, std::vector<std::size_t> order) {
    return ops::permute(ops::reshape(t, {len, h, dh}), order);
  };
  auto qh = split(q(query), lq, {1, 0, 2});  // [h, lq, dh]
  auto kt = split(k(key), lk, {1, 2, 0});    // [h, dh, lk]
  auto vh = split(v(value), lk, {1, 0, 2});  // [h, lk, dh]
  auto scores = ops::scale(ops::bmm(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto attn = softmax(scores, mask);
  if (weights) *weights = attn;
  auto ctx = ops::bmm(dropout(attn, drop), vh);  // [h, lq, dh]
  return o(ops::reshape(ops::permute(ctx, {1, 0, 2}), {lq, d}));
}

GruCell GruCell::create(ParamStore& store, const std::string& name, std::size_t width) {
  GruCell g;
  g.wz = Linear::create(store, name + ".wz", width, width);
  g.uz = Linear::create(store, name + ".uz", width, width, false);
  g.wr = Linear::create(store, name + ".wr", width, width);
  g.ur = Linear::create(store, name + ".ur", width, width, false);
  g.wh = Linear::create(store, name + ".wh", width, width);
  g.uh = Linear::create(store, name + ".uh", width, width, false);
  return g;
}

Tensor GruCell::operator()(const Tensor& input, const Tensor& state) const {
  if (input.shape() != state.shape() || input.shape().back() != wz.in_features()) {
    throw ShapeError("gru_cell: input " + shape_str(input.shape()) + " vs state " +
                     shape_str(state.shape()));
  }
  auto z = ops::sigmoid(ops::add(wz(input), uz(state)));
  auto r = ops::sigmoid(ops::add(wr(input), ur(state)));
  auto candidate = ops::tanh(ops::add(wh(input), uh(ops::mul(r, state))));
  // z*h + (1-z)*h~  ==  h~ + z*(h - h~)
  return ops::add(candidate, ops::mul(z, ops::sub(state, candidate)));
}

}  // namespace gret::nn
