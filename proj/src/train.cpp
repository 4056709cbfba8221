// SPDX-License-Identifier: Apache-2.0

#include "gret/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "gret/config.hpp"
#include "gret/ops.hpp"

namespace gret::train {

using autodiff::grad_of;
using autodiff::make_result;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Tensor sequence_loss(const Tensor& logits, std::span<const int> targets, double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("sequence_loss: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (smoothing < 0.0 || smoothing > 0.3) throw ContractError("sequence_loss: smoothing outside [0, 0.3]");
  const std::size_t j_len = logits.dim(0), v = logits.dim(1);
  if (v < 2 || static_cast<std::size_t>(tokens::kPad) >= v) throw ShapeError("sequence_loss: vocabulary too small");
  const std::size_t count = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int t) { return t != tokens::kPad; }));
  if (count == 0) throw ContractError("sequence_loss: every target is padding");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) throw ContractError("sequence_loss: target id out of range");
  }

  const double off = smoothing / static_cast<double>(v - 1);
  const double on = 1.0 - smoothing + off;
  auto probs = std::make_shared<std::vector<double>>(j_len * v, 0.0);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t j = 0; j < j_len; ++j) {
    if (targets[j] == tokens::kPad) continue;
    const double* row = z.data() + j * v;
    const double peak = *std::max_element(row, row + v);
    double denom = 0.0;
    for (std::size_t k = 0; k < v; ++k) denom += std::exp(row[k] - peak);
    const double lse = peak + std::log(denom);
    double expected = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      (*probs)[j * v + k] = std::exp(row[k] - lse);
      if (static_cast<int>(k) == tokens::kPad) continue;
      const double q = static_cast<int>(k) == targets[j] ? on : off;
      expected += q * row[k];
    }
    total += lse - expected;
  }
  total /= static_cast<double>(count);
  return make_result({1}, {total}, {logits},
                     [probs, tgt, j_len, v, count, on, off](const TensorImpl& o,
                                                            std::span<const ImplPtr> in) {
                       auto g = grad_of(in[0]);
                       if (g.empty()) return;
                       const double scale = o.grad[0] / static_cast<double>(count);
                       for (std::size_t j = 0; j < j_len; ++j) {
                         if ((*tgt)[j] == tokens::kPad) continue;
                         for (std::size_t k = 0; k < v; ++k) {
                           double q = 0.0;
                           if (static_cast<int>(k) != tokens::kPad) q = static_cast<int>(k) == (*tgt)[j] ? on : off;
                           g[j * v + k] += scale * ((*probs)[j * v + k] - q);
                         }
                       }
                     });
}

Tensor binary_cross_entropy(const Tensor& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape()) {
    throw ShapeError("binary_cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  }
  const auto z = logits.data();
  const auto y = labels.data();
  const std::size_t n = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // log(1 + e^z) - y z, stable for either sign
    total += std::max(z[i], 0.0) - y[i] * z[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  auto lab = std::make_shared<std::vector<double>>(y.begin(), y.end());
  return make_result({1}, {total / static_cast<double>(n)}, {logits},
                     [lab, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto g = grad_of(in[0]);
                       if (g.empty()) return;
                       const auto& z = in[0]->data;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double p = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                                    : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                         g[i] += o.grad[0] * (p - (*lab)[i]) / static_cast<double>(n);
                       }
                     });
}

double noam_rate(std::size_t d_model, std::size_t warmup, std::size_t step) {
  if (step == 0 || warmup == 0) throw ContractError("noam_rate: step and warmup must be positive");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

void Adam::step(nn::ParamStore& store, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, param] : store.items()) {
    if (!param.has_grad()) continue;
    const auto g = param.impl()->grad;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != g.size()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    Tensor handle = param;
    auto w = handle.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

Tensor example_loss(const GretModel& model, const task::Example& ex, const nn::Dropout& drop) {
  if (ex.target.size() < 2) throw ContractError("example_loss: target needs BOS and one more token");
  std::span<const int> tgt(ex.target);
  auto logits = model.logits(ex.source, tgt.first(tgt.size() - 1), drop);
  return sequence_loss(logits, tgt.subspan(1), model.config().label_smoothing);
}

std::vector<double> train(GretModel& model, Adam& adam, std::span<const task::Example> data,
                          const TrainOptions& opts) {
  if (data.empty()) throw ContractError("train: empty training set");
  if (opts.batch_size == 0) throw ContractError("train: batch size must be positive");
  const auto& cfg = model.config();
  std::vector<double> losses;
  losses.reserve(opts.steps);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const double inv_batch = 1.0 / static_cast<double>(opts.batch_size);
  for (std::size_t n = 0; n < opts.steps; ++n) {
    const std::size_t step = adam.steps() + 1;
    std::mt19937_64 rng(mix(cfg.seed ^ mix(step)));
    nn::Dropout drop{cfg.dropout, cfg.dropout > 0 ? &rng : nullptr};
    model.params().zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < opts.batch_size; ++b) {
      const auto& ex = data[pick(rng)];
      auto loss = ops::scale(example_loss(model, ex, drop), inv_batch);
      batch_loss += loss.item();
      backward(loss);
    }
    adam.step(model.params(), opts.lr_scale * noam_rate(cfg.d_model, cfg.warmup_steps, step));
    losses.push_back(batch_loss);
    if (opts.on_step) opts.on_step(step, batch_loss);
    if (opts.checkpoint_every && opts.on_checkpoint && step % opts.checkpoint_every == 0) {
      opts.on_checkpoint(step);
    }
  }
  return losses;
}

double evaluate_loss(const GretModel& model, std::span<const task::Example> data) {
  if (data.empty()) throw ContractError("evaluate_loss: empty corpus");
  autodiff::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& ex : data) total += example_loss(model, ex).item();
  return total / static_cast<double>(data.size());
}

}  // namespace gret::train
