// SPDX-License-Identifier: Apache-2.0
//
// Losses, Adam, the warm-up schedule and the training loop.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gret/model.hpp"
#include "gret/nn.hpp"
#include "gret/task.hpp"
#include "gret/tensor.hpp"

namespace gret::train {

/// Mean over non-pad targets of the smoothed negative log-likelihood.
/// Smoothing puts ε / (V - 1) on every non-pad id and 1 - ε on top of that
/// for the target. logits [J, V], targets [J].
Tensor sequence_loss(const Tensor& logits, std::span<const int> targets, double smoothing = 0.0);

/// Mean of independent binary cross-entropies; logits and labels share a shape.
Tensor binary_cross_entropy(const Tensor& logits, const Tensor& labels);

/// d^-0.5 · min(step^-0.5, step · warmup^-1.5), step >= 1.
double noam_rate(std::size_t d_model, std::size_t warmup, std::size_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter in `store` from its gradient.
  void step(nn::ParamStore& store, double lr);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  /// First and second moments keyed by parameter name.
  std::map<std::string, std::vector<double>>& first() { return m_; }
  std::map<std::string, std::vector<double>>& second() { return v_; }
  const std::map<std::string, std::vector<double>>& first() const { return m_; }
  const std::map<std::string, std::vector<double>>& second() const { return v_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainOptions {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double lr_scale = 1.0;
  /// Called after each step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
  /// Called every `checkpoint_every` steps (0 disables).
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t)> on_checkpoint;
};

/// Teacher-forced loss of one example, dropout taken from `drop`.
Tensor example_loss(const GretModel& model, const task::Example& ex, const nn::Dropout& drop = {});

/// Runs `opts.steps` optimizer steps after `adam.steps()`; batches and
/// dropout masks depend only on (model seed, step), so a resumed run follows
/// the same trajectory. Returns per-step mean batch loss.
std::vector<double> train(GretModel& model, Adam& adam, std::span<const task::Example> data,
                          const TrainOptions& opts);

/// Mean teacher-forced loss over a corpus (no gradients).
double evaluate_loss(const GretModel& model, std::span<const task::Example> data);

}  // namespace gret::train
