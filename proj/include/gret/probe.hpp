// SPDX-License-Identifier: Apache-2.0
//
// Bag-of-words probing of frozen sentence representations.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "gret/model.hpp"
#include "gret/task.hpp"

namespace gret::probe {

enum class Pooling {
  kGlobal,   // s^M
  kAverage,  // masked mean of H^M
  kLast,     // last non-pad position of H^M
};

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& name);

/// [d_model] representation of one source; ContractError for kGlobal on a
/// model without a global state.
Tensor pooled_state(const GretModel& model, std::span<const int> source, Pooling pooling);

/// Distinct content ids of a target sentence, ascending.
std::vector<int> bag_of(std::span<const int> target);

/// |top-k(scores) ∩ bag| / min(k, |bag|), ranking only non-reserved ids
/// (ties go to the lower id).
double precision_at_k(std::span<const double> scores, std::span<const int> bag, std::size_t k);

struct ProbeOptions {
  std::vector<std::size_t> top_k{5, 10, 20};
  std::size_t hidden = 64;
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

/// Standardizes features with training-split mean and deviation, trains a
/// d -> hidden -> V predictor with binary cross-entropy on the frozen
/// training-set states, then reports mean precision per K on the
/// test split.
std::vector<double> probe_train_eval(const GretModel& model, const task::Corpus& corpus,
                                     Pooling pooling, const ProbeOptions& opts = {});

}  // namespace gret::probe
