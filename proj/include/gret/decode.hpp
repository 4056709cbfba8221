// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam-search decoding.

#pragma once

#include <span>
#include <vector>

#include "gret/model.hpp"

namespace gret::decode {

struct DecodeOptions {
  std::size_t beam = 1;
  std::size_t max_len = 0;  // generated tokens; 0 means source length + 10
  double alpha = 0.6;       // length normalization exponent
  bool recompute_global = false;  // re-encode at every step (reference for the cache)
};

struct Hypothesis {
  std::vector<int> tokens;  // generated ids, EOS last when finished
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / len^alpha
  bool finished = false;
};

double length_normalized(double log_prob, std::size_t length, double alpha);

/// Log-softmax of the final row of the logits for `prefix`.
std::vector<double> next_token_log_probs(const GretModel& model, std::span<const int> prefix,
                                         const EncoderOutput& enc);

/// Argmax decoding until EOS or max_len.
Hypothesis greedy(const GretModel& model, std::span<const int> source, const DecodeOptions& opts = {});

/// Beam search; EOS-terminated hypotheses retire, the best normalized score
/// wins. The encoder (and s^M) runs once per source.
Hypothesis beam_search(const GretModel& model, std::span<const int> source,
                       const DecodeOptions& opts = {});

/// Beam search over many sources, fanned out over threads; results keep the
/// input order.
std::vector<Hypothesis> decode_corpus(const GretModel& model,
                                      std::span<const std::vector<int>> sources,
                                      const DecodeOptions& opts = {});

namespace serial {
std::vector<Hypothesis> decode_corpus(const GretModel& model,
                                      std::span<const std::vector<int>> sources,
                                      const DecodeOptions& opts = {});
}  // namespace serial

/// Tokens before the first EOS.
std::vector<int> strip_eos(const std::vector<int>& tokens);

}  // namespace gret::decode
