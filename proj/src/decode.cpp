// SPDX-License-Identifier: Apache-2.0

#include "gret/decode.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include <omp.h>

#include "gret/config.hpp"

namespace gret::decode {
namespace {

std::size_t resolve_max_len(const DecodeOptions& opts, std::size_t source_len) {
  return opts.max_len ? opts.max_len : source_len + 10;
}

std::vector<int> with_bos(const std::vector<int>& tokens) {
  std::vector<int> prefix{tokens::kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return prefix;
}

}  // namespace

double length_normalized(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

std::vector<double> next_token_log_probs(const GretModel& model, std::span<const int> prefix,
                                         const EncoderOutput& enc) {
  autodiff::NoGradGuard no_grad;
  const auto logits = model.decode_step(prefix, enc).logits;
  const std::size_t v = logits.dim(1);
  const auto row = logits.data().subspan((logits.dim(0) - 1) * v, v);
  const double peak = *std::max_element(row.begin(), row.end());
  double denom = 0.0;
  for (double z : row) denom += std::exp(z - peak);
  const double lse = peak + std::log(denom);
  std::vector<double> out(v);
  for (std::size_t k = 0; k < v; ++k) out[k] = row[k] - lse;
  return out;
}

Hypothesis greedy(const GretModel& model, std::span<const int> source, const DecodeOptions& opts) {
  autodiff::NoGradGuard no_grad;
  const auto enc = model.encode(source);
  Hypothesis h;
  const std::size_t max_len = resolve_max_len(opts, source.size());
  while (h.tokens.size() < max_len) {
    const auto lp = next_token_log_probs(model, with_bos(h.tokens), enc);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.log_prob += lp[best];
    if (best == tokens::kEos) {
      h.finished = true;
      break;
    }
  }
  h.score = length_normalized(h.log_prob, h.tokens.size(), opts.alpha);
  return h;
}

Hypothesis beam_search(const GretModel& model, std::span<const int> source,
                       const DecodeOptions& opts) {
  if (opts.beam == 0) throw ContractError("beam_search: beam must be at least 1");
  autodiff::NoGradGuard no_grad;
  const auto enc = model.encode(source);
  const std::size_t max_len = resolve_max_len(opts, source.size());
  const std::size_t beam = opts.beam;

  std::vector<Hypothesis> alive{Hypothesis{}}, done;
  for (std::size_t t = 0; t < max_len && !alive.empty() && done.size() < beam; ++t) {
    std::vector<Hypothesis> cands;
    for (const auto& h : alive) {
      const auto lp = opts.recompute_global
                          ? next_token_log_probs(model, with_bos(h.tokens), model.encode(source))
                          : next_token_log_probs(model, with_bos(h.tokens), enc);
      std::vector<int> order(lp.size());
      std::iota(order.begin(), order.end(), 0);
      const std::size_t keep = std::min(beam, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (std::size_t i = 0; i < keep; ++i) {
        Hypothesis c = h;
        c.tokens.push_back(order[i]);
        c.log_prob += lp[order[i]];
        cands.push_back(std::move(c));
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
    alive.clear();
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      auto& c = cands[rank];
      if (c.tokens.back() == tokens::kEos) {
        if (rank < beam && done.size() < beam) {
          c.finished = true;
          c.score = length_normalized(c.log_prob, c.tokens.size(), opts.alpha);
          done.push_back(std::move(c));
        }
      } else if (alive.size() < beam) {
        alive.push_back(std::move(c));
      }
    }
  }
  if (done.empty()) {
    for (auto& h : alive) {
      h.score = length_normalized(h.log_prob, h.tokens.size(), opts.alpha);
      done.push_back(std::move(h));
    }
  }
  return *std::max_element(done.begin(), done.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.score < b.score;
  });
}

std::vector<Hypothesis> decode_corpus(const GretModel& model,
                                      std::span<const std::vector<int>> sources,
                                      const DecodeOptions& opts) {
  std::vector<Hypothesis> out(sources.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(sources.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      autodiff::NoGradGuard no_grad;
      out[static_cast<std::size_t>(i)] = beam_search(model, sources[static_cast<std::size_t>(i)], opts);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace serial {
std::vector<Hypothesis> decode_corpus(const GretModel& model,
                                      std::span<const std::vector<int>> sources,
                                      const DecodeOptions& opts) {
  std::vector<Hypothesis> out;
  out.reserve(sources.size());
  for (const auto& s : sources) out.push_back(beam_search(model, s, opts));
  return out;
}
}  // namespace serial

std::vector<int> strip_eos(const std::vector<int>& tokens) {
  const auto it = std::find(tokens.begin(), tokens.end(), tokens::kEos);
  return {tokens.begin(), it};
}

}  // namespace gret::decode
