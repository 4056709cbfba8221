// SPDX-License-Identifier: Apache-2.0

#include "gret/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "gret/config.hpp"
#include "gret/global_representation.hpp"
#include "gret/ops.hpp"
#include "gret/train.hpp"

namespace gret::probe {
namespace {

struct Features {
  std::vector<std::vector<double>> x;
  std::vector<std::vector<int>> bags;
};

Features featurize(const GretModel& model, std::span<const task::Example> data, Pooling pooling) {
  autodiff::NoGradGuard no_grad;
  Features f;
  for (const auto& ex : data) {
    const auto s = pooled_state(model, ex.source, pooling);
    f.x.emplace_back(s.data().begin(), s.data().end());
    f.bags.push_back(bag_of(ex.target));
  }
  return f;
}

// z-scores every feature with training-split statistics
void standardize(Features& train, Features& test) {
  const std::size_t d = train.x.front().size();
  const double n = static_cast<double>(train.x.size());
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (const auto& x : train.x) mean += x[j];
    mean /= n;
    for (const auto& x : train.x) var += (x[j] - mean) * (x[j] - mean);
    const double sd = std::sqrt(var / n);
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    for (auto* f : {&train, &test}) {
      for (auto& x : f->x) x[j] = (x[j] - mean) * inv;
    }
  }
}

}  // namespace

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kGlobal: return "global";
    case Pooling::kAverage: return "average";
    case Pooling::kLast: return "last";
  }
  return "?";
}

Pooling parse_pooling(const std::string& name) {
  if (name == "global") return Pooling::kGlobal;
  if (name == "average") return Pooling::kAverage;
  if (name == "last") return Pooling::kLast;
  throw ConfigError("pooling", "unknown pooling '" + name + "' (global, average, last)");
}

Tensor pooled_state(const GretModel& model, std::span<const int> source, Pooling pooling) {
  if (pooling == Pooling::kGlobal && !model.config().uses_global_state()) {
    throw ContractError("probe: global pooling needs a checkpoint with GRET flags, this one has none");
  }
  const auto enc = model.encode(source);
  switch (pooling) {
    case Pooling::kGlobal: return *enc.global_state;
    case Pooling::kAverage: return global::masked_mean(enc.last(), enc.pad_mask);
    case Pooling::kLast: {
      std::size_t last = enc.length();
      while (last > 0 && enc.pad_mask[last - 1]) --last;
      return ops::reshape(ops::slice(enc.last(), 0, last - 1, last), {model.config().d_model});
    }
  }
  throw ContractError("probe: bad pooling");
}

std::vector<int> bag_of(std::span<const int> target) {
  std::set<int> bag;
  for (int t : target) {
    if (t >= tokens::kFirstContent) bag.insert(t);
  }
  return {bag.begin(), bag.end()};
}

double precision_at_k(std::span<const double> scores, std::span<const int> bag, std::size_t k) {
  if (bag.empty() || k == 0) throw ContractError("precision_at_k: empty bag or k = 0");
  std::vector<int> ids(scores.size() - tokens::kFirstContent);
  std::iota(ids.begin(), ids.end(), tokens::kFirstContent);
  const std::size_t kk = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(kk), ids.end(), [&](int a, int b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < kk; ++i) hits += std::binary_search(bag.begin(), bag.end(), ids[i]);
  return static_cast<double>(hits) / static_cast<double>(std::min(k, bag.size()));
}

std::vector<double> probe_train_eval(const GretModel& model, const task::Corpus& corpus,
                                     Pooling pooling, const ProbeOptions& opts) {
  const std::size_t d = model.config().d_model, v = model.config().vocab;
  auto train_f = featurize(model, corpus.train, pooling);
  auto test_f = featurize(model, corpus.test, pooling);
  if (train_f.x.empty() || test_f.x.empty()) throw ContractError("probe: empty split");
  standardize(train_f, test_f);

  nn::ParamStore store(opts.seed);
  const auto predictor = nn::FeedForward::create(store, "probe", d, opts.hidden, v);
  train::Adam adam;
  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train_f.x.size() - 1);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    std::vector<double> x, y(opts.batch_size * v, 0.0);
    for (std::size_t b = 0; b < opts.batch_size; ++b) {
      const std::size_t i = pick(rng);
      x.insert(x.end(), train_f.x[i].begin(), train_f.x[i].end());
      for (int t : train_f.bags[i]) y[b * v + static_cast<std::size_t>(t)] = 1.0;
    }
    store.zero_grad();
    auto loss = train::binary_cross_entropy(predictor(Tensor::from({opts.batch_size, d}, x)),
                                            Tensor::from({opts.batch_size, v}, y));
    backward(loss);
    adam.step(store, opts.lr);
  }

  autodiff::NoGradGuard no_grad;
  std::vector<double> precision(opts.top_k.size(), 0.0);
  for (std::size_t i = 0; i < test_f.x.size(); ++i) {
    const auto scores = predictor(Tensor::from({d}, test_f.x[i]));
    for (std::size_t k = 0; k < opts.top_k.size(); ++k) {
      precision[k] += precision_at_k(scores.data(), test_f.bags[i], opts.top_k[k]);
    }
  }
  for (auto& p : precision) p /= static_cast<double>(test_f.x.size());
  return precision;
}

}  // namespace gret::probe
