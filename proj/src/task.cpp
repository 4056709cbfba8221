// SPDX-License-Identifier: Apache-2.0

#include "gret/task.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gret/config.hpp"
#include "gret/nn.hpp"

namespace gret::task {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kMaxAttempts = 100000;

std::size_t split_id(Split s) { return static_cast<std::size_t>(s); }

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return static_cast<std::size_t>(out);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
}

// Number of distinct content sequences, saturating.
double sequence_space(const TaskSpec& spec) {
  const double v = static_cast<double>(spec.vocab - tokens::kFirstContent);
  double total = 0;
  for (std::size_t len = spec.min_len; len <= spec.max_len; ++len) total += std::pow(v, static_cast<double>(len));
  return total;
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kCopy: return "copy";
    case Kind::kReverse: return "reverse";
    case Kind::kToyTranslate: return "toy-translate";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  if (name == "copy") return Kind::kCopy;
  if (name == "reverse") return Kind::kReverse;
  if (name == "toy-translate") return Kind::kToyTranslate;
  throw ConfigError("task", "unknown task '" + name + "' (copy, reverse, toy-translate)");
}

void TaskSpec::validate() const {
  if (vocab < 10) throw ConfigError("task.vocab", "must be at least 10");
  if (min_len < 2) throw ConfigError("task.min_len", "must be at least 2");
  if (max_len < min_len) throw ConfigError("task.max_len", "must be >= task.min_len");
  if (train == 0) throw ConfigError("task.train", "must be positive");
}

std::size_t TaskSpec::size(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return 0;
}

bool TaskSpec::set(const std::string& key, const std::string& v) {
  if (key == "task" || key == "task.kind") kind = parse_kind(v);
  else if (key == "task.vocab") vocab = parse_count(key, v);
  else if (key == "task.min_len") min_len = parse_count(key, v);
  else if (key == "task.max_len") max_len = parse_count(key, v);
  else if (key == "task.train") train = parse_count(key, v);
  else if (key == "task.valid") valid = parse_count(key, v);
  else if (key == "task.test") test = parse_count(key, v);
  else if (key == "task.seed") seed = parse_count(key, v);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> TaskSpec::fields() const {
  auto s = [](auto v) { return std::to_string(v); };
  return {{"task.kind", to_string(kind)},  {"task.vocab", s(vocab)}, {"task.min_len", s(min_len)},
          {"task.max_len", s(max_len)},    {"task.train", s(train)}, {"task.valid", s(valid)},
          {"task.test", s(test)},          {"task.seed", s(seed)}};
}

std::vector<int> token_map(const TaskSpec& spec) {
  std::vector<int> map(spec.vocab);
  for (std::size_t i = 0; i < spec.vocab; ++i) map[i] = static_cast<int>(i);
  std::mt19937_64 rng(splitmix64(spec.seed ^ 0x70a57ULL));
  std::shuffle(map.begin() + tokens::kFirstContent, map.end(), rng);
  return map;
}

std::vector<int> apply_rule(const TaskSpec& spec, const std::vector<int>& content) {
  switch (spec.kind) {
    case Kind::kCopy: return content;
    case Kind::kReverse: return {content.rbegin(), content.rend()};
    case Kind::kToyTranslate: {
      const auto map = token_map(spec);
      std::vector<int> out(content.size());
      for (std::size_t i = 0; i < content.size(); ++i) out[i] = map.at(content[i]);
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      return out;
    }
  }
  return content;
}

Split split_of(std::span<const int> content) {
  std::string bytes;
  for (int t : content) bytes += std::to_string(t) + ",";
  switch (nn::name_hash(bytes) % 10) {
    case 0: return Split::kTest;
    case 1: return Split::kValid;
    default: return Split::kTrain;
  }
}

Example make_example(const TaskSpec& spec, Split split, std::size_t index) {
  spec.validate();
  const std::uint64_t base =
      splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(index) * 4 + split_id(split)));
  std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> token(tokens::kFirstContent, static_cast<int>(spec.vocab) - 1);
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(splitmix64(base + attempt));
    std::vector<int> content(length(rng));
    for (auto& t : content) t = token(rng);
    if (split_of(content) != split) continue;
    Example ex;
    ex.source = content;
    ex.source.push_back(tokens::kEos);
    ex.target.push_back(tokens::kBos);
    const auto out = apply_rule(spec, content);
    ex.target.insert(ex.target.end(), out.begin(), out.end());
    ex.target.push_back(tokens::kEos);
    return ex;
  }
  throw ContractError("make_example: no sequence of this split found");
}

std::vector<Example> generate(const TaskSpec& spec, Split split) {
  spec.validate();
  const double total = static_cast<double>(spec.train + spec.valid + spec.test);
  if (total > sequence_space(spec)) {
    throw ContractError("gen_task: " + std::to_string(static_cast<std::size_t>(total)) +
                        " sequences requested but only " +
                        std::to_string(static_cast<std::size_t>(sequence_space(spec))) + " exist");
  }
  std::vector<Example> out;
  out.reserve(spec.size(split));
  for (std::size_t i = 0; i < spec.size(split); ++i) out.push_back(make_example(spec, split, i));
  return out;
}

Corpus gen_task(const TaskSpec& spec) {
  return {generate(spec, Split::kTrain), generate(spec, Split::kValid), generate(spec, Split::kTest)};
}

Batch make_batch(std::span<const Example> examples) {
  if (examples.empty()) throw ContractError("make_batch: empty batch");
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& e : examples) {
    src_len = std::max(src_len, e.source.size());
    tgt_len = std::max(tgt_len, e.target.size());
  }
  const std::size_t b = examples.size();
  std::vector<double> src(b * src_len, tokens::kPad), tgt(b * tgt_len, tokens::kPad);
  Batch out;
  out.source_pad.assign(b * src_len, 1);
  out.target_pad.assign(b * tgt_len, 1);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i < examples[r].source.size(); ++i) {
      src[r * src_len + i] = examples[r].source[i];
      out.source_pad[r * src_len + i] = 0;
    }
    for (std::size_t j = 0; j < examples[r].target.size(); ++j) {
      tgt[r * tgt_len + j] = examples[r].target[j];
      out.target_pad[r * tgt_len + j] = 0;
    }
  }
  out.source = Tensor::from({b, src_len}, std::move(src));
  out.target = Tensor::from({b, tgt_len}, std::move(tgt));
  return out;
}

std::vector<int> row_ids(const Tensor& ids, std::span<const std::uint8_t> pad, std::size_t b) {
  const std::size_t len = ids.dim(1);
  std::vector<int> out;
  for (std::size_t i = 0; i < len; ++i) {
    if (!pad[b * len + i]) out.push_back(static_cast<int>(ids.at({b, i})));
  }
  return out;
}

}  // namespace gret::task
