// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sequence-to-sequence tasks.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gret/tensor.hpp"

namespace gret::task {

enum class Kind { kCopy, kReverse, kToyTranslate };

std::string to_string(Kind kind);
/// Throws ConfigError for an unknown name.
Kind parse_kind(const std::string& name);

enum class Split { kTrain, kValid, kTest };

struct TaskSpec {
  Kind kind = Kind::kCopy;
  std::size_t vocab = 20;  // including the 4 reserved ids
  std::size_t min_len = 2;
  std::size_t max_len = 10;
  std::size_t train = 4000;
  std::size_t valid = 100;
  std::size_t test = 100;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t size(Split split) const;
  /// Sets `task.<field>`; returns false if `key` is not a task field.
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> fields() const;
};

struct Example {
  std::vector<int> source;  // content tokens then EOS
  std::vector<int> target;  // BOS, content tokens, EOS
  std::size_t content_length() const { return source.size() - 1; }
};

/// Content sequence -> output sequence for a task (no BOS/EOS).
std::vector<int> apply_rule(const TaskSpec& spec, const std::vector<int>& content);

/// The fixed bijection of the toy-translate task, indexed by token id
/// (reserved ids map to themselves).
std::vector<int> token_map(const TaskSpec& spec);

/// Split a content sequence belongs to, by hash.
Split split_of(std::span<const int> content);

/// Pure function of (spec, split, index).
Example make_example(const TaskSpec& spec, Split split, std::size_t index);

/// All examples of one split. Throws ContractError when the requested corpus
/// exceeds the number of distinct sequences.
std::vector<Example> generate(const TaskSpec& spec, Split split);

struct Corpus {
  std::vector<Example> train, valid, test;
};
Corpus gen_task(const TaskSpec& spec);

/// Right-padded ids, [B, I] and [B, J] as doubles, with pad masks.
struct Batch {
  Tensor source;
  Tensor target;
  std::vector<std::uint8_t> source_pad;  // B * I
  std::vector<std::uint8_t> target_pad;  // B * J
  std::size_t size() const { return source.dim(0); }
};
Batch make_batch(std::span<const Example> examples);

/// Row `b` of a batch with trailing padding trimmed.
std::vector<int> row_ids(const Tensor& ids, std::span<const std::uint8_t> pad, std::size_t b);

}  // namespace gret::task
