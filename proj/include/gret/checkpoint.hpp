// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints (little-endian):
//   "GRET" | version u32 | fingerprint [32] | count u64 | records
//   "ADAM" | step u64 | count u64 | records named m/<param>, v/<param>
// record = name_len u32 | name | rank u32 | dims u64 × rank | f64 × numel

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gret/config.hpp"
#include "gret/model.hpp"
#include "gret/train.hpp"

namespace gret::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Record {
  Shape shape;
  std::vector<double> values;
};

struct Contents {
  Fingerprint fingerprint{};
  std::map<std::string, Record> params;
  std::uint64_t step = 0;
  std::map<std::string, Record> moments;  // m/<name>, v/<name>
};

Contents read(const std::string& path);
void write(const std::string& path, const Contents& contents);

/// Parameters and optimizer state of a model.
void save(const std::string& path, const GretModel& model, const train::Adam& adam);

/// Exact resume: fingerprint must match the model's architecture.
void load(const std::string& path, GretModel& model, train::Adam& adam);

/// Initialization from another run (for instance a baseline checkpoint for
/// GRET training). The checkpoint must come from the same architecture or
/// from the same architecture with all GRET flags off; parameters it lacks
/// must be GRET-only (global.*, fusion.*) and keep their fresh values.
/// Returns the names that were copied.
std::vector<std::string> load_init(const std::string& path, GretModel& model);

}  // namespace gret::checkpoint
