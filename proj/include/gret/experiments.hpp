// SPDX-License-Identifier: Apache-2.0
//
// Training/evaluation runs and the experiment grids driven by the CLI.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gret/config.hpp"
#include "gret/decode.hpp"
#include "gret/metrics.hpp"
#include "gret/model.hpp"
#include "gret/task.hpp"
#include "gret/train.hpp"

namespace gret::experiments {

struct RunSpec {
  std::string experiment = "train";
  ModelConfig model;
  task::TaskSpec task;
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  double lr_scale = 1.0;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;
  decode::DecodeOptions decode;
  std::string init;     // checkpoint for load_init, may be empty
  std::string out_dir;  // run directory, may be empty (nothing written)
};

/// First 16 hex digits of the architecture fingerprint.
std::string config_hash(const ModelConfig& cfg);

/// Every model and task field plus the run options, as `key = value` lines
/// loadable with --config.
std::string snapshot(const RunSpec& spec);

struct TrainedRun {
  std::unique_ptr<GretModel> model;
  train::Adam adam;
  std::vector<double> losses;
};

/// Trains from scratch (or from `spec.init`). When out_dir is set, writes
/// config.txt, appends loss rows to `log`, and saves checkpoint.bin (plus
/// step-<n>.bin every checkpoint_every steps).
TrainedRun train_run(const RunSpec& spec, metrics::CsvLog* log);

struct EvalResult {
  double bleu = 0.0;
  double exact_match = 0.0;
  double loss = 0.0;
  double tokens_per_second = 0.0;  // single-threaded serial decoding
  std::vector<std::vector<int>> outputs;
};

/// Decodes every example (serially when `timed`, in parallel otherwise) and
/// scores against the references.
EvalResult evaluate(const GretModel& model, std::span<const task::Example> data,
                    const decode::DecodeOptions& opts, bool timed = false);

/// Reference outputs (target without BOS/EOS).
std::vector<std::vector<int>> references(std::span<const task::Example> data);

/// The 8 flag rows in ablation-table order:
/// none, c, c+a, c+g, a, a+g, g, c+a+g.
std::vector<GretFlags> ablation_grid();

struct AblationRow {
  GretFlags flags;
  std::string config_hash;
  std::size_t params = 0;
  double bleu = 0.0;           // mean over seeds
  double relative_speed = 0.0; // tokens/s relative to the baseline row
};

std::vector<AblationRow> ablate(const RunSpec& base, const std::vector<std::uint64_t>& seeds,
                                metrics::CsvLog* log);

struct SweepCell {
  std::size_t capsules = 0;
  std::size_t iterations = 0;
  double bleu = 0.0;  // mean over seeds
};

std::vector<SweepCell> sweep_capsules(const RunSpec& base, const std::vector<std::size_t>& ks,
                                      const std::vector<std::size_t>& rs,
                                      const std::vector<std::uint64_t>& seeds,
                                      metrics::CsvLog* log);

struct LengthBucket {
  std::size_t lo = 0, hi = 0;  // inclusive content-length range
  std::size_t count = 0;
  double bleu = 0.0;
  double exact_match = 0.0;
};

/// Default bins [2-5], [6-10], [11-15], [16-20].
std::vector<LengthBucket> default_buckets();

std::vector<LengthBucket> length_buckets(const GretModel& model,
                                         std::span<const task::Example> data,
                                         const decode::DecodeOptions& opts,
                                         std::vector<LengthBucket> buckets = default_buckets());

}  // namespace gret::experiments
