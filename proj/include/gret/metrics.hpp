// SPDX-License-Identifier: Apache-2.0
//
// Corpus BLEU, exact match and the CSV metric log.

#pragma once

#include <chrono>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gret::metrics {

using Sequence = std::vector<int>;

struct BleuStats {
  std::vector<std::size_t> matches;     // clipped, per order 1..max_n
  std::vector<std::size_t> candidates;  // candidate n-grams per order
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

BleuStats bleu_stats(std::span<const Sequence> candidates, std::span<const Sequence> references,
                     std::size_t max_n = 4);

/// Corpus BLEU in [0, 100]. A zero unigram precision gives 0; a zero
/// higher-order precision becomes 1 / (2 · candidate n-grams of that order);
/// orders with no candidate n-grams at all are left out of the mean.
double bleu(std::span<const Sequence> candidates, std::span<const Sequence> references,
            std::size_t max_n = 4);

/// Fraction of pairs that are identical.
double exact_match(std::span<const Sequence> candidates, std::span<const Sequence> references);

/// C printf "%.6g".
std::string format_value(double v);

/// Quotes a CSV field when it holds a comma, quote or newline.
std::string csv_field(std::string_view s);

struct MetricRow {
  std::string experiment;
  std::string config_hash;
  std::string step_or_split;
  std::string metric;
  double value = 0.0;
  double wall_clock = 0.0;  // seconds since the log was opened
};

inline constexpr const char* kCsvHeader = "experiment,config_hash,step_or_split,metric,value,wall_clock";

std::string to_csv(const MetricRow& row);

/// Append-only CSV log; writes the header once when the file is new or empty.
class CsvLog {
 public:
  explicit CsvLog(const std::string& path);
  ~CsvLog();
  CsvLog(const CsvLog&) = delete;
  CsvLog& operator=(const CsvLog&) = delete;

  /// Fills wall_clock and appends.
  void write(MetricRow row);
  double elapsed() const;

 private:
  std::FILE* file_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace gret::metrics
