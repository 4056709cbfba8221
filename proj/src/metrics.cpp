// SPDX-License-Identifier: Apache-2.0

#include "gret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "gret/tensor.hpp"

namespace gret::metrics {

BleuStats bleu_stats(std::span<const Sequence> cands, std::span<const Sequence> refs,
                     std::size_t max_n) {
  if (cands.empty()) throw ContractError("bleu: empty candidate corpus");
  if (cands.size() != refs.size()) throw ContractError("bleu: candidate and reference counts differ");
  if (max_n == 0) throw ContractError("bleu: max_n must be positive");
  BleuStats st;
  st.matches.assign(max_n, 0);
  st.candidates.assign(max_n, 0);
  for (std::size_t s = 0; s < cands.size(); ++s) {
    const auto& c = cands[s];
    const auto& r = refs[s];
    st.candidate_length += c.size();
    st.reference_length += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<std::vector<int>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + i, c.begin() + i + n}];
      for (const auto& [gram, count] : cand_counts) {
        const auto it = ref_counts.find(gram);
        st.matches[n - 1] += std::min(count, it == ref_counts.end() ? 0 : it->second);
        st.candidates[n - 1] += count;
      }
    }
  }
  return st;
}

double bleu(std::span<const Sequence> cands, std::span<const Sequence> refs, std::size_t max_n) {
  const auto st = bleu_stats(cands, refs, max_n);
  if (st.candidate_length == 0 || st.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (st.candidates[n] == 0) continue;
    const double p = st.matches[n] > 0
                         ? static_cast<double>(st.matches[n]) / static_cast<double>(st.candidates[n])
                         : 1.0 / (2.0 * static_cast<double>(st.candidates[n]));
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(st.candidate_length);
  const double r = static_cast<double>(st.reference_length);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

double exact_match(std::span<const Sequence> cands, std::span<const Sequence> refs) {
  if (cands.empty() || cands.size() != refs.size()) throw ContractError("exact_match: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) hits += cands[i] == refs[i];
  return static_cast<double>(hits) / static_cast<double>(cands.size());
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string to_csv(const MetricRow& row) {
  return csv_field(row.experiment) + "," + csv_field(row.config_hash) + "," + csv_field(row.step_or_split) + "," +
         csv_field(row.metric) + "," +
         format_value(row.value) + "," + format_value(row.wall_clock);
}

CsvLog::CsvLog(const std::string& path)
    : file_(std::fopen(path.c_str(), "a")), start_(std::chrono::steady_clock::now()) {
  if (!file_) throw std::runtime_error("cannot open metrics file '" + path + "'");
  std::fseek(file_, 0, SEEK_END);
  if (std::ftell(file_) == 0) {
    std::fputs(kCsvHeader, file_);
    std::fputc('\n', file_);
  }
}

CsvLog::~CsvLog() { std::fclose(file_); }

double CsvLog::elapsed() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void CsvLog::write(MetricRow row) {
  row.wall_clock = elapsed();
  const auto line = to_csv(row);
  std::fputs(line.c_str(), file_);
  std::fputc('\n', file_);
  std::fflush(file_);
}

}  // namespace gret::metrics
