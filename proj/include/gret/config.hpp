// SPDX-License-Identifier: Apache-2.0
//
// Model hyperparameters and the flat `key = value` config format.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gret {

/// A config violation naming the offending field.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Reserved token ids shared by every task.
namespace tokens {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstContent = 4;
}  // namespace tokens

struct GretFlags {
  bool capsule = false;
  bool aggregate = false;
  bool gate = false;

  bool any() const { return capsule || aggregate || gate; }
  /// "capsule,aggregate,gate" subset, "none" when empty.
  std::string str() const;
  /// Accepts a comma list of capsule/aggregate/gate, or "none"/"".
  static GretFlags parse(const std::string& text);
  bool operator==(const GretFlags&) const = default;
  /// True when every flag set here is also set in `other`.
  bool subset_of(const GretFlags& other) const;
};

using Fingerprint = std::array<std::uint8_t, 32>;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t ffn_hidden = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t vocab = 20;
  std::size_t capsules = 8;
  std::size_t routing_iters = 3;
  std::size_t d_cap = 0;               // 0 means d_model
  std::size_t capsule_ffn_hidden = 0;  // pooling FFN inner width; 0 means ffn_hidden
  GretFlags flags;
  double dropout = 0.0;
  double label_smoothing = 0.0;
  std::size_t warmup_steps = 400;
  std::uint64_t seed = 1;
  bool joint_attention_ln = true;  // decoder: one LN over self+cross attention
  bool tie_embeddings = false;  // share source/target embeddings and output projection

  std::size_t capsule_width() const { return d_cap ? d_cap : d_model; }
  std::size_t capsule_hidden() const { return capsule_ffn_hidden ? capsule_ffn_hidden : ffn_hidden; }
  /// True when the decoder consumes a global state s^M.
  bool uses_global_state() const { return flags.any(); }

  /// Throws ConfigError naming the first bad field.
  void validate() const;

  /// SHA-256 over the architecture fields (everything that changes the
  /// parameter set or the forward computation except dropout).
  Fingerprint architecture_fingerprint() const;

  /// Sets one field from its textual value; throws ConfigError on unknown key
  /// or malformed value. Returns false if `key` is not a model field.
  bool set(const std::string& key, const std::string& value);
  /// All fields as ordered key/value pairs, the inverse of set().
  std::vector<std::pair<std::string, std::string>> fields() const;

  /// Desk-scale defaults used by the tests and the CLI.
  static ModelConfig desk();
  /// Base model at the published scale with the given flags.
  static ModelConfig paper_base(GretFlags flags = {});
};

/// Parses flat UTF-8 `key = value` lines; `#` starts a comment. Later keys
/// override earlier ones.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::string& path);

std::string to_hex(const Fingerprint& fp);
Fingerprint sha256(const std::string& bytes);

/// Shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace gret
