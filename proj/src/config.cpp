// SPDX-License-Identifier: Apache-2.0

#include "gret/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gret {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string GretFlags::str() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(capsule, "capsule");
  add(aggregate, "aggregate");
  add(gate, "gate");
  return out.empty() ? "none" : out;
}

GretFlags GretFlags::parse(const std::string& text) {
  GretFlags f;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item == "none") continue;
    if (item == "capsule") {
      f.capsule = true;
    } else if (item == "aggregate") {
      f.aggregate = true;
    } else if (item == "gate") {
      f.gate = true;
    } else if (item == "all") {
      f = {true, true, true};
    } else {
      throw ConfigError("flags", "unknown flag '" + item + "'");
    }
  }
  return f;
}

bool GretFlags::subset_of(const GretFlags& o) const {
  return (!capsule || o.capsule) && (!aggregate || o.aggregate) && (!gate || o.gate);
}

void ModelConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v == 0) throw ConfigError(name, "must be positive");
  };
  positive("d_model", d_model);
  positive("ffn_hidden", ffn_hidden);
  positive("heads", heads);
  positive("decoder_layers", decoder_layers);
  positive("capsules", capsules);
  positive("routing_iters", routing_iters);
  if (d_model % heads != 0) throw ConfigError("heads", "must divide d_model");
  if (d_model < 2) throw ConfigError("d_model", "must be at least 2 for layer normalization");
  if (vocab <= static_cast<std::size_t>(tokens::kFirstContent)) {
    throw ConfigError("vocab", "must exceed the 4 reserved ids");
  }
  if (flags.any() && encoder_layers == 0) {
    throw ConfigError("encoder_layers", "global representation needs at least one encoder layer");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout", "must be in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing > 0.3) {
    throw ConfigError("label_smoothing", "must be in [0, 0.3]");
  }
  positive("warmup_steps", warmup_steps);
}

Fingerprint ModelConfig::architecture_fingerprint() const {
  std::ostringstream os;
  os << "d_model=" << d_model << ";ffn_hidden=" << ffn_hidden << ";heads=" << heads
     << ";encoder_layers=" << encoder_layers << ";decoder_layers=" << decoder_layers
     << ";vocab=" << vocab << ";capsules=" << capsules << ";routing_iters=" << routing_iters
     << ";d_cap=" << capsule_width() << ";capsule_ffn_hidden=" << capsule_hidden()
     << ";flags=" << flags.str() << ";joint_attention_ln=" << joint_attention_ln
     << ";tie_embeddings=" << tie_embeddings;
  return sha256(os.str());
}

bool ModelConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "d_model") d_model = parse_size(key, v);
  else if (key == "ffn_hidden") ffn_hidden = parse_size(key, v);
  else if (key == "heads") heads = parse_size(key, v);
  else if (key == "encoder_layers") encoder_layers = parse_size(key, v);
  else if (key == "decoder_layers") decoder_layers = parse_size(key, v);
  else if (key == "vocab") vocab = parse_size(key, v);
  else if (key == "capsules") capsules = parse_size(key, v);
  else if (key == "routing_iters") routing_iters = parse_size(key, v);
  else if (key == "d_cap") d_cap = parse_size(key, v);
  else if (key == "capsule_ffn_hidden") capsule_ffn_hidden = parse_size(key, v);
  else if (key == "flags") flags = GretFlags::parse(v);
  else if (key == "dropout") dropout = parse_double(key, v);
  else if (key == "label_smoothing") label_smoothing = parse_double(key, v);
  else if (key == "warmup_steps") warmup_steps = parse_size(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "joint_attention_ln") joint_attention_ln = parse_bool(key, v);
  else if (key == "tie_embeddings") tie_embeddings = parse_bool(key, v);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::fields() const {
  auto s = [](auto v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {{"d_model", s(d_model)},
          {"ffn_hidden", s(ffn_hidden)},
          {"heads", s(heads)},
          {"encoder_layers", s(encoder_layers)},
          {"decoder_layers", s(decoder_layers)},
          {"vocab", s(vocab)},
          {"capsules", s(capsules)},
          {"routing_iters", s(routing_iters)},
          {"d_cap", s(d_cap)},
          {"capsule_ffn_hidden", s(capsule_ffn_hidden)},
          {"flags", flags.str()},
          {"dropout", format_double(dropout)},
          {"label_smoothing", format_double(label_smoothing)},
          {"warmup_steps", s(warmup_steps)},
          {"seed", s(seed)},
          {"joint_attention_ln", b(joint_attention_ln)},
          {"tie_embeddings", b(tie_embeddings)}};
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_base(GretFlags flags) {
  ModelConfig c;
  c.d_model = 512;
  c.ffn_hidden = 2048;
  c.heads = 8;
  c.encoder_layers = 6;
  c.decoder_layers = 6;
  c.vocab = 32000;
  c.capsules = 32;
  c.routing_iters = 3;
  c.d_cap = 16;
  c.capsule_ffn_hidden = 2048;
  c.flags = flags;
  c.dropout = 0.1;
  c.label_smoothing = 0.1;
  c.warmup_steps = 4000;
  c.tie_embeddings = true;
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

std::string to_hex(const Fingerprint& fp) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : fp) {
    out += kDigits[b >> 4];
    out += kDigits[b & 15];
  }
  return out;
}

Fingerprint sha256(const std::string& bytes) {
  Fingerprint out{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

}  // namespace gret
