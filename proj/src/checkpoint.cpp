// SPDX-License-Identifier: Apache-2.0

#include "gret/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gret::checkpoint {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw CheckpointError("cannot write '" + path + "'");
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void record(const std::string& name, const Record& r) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put<std::uint64_t>(d);
    bytes(r.values.data(), r.values.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    if (!out_) throw CheckpointError("write to '" + path_ + "' failed");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw CheckpointError("cannot open '" + path + "'");
  }
  template <typename T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError("'" + path_ + "' is truncated");
  }
  std::pair<std::string, Record> record() {
    std::string name(get<std::uint32_t>(), '\0');
    bytes(name.data(), name.size());
    Record r;
    r.shape.resize(get<std::uint32_t>());
    for (auto& d : r.shape) d = get<std::uint64_t>();
    r.values.resize(numel_of(r.shape));
    bytes(r.values.data(), r.values.size() * sizeof(double));
    return {std::move(name), std::move(r)};
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

void copy_into(Tensor& dst, const Record& r, const std::string& name) {
  if (dst.shape() != r.shape) {
    throw CheckpointError("parameter '" + name + "' has shape " + shape_str(r.shape) +
                          " in the checkpoint but " + shape_str(dst.shape()) + " in the model");
  }
  auto d = dst.mutable_data();
  std::copy(r.values.begin(), r.values.end(), d.begin());
}

bool gret_only(const std::string& name) {
  return name.rfind("global.", 0) == 0 || name.rfind("fusion.", 0) == 0;
}

}  // namespace

void write(const std::string& path, const Contents& c) {
  Writer w(path);
  w.bytes("GRET", 4);
  w.put<std::uint32_t>(kVersion);
  w.bytes(c.fingerprint.data(), c.fingerprint.size());
  w.put<std::uint64_t>(c.params.size());
  for (const auto& [name, r] : c.params) w.record(name, r);
  w.bytes("ADAM", 4);
  w.put<std::uint64_t>(c.step);
  w.put<std::uint64_t>(c.moments.size());
  for (const auto& [name, r] : c.moments) w.record(name, r);
  w.finish();
}

Contents read(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "GRET", 4) != 0) throw CheckpointError("'" + path + "' is not a checkpoint");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  Contents c;
  r.bytes(c.fingerprint.data(), c.fingerprint.size());
  for (auto n = r.get<std::uint64_t>(); n > 0; --n) c.params.insert(r.record());
  if (r.at_end()) return c;
  r.bytes(magic, 4);
  if (std::memcmp(magic, "ADAM", 4) != 0) throw CheckpointError("'" + path + "': bad optimizer section");
  c.step = r.get<std::uint64_t>();
  for (auto n = r.get<std::uint64_t>(); n > 0; --n) c.moments.insert(r.record());
  return c;
}

void save(const std::string& path, const GretModel& model, const train::Adam& adam) {
  Contents c;
  c.fingerprint = model.config().architecture_fingerprint();
  for (const auto& [name, t] : model.params().items()) {
    c.params[name] = {t.shape(), {t.data().begin(), t.data().end()}};
    if (auto it = adam.first().find(name); it != adam.first().end()) {
      c.moments["m/" + name] = {t.shape(), it->second};
      c.moments["v/" + name] = {t.shape(), adam.second().at(name)};
    }
  }
  c.step = adam.steps();
  write(path, c);
}

void load(const std::string& path, GretModel& model, train::Adam& adam) {
  const auto c = read(path);
  if (c.fingerprint != model.config().architecture_fingerprint()) {
    throw CheckpointError("'" + path + "' was written by a different architecture (fingerprint " +
                          to_hex(c.fingerprint).substr(0, 16) + ", model " +
                          to_hex(model.config().architecture_fingerprint()).substr(0, 16) + ")");
  }
  for (auto& [name, t] : model.params().items()) {
    auto it = c.params.find(name);
    if (it == c.params.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    Tensor handle = t;
    copy_into(handle, it->second, name);
  }
  if (c.params.size() != model.params().size()) {
    throw CheckpointError("checkpoint holds parameters this model does not have");
  }
  adam = train::Adam();
  adam.set_steps(c.step);
  for (const auto& [key, r] : c.moments) {
    const std::string name = key.substr(2);
    if (!model.params().contains(name)) throw CheckpointError("optimizer state for unknown '" + name + "'");
    (key[0] == 'm' ? adam.first() : adam.second())[name] = r.values;
  }
}

std::vector<std::string> load_init(const std::string& path, GretModel& model) {
  const auto c = read(path);
  auto base_cfg = model.config();
  base_cfg.flags = {};
  if (c.fingerprint != model.config().architecture_fingerprint() &&
      c.fingerprint != base_cfg.architecture_fingerprint()) {
    throw CheckpointError("'" + path + "' is not compatible with this model's architecture");
  }
  std::vector<std::string> copied;
  for (auto& [name, t] : model.params().items()) {
    auto it = c.params.find(name);
    if (it == c.params.end()) {
      if (!gret_only(name)) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
      continue;
    }
    Tensor handle = t;
    copy_into(handle, it->second, name);
    copied.push_back(name);
  }
  return copied;
}

}  // namespace gret::checkpoint
