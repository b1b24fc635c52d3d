#pragma once

// Binary checkpoint format, all integers little-endian:
//
//   "VAEN"                      magic, 4 bytes
//   u8   version                currently 1
//   u32  metadata count
//   per entry:  u32 key length, key bytes, u32 value length, value bytes (UTF-8)
//   u32  parameter count
//   per parameter: u32 name length, name bytes, u32 rank, rank x u64 extents,
//                  product(extents) x IEEE-754 binary64
//
// Metadata entries and parameters are written in lexicographic key order and
// numbers are written in shortest round-trip form, so saving the same
// checkpoint twice produces the same bytes.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "vaeneu/data.hpp"
#include "vaeneu/model.hpp"

namespace vaeneu {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint8_t format_version = kCheckpointVersion;
  ModelConfig model;  // resolved sizes
  std::size_t horizon = 0;
  NormalizationStats stats;
  std::map<std::string, Tensor> parameters;
  double best_validation_crps = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  std::string model_id() const { return "vaeneu-" + to_string(model.backbone); }

  VaeneuModel build_model() const { return VaeneuModel::from_parameters(model, parameters); }

  bool operator==(const Checkpoint& o) const {
    auto same_bits = [](double a, double b) {
      return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
    };
    if (format_version != o.format_version || horizon != o.horizon || step != o.step ||
        !same_bits(stats.mean, o.stats.mean) || !same_bits(stats.std, o.stats.std) ||
        !same_bits(best_validation_crps, o.best_validation_crps) ||
        model.backbone != o.model.backbone || model.history_size != o.model.history_size ||
        model.hidden_size != o.model.hidden_size || model.latent_size != o.model.latent_size ||
        model.tcn_layers != o.model.tcn_layers || model.kernel_size != o.model.kernel_size ||
        model.sample_size != o.model.sample_size || !same_bits(model.kl_weight, o.model.kl_weight) ||
        parameters.size() != o.parameters.size()) {
      return false;
    }
    for (const auto& [name, t] : parameters) {
      auto it = o.parameters.find(name);
      if (it == o.parameters.end() || it->second.shape() != t.shape()) return false;
      if (std::memcmp(t.values().data(), it->second.values().data(), t.size() * sizeof(double)))
        return false;
    }
    return true;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    copy(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    copy(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void copy(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated or corrupt");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw CheckpointError("metadata '" + key + "' is not an integer: '" + s + "'");
  }
  return v;
}

inline double parse_real(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw CheckpointError("metadata '" + key + "' is not a number: '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::map<std::string, std::string> meta{
      {"backbone", to_string(c.model.backbone)},
      {"history_size", std::to_string(c.model.history_size)},
      {"hidden_size", std::to_string(c.model.hidden_size)},
      {"latent_size", std::to_string(c.model.latent_size)},
      {"tcn_layers", std::to_string(c.model.tcn_layers)},
      {"kernel_size", std::to_string(c.model.kernel_size)},
      {"sample_size", std::to_string(c.model.sample_size)},
      {"kl_weight", detail::format_double(c.model.kl_weight)},
      {"horizon", std::to_string(c.horizon)},
      {"norm_mean", detail::format_double(c.stats.mean)},
      {"norm_std", detail::format_double(c.stats.std)},
      {"best_validation_crps", detail::format_double(c.best_validation_crps)},
      {"step", std::to_string(c.step)},
  };
  detail::ByteWriter w;
  w.raw("VAEN", 4);
  w.u8(c.format_version);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.parameters.size()));
  for (const auto& [name, t] : c.parameters) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.copy(magic, 4);
  if (std::memcmp(magic, "VAEN", 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.format_version = r.u8();
  if (c.format_version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.format_version));
  }
  std::map<std::string, std::string> meta;
  const std::uint32_t entries = r.u32();
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string k = r.str();
    meta[k] = r.str();
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  try {
    c.model.backbone = parse_backbone(get("backbone"));
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  c.model.history_size = detail::parse_size(get("history_size"), "history_size");
  c.model.hidden_size = detail::parse_size(get("hidden_size"), "hidden_size");
  c.model.latent_size = detail::parse_size(get("latent_size"), "latent_size");
  c.model.tcn_layers = detail::parse_size(get("tcn_layers"), "tcn_layers");
  c.model.kernel_size = detail::parse_size(get("kernel_size"), "kernel_size");
  c.model.sample_size = detail::parse_size(get("sample_size"), "sample_size");
  c.model.kl_weight = detail::parse_real(get("kl_weight"), "kl_weight");
  c.horizon = detail::parse_size(get("horizon"), "horizon");
  c.stats.mean = detail::parse_real(get("norm_mean"), "norm_mean");
  c.stats.std = detail::parse_real(get("norm_std"), "norm_std");
  c.best_validation_crps = detail::parse_real(get("best_validation_crps"), "best_validation_crps");
  c.step = detail::parse_size(get("step"), "step");

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("parameter '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) throw CheckpointError("checkpoint is truncated or corrupt");
    std::vector<double> values(n);
    r.copy(values.data(), n * sizeof(double));
    if (!c.parameters.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw CheckpointError("duplicate parameter '" + name + "'");
    }
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
  try {
    c.build_model();
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint parameters do not match its configuration: ") +
                          e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint configuration invalid: ") + e.what());
  }
  return c;
}

/// Writes `content` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("failed writing '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize_checkpoint(bytes);
}

}  // namespace vaeneu
