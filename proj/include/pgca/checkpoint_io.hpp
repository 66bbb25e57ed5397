// Binary checkpoint container: magic, version, config text, named tensors,
// frozen manifest, step and optimizer moments, CRC-32 trailer.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pgca/binary_io.hpp"
#include "pgca/model.hpp"

namespace pgca {

inline constexpr char kCheckpointMagic[8] = {'P', 'G', 'C', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelCheckpoint& c) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.str(c.config.serialize());
  w.u32(static_cast<std::uint32_t>(c.stage));
  w.u64(c.step);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& [name, t] : c.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double x : t.data()) w.f64(x);
  }
  w.u32(static_cast<std::uint32_t>(c.frozen.size()));
  for (const auto& n : c.frozen) w.str(n);
  w.u64(c.optimizer.step);
  w.u32(static_cast<std::uint32_t>(c.optimizer.moments.size()));
  for (const auto& [name, m] : c.optimizer.moments) {
    w.str(name);
    w.u64(m.m.size());
    for (double x : m.m) w.f64(x);
    for (double x : m.v) w.f64(x);
  }
  w.seal();
  return w.bytes();
}

inline ModelCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 8) != std::string_view(kCheckpointMagic, 8)) {
    throw FormatError("checkpoint: bad magic");
  }
  ByteReader r(bytes, "checkpoint");
  r.unseal();
  r.raw(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelCheckpoint c;
  try {
    c.config = ModelConfig::deserialize(r.str());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: bad config: ") + e.what());
  }
  c.stage = static_cast<int>(r.u32());
  if (c.stage != 1 && c.stage != 2) throw FormatError("checkpoint: bad stage " + std::to_string(c.stage));
  c.step = r.u64();
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw FormatError("checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.u64();
      if (e == 0 || e > (std::size_t{1} << 32)) throw FormatError("checkpoint: bad extent for '" + name + "'");
      n *= e;
      r.need(n * 8);
    }
    std::vector<double> v(n);
    for (double& x : v) x = r.f64();
    c.params.add(std::move(name), Tensor::from(std::move(shape), std::move(v), true));
  }
  const std::uint32_t n_frozen = r.u32();
  r.need(n_frozen);
  for (std::uint32_t i = 0; i < n_frozen; ++i) c.frozen.push_back(r.str());
  c.optimizer.step = r.u64();
  const std::uint32_t n_moments = r.u32();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    std::string name = r.str();
    const std::uint64_t n = r.u64();
    r.need(n * 16);
    Moments m;
    m.m.resize(n);
    m.v.resize(n);
    for (double& x : m.m) x = r.f64();
    for (double& x : m.v) x = r.f64();
    c.optimizer.moments.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  // The parameter set must be exactly what the config describes.
  const ParamStore expected = init_params(c.config, Rng(0));
  if (expected.names() != c.params.names()) throw FormatError("checkpoint: parameters do not match the config");
  for (const auto& [name, t] : expected) {
    if (t.shape() != c.params.get(name).shape()) throw FormatError("checkpoint: wrong shape for '" + name + "'");
  }
  return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::string& path) { write_file(path, encode_checkpoint(c)); }
inline ModelCheckpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace pgca
