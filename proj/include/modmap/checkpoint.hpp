#pragma once

// Model checkpoint (.mmap), integers little-endian:
//   "MMAP" | u32 version | u64 seed | u64 config digest
//   | u32 n_views | u32 n_classes | u32 c_image | u32 c_depth | u32 modulator_hidden
//   | u32 k, u32 hidden_i2d[k] | u32 k, u32 hidden_d2i[k]
//   | str encoder config (JSON)
//   | u32 submodules, each: str name | u32 layers, each: u32 out | u32 in | f32 weight[out*in] | f32 bias[out]
//   | u64 FNV-1a of every preceding byte
// Strings are u32 length + bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "modmap/config.hpp"
#include "modmap/io.hpp"
#include "modmap/modmap.hpp"

namespace modmap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModMapModel model;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
};

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  const ModMapModel& m = ck.model;
  io::ByteWriter w;
  w.bytes("MMAP", 4);
  w.u32(kCheckpointVersion);
  w.u64(ck.seed);
  w.u64(ck.config_digest);
  for (std::size_t v : {m.dims.n_views, m.dims.n_classes, m.dims.c_image, m.dims.c_depth, m.dims.modulator_hidden})
    w.u32(static_cast<std::uint32_t>(v));
  for (const auto* hidden : {&m.dims.hidden_i2d, &m.dims.hidden_d2i}) {
    w.u32(static_cast<std::uint32_t>(hidden->size()));
    for (std::size_t h : *hidden) w.u32(static_cast<std::uint32_t>(h));
  }
  w.str(encoder_to_json(m.encoder).dump());
  const auto subs = m.submodules();
  w.u32(static_cast<std::uint32_t>(subs.size()));
  for (const auto& [name, net] : subs) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(net->depth()));
    for (const auto& layer : net->layers()) {
      w.u32(static_cast<std::uint32_t>(layer.out_dim()));
      w.u32(static_cast<std::uint32_t>(layer.in_dim()));
      w.f32s(layer.weight.flat());
      w.f32s(layer.bias);
    }
  }
  const std::uint64_t sum = io::fnv1a(w.buffer());
  w.u64(sum);
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::string& what) {
  if (bytes.size() < 8) throw DataError(what + ": truncated checkpoint");
  io::ByteReader tail(bytes.subspan(bytes.size() - 8), what);
  if (tail.u64() != io::fnv1a(bytes.first(bytes.size() - 8))) throw DataError(what + ": checksum mismatch");

  io::ByteReader r(bytes.first(bytes.size() - 8), what);
  if (r.raw(4) != "MMAP") throw DataError(what + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(what + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.seed = r.u64();
  ck.config_digest = r.u64();
  ModelDims d;
  d.n_views = r.u32();
  d.n_classes = r.u32();
  d.c_image = r.u32();
  d.c_depth = r.u32();
  d.modulator_hidden = r.u32();
  for (auto* hidden : {&d.hidden_i2d, &d.hidden_d2i}) {
    hidden->resize(r.u32());
    for (auto& h : *hidden) h = r.u32();
  }
  EncoderConfig enc;
  try {
    enc = encoder_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw DataError(what + ": malformed encoder config: " + e.what());
  }
  // Build the expected architecture, then check every stored layer against it.
  ck.model = ModMapModel::create(d, enc, 0);
  auto subs = ck.model.submodules();
  if (r.u32() != subs.size()) throw DataError(what + ": unexpected submodule count");
  for (auto& [name, net] : subs) {
    const std::string stored = r.str();
    if (stored != name) throw DataError(what + ": expected submodule " + name + ", found " + stored);
    if (r.u32() != net->depth()) throw DimensionMismatch(what + ": " + name + " has the wrong number of layers");
    for (auto& layer : net->mutable_layers()) {
      const std::size_t out = r.u32(), in = r.u32();
      if (out != layer.out_dim() || in != layer.in_dim())
        throw DimensionMismatch(what + ": " + name + " layer is " + std::to_string(out) + "x" + std::to_string(in) +
                                ", dims imply " + std::to_string(layer.out_dim()) + "x" +
                                std::to_string(layer.in_dim()));
      for (auto& v : layer.weight.flat()) v = r.f32();
      for (auto& v : layer.bias) v = r.f32();
    }
  }
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes after parameters");
  return ck;
}

inline void save_checkpoint(const io::fs::path& path, const Checkpoint& ck) { io::write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const io::fs::path& path) {
  if (!io::fs::exists(path)) throw DataError("missing checkpoint " + path.string());
  return decode_checkpoint(io::read_file(path), path.string());
}

} // namespace modmap
