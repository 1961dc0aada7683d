#pragma once

// Persistence formats.
//
// Tensor file (.mmtf), all integers little-endian:
//   "MMTF" | u32 version | u32 dtype (1 = f32-le) | u32 rank | u64 dims[rank] | f32 payload
// The payload holds exactly product(dims) values in row-major order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "modmap/camera.hpp"
#include "modmap/encoders.hpp"
#include "modmap/error.hpp"
#include "modmap/raster.hpp"

namespace modmap::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;

class ByteWriter {
public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }

private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
public:
  ByteReader(std::span<const unsigned char> data, std::string what) : data_(data), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(what_ + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

private:
  std::span<const unsigned char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, std::span<const unsigned char> data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string dims_string(std::span<const std::uint64_t> dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
  if (t.element_count() != t.values.size())
    throw DimensionMismatch("tensor dims " + dims_string(t.dims) + " hold " + std::to_string(t.element_count()) +
                            " values, got " + std::to_string(t.values.size()));
  ByteWriter w;
  w.bytes("MMTF", 4);
  w.u32(kTensorVersion);
  w.u32(kDtypeF32);
  w.u32(static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) w.u64(d);
  w.f32s(t.values);
  return w.buffer();
}

inline Tensor decode_tensor(std::span<const unsigned char> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.raw(4) != "MMTF") throw DataError(what + ": not a tensor file (bad magic)");
  const auto version = r.u32();
  if (version != kTensorVersion)
    throw DataError(what + ": unsupported tensor format version " + std::to_string(version));
  if (r.u32() != kDtypeF32) throw DataError(what + ": unsupported dtype");
  Tensor t;
  t.dims.resize(r.u32());
  for (auto& d : t.dims) d = r.u64();
  const auto n = t.element_count();
  if (r.remaining() != n * 4)
    throw DataError(what + ": payload is " + std::to_string(r.remaining()) + " bytes, dims " +
                    dims_string(t.dims) + " need " + std::to_string(n * 4));
  t.values.resize(n);
  for (auto& v : t.values) v = r.f32();
  return t;
}

inline void save_tensor(const fs::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

inline Tensor load_tensor(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file " + path.string());
  return decode_tensor(read_file(path), path.string());
}

inline Tensor to_tensor(const Raster& r) { return {{r.height, r.width}, r.values}; }

inline Raster to_raster(const Tensor& t, const std::string& what) {
  if (t.dims.size() != 2) throw DimensionMismatch(what + ": expected a rank-2 tensor, got " + dims_string(t.dims));
  Raster r;
  r.height = t.dims[0];
  r.width = t.dims[1];
  r.values = t.values;
  return r;
}

inline Tensor to_tensor(const FeatureMap& f) { return {{f.h, f.w, f.c}, f.data}; }

inline void save_features(const fs::path& path, const FeatureMap& f) { save_tensor(path, to_tensor(f)); }

/// Imports an externally computed h x w x c feature tensor.
inline FeatureMap load_features(const fs::path& path, std::size_t h, std::size_t w, std::size_t c,
                                Modality modality = Modality::image, std::size_t view_index = 0) {
  const Tensor t = load_tensor(path);
  const std::vector<std::uint64_t> expected{h, w, c};
  if (t.dims != expected)
    throw DimensionMismatch(path.string() + ": shape " + dims_string(t.dims) + " but expected " +
                            dims_string(expected));
  for (std::size_t i = 0; i < t.values.size(); ++i)
    if (!std::isfinite(t.values[i]))
      throw NumericError(path.string() + ": non-finite value at flat index " + std::to_string(i));
  return {h, w, c, t.values, modality, view_index};
}

// PGM, binary (P5). 16-bit samples are big-endian per the format.
inline void save_pgm(const fs::path& path, const Raster& r, unsigned maxval, double lo = 0.0, double hi = 1.0) {
  std::ostringstream head;
  head << "P5\n" << r.width << " " << r.height << "\n" << maxval << "\n";
  std::string s = head.str();
  std::vector<unsigned char> out(s.begin(), s.end());
  for (float v : r.values) {
    const double t = std::clamp((double(v) - lo) / (hi - lo), 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(t * maxval));
    if (maxval > 255) out.push_back(static_cast<unsigned char>(q >> 8));
    out.push_back(static_cast<unsigned char>(q & 0xff));
  }
  write_file(path, out);
}

inline Raster load_pgm(const fs::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += char(bytes[pos++]);
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM");
  Raster r;
  unsigned long maxval = 0;
  try {
    r.width = std::stoul(token());
    r.height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  ++pos; // single whitespace after maxval
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  if (maxval == 0 || bytes.size() - pos < r.width * r.height * bpp) throw DataError(path.string() + ": truncated PGM");
  r.values.resize(r.width * r.height);
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    unsigned v = bpp == 2 ? (unsigned(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1] : bytes[pos + i];
    r.values[i] = static_cast<float>(double(v) / double(maxval));
  }
  return r;
}

/// Rounds intensities to the 16-bit grid used on disk so that in-memory and
/// reloaded images are bitwise identical.
inline void quantize16(Raster& r) {
  for (auto& v : r.values) {
    const double t = std::clamp(double(v), 0.0, 1.0);
    v = static_cast<float>(double(std::lround(t * 65535.0)) / 65535.0);
  }
}

inline nlohmann::json calib_to_json(const CameraCalib& c, std::size_t width, std::size_t height) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
          {"width", width}, {"height", height}, {"cam_to_world", c.cam_to_world}};
}

inline CameraCalib calib_from_json(const nlohmann::json& j) {
  CameraCalib c;
  try {
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.cam_to_world = j.at("cam_to_world").get<std::array<double, 16>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed calibration: ") + e.what());
  }
  c.validate();
  return c;
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::span<const unsigned char> data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

/// Digest over the relative paths and contents of every file below root.
inline std::uint64_t directory_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& f : files) {
    h = fnv1a(f.generic_string(), h);
    const auto bytes = read_file(root / f);
    h = fnv1a(bytes, h);
  }
  return h;
}

} // namespace modmap::io
