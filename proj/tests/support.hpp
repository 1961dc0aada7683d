#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "modmap/datagen.hpp"
#include "modmap/encoders.hpp"
#include "modmap/rng.hpp"

namespace modmap::testing {

using namespace modmap::datagen;

inline SceneSpec small_scene(std::size_t n_views, std::size_t side = 64, Primitive p = Primitive::sphere) {
  SceneSpec s;
  s.primitive = p;
  s.n_views = n_views;
  s.width = s.height = side;
  if (p == Primitive::box) s.size = {0.7, 0.5, 0.6};
  return s;
}

inline std::vector<ViewFeatures> encode_scene(const SceneSpec& s, const EncoderConfig& enc = {}) {
  std::vector<ViewFeatures> out;
  for (const auto& v : render_views(s).views) out.push_back(encode_view(v, enc));
  return out;
}

/// Random features on an h x w grid; every cell counts as foreground.
inline ViewFeatures random_features(std::size_t h, std::size_t w, std::size_t ci, std::size_t cd, Rng& rng) {
  ViewFeatures f;
  f.image = {h, w, ci, std::vector<float>(h * w * ci), Modality::image, 0};
  f.depth = {h, w, cd, std::vector<float>(h * w * cd), Modality::depth, 0};
  for (auto& v : f.image.data) v = float(rng.uniform(-1, 1));
  for (auto& v : f.depth.data) v = float(rng.uniform(-1, 1));
  f.valid = Raster(h, w, 1.0f);
  return f;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("modmap_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace modmap::testing
