#pragma once

// On-disk dataset layout:
//   <root>/manifest.json
//   <root>/<category>/grid.json
//   <root>/<category>/{train|test}/<instance_id>/view_<k>/{image.pgm, depth.mmtf, calib.json}
//   <root>/<category>/test/<instance_id>/{gt_volume.mmtf, label.txt}
// Images are 16-bit binary PGM; depth and ground truth use the tensor format.

#include <algorithm>
#include <string>
#include <vector>

#include "modmap/config.hpp"
#include "modmap/datagen.hpp"
#include "modmap/io.hpp"
#include "modmap/metrics.hpp"

namespace modmap::dataset {

namespace fs = io::fs;

inline void write_views(const fs::path& dir, const std::vector<ViewSample>& views) {
  for (std::size_t k = 0; k < views.size(); ++k) {
    const fs::path vd = dir / ("view_" + std::to_string(k));
    fs::create_directories(vd);
    io::save_pgm(vd / "image.pgm", views[k].image, 65535);
    io::save_tensor(vd / "depth.mmtf", io::to_tensor(views[k].depth));
    io::write_text(vd / "calib.json", io::calib_to_json(views[k].calib, views[k].image.width, views[k].image.height).dump(2) + "\n");
  }
}

inline std::vector<ViewSample> read_views(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing instance directory " + dir.string());
  std::vector<ViewSample> views;
  for (std::size_t k = 0;; ++k) {
    const fs::path vd = dir / ("view_" + std::to_string(k));
    if (!fs::is_directory(vd)) break;
    ViewSample v;
    v.view_index = k;
    if (!fs::exists(vd / "calib.json")) throw DataError("missing calibration " + (vd / "calib.json").string());
    v.image = io::load_pgm(vd / "image.pgm");
    v.depth = io::to_raster(io::load_tensor(vd / "depth.mmtf"), (vd / "depth.mmtf").string());
    try {
      v.calib = io::calib_from_json(json::parse(io::read_text(vd / "calib.json")));
    } catch (const json::parse_error& e) {
      throw DataError((vd / "calib.json").string() + ": " + e.what());
    }
    v.validate();
    views.push_back(std::move(v));
  }
  if (views.empty()) throw DataError(dir.string() + " holds no view_<k> directories");
  return views;
}

inline json defect_json(const datagen::DefectSpec& d, const std::vector<std::size_t>& seen_by) {
  return {{"kind", datagen::to_string(d.kind)}, {"center", d.center},       {"radius", d.radius},
          {"magnitude", d.magnitude},          {"visibility", datagen::to_string(d.visibility)},
          {"visible_in_views", seen_by}};
}

inline json artefact_json(const datagen::ArtefactSpec& a) {
  return {{"kind", datagen::to_string(a.kind)}, {"affected_view", a.affected_view}, {"center_u", a.center_u},
          {"center_v", a.center_v},             {"radius", a.radius},               {"peak", a.peak}};
}

inline json manifest_json(const datagen::Benchmark& bench, const datagen::BenchmarkConfig& cfg) {
  json cats = json::array();
  for (const auto& cls : bench.classes) {
    json tests = json::array();
    for (const auto& inst : cls.test) {
      json defects = json::array();
      for (std::size_t j = 0; j < inst.defects.size(); ++j) defects.push_back(defect_json(inst.defects[j], inst.defect_views[j]));
      json artefacts = json::array();
      for (const auto& a : inst.artefacts) artefacts.push_back(artefact_json(a));
      tests.push_back({{"id", inst.id}, {"label", inst.label}, {"defects", defects}, {"artefacts", artefacts}});
    }
    cats.push_back({{"name", cls.name},
                    {"primitive", datagen::to_string(cls.scene.primitive)},
                    {"n_views", cls.scene.n_views},
                    {"resolution", {cls.scene.height, cls.scene.width}},
                    {"grid", grid_to_json(cls.grid)},
                    {"train", json::array({cls.train.id})},
                    {"test", tests}});
  }
  return {{"seed", bench.seed},
          {"n_nominal_test", cfg.n_nominal_test},
          {"n_defective_test", cfg.n_defective_test},
          {"artefacts", cfg.artefacts},
          {"categories", cats}};
}

/// Writes the benchmark below root; root must not exist unless force is set.
inline void write_benchmark(const fs::path& root, const datagen::Benchmark& bench, const datagen::BenchmarkConfig& cfg,
                            bool force) {
  if (fs::exists(root)) {
    if (!force) throw UsageError(root.string() + " already exists (use --force to overwrite)");
    fs::remove_all(root);
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError("cannot create " + root.string() + ": " + ec.message());
  for (const auto& cls : bench.classes) {
    const fs::path cd = root / cls.name;
    fs::create_directories(cd);
    io::write_text(cd / "grid.json", grid_to_json(cls.grid).dump(2) + "\n");
    write_views(cd / "train" / cls.train.id, cls.train.views);
    for (const auto& inst : cls.test) {
      const fs::path id = cd / "test" / inst.id;
      write_views(id, inst.views);
      std::vector<float> gt(inst.gt_mask.begin(), inst.gt_mask.end());
      const auto& d = cls.grid.dims;
      io::save_tensor(id / "gt_volume.mmtf", {{d[0], d[1], d[2]}, gt});
      io::write_text(id / "label.txt", std::to_string(inst.label) + "\n");
    }
  }
  io::write_text(root / "manifest.json", manifest_json(bench, cfg).dump(2) + "\n");
}

/// Category directories (those holding a grid.json), sorted by name.
inline std::vector<std::string> list_categories(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset " + root.string() + " does not exist");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "grid.json")) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError(root.string() + " holds no categories");
  return out;
}

inline std::vector<std::string> list_instances(const fs::path& root, const std::string& category, const std::string& split) {
  const fs::path dir = root / category / split;
  if (!fs::is_directory(dir)) throw DataError("missing " + dir.string());
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline GridSpec read_grid(const fs::path& root, const std::string& category) {
  const fs::path p = root / category / "grid.json";
  if (!fs::exists(p)) throw DataError("missing " + p.string());
  return grid_from_json(json::parse(io::read_text(p)));
}

inline int read_label(const fs::path& instance_dir) {
  const fs::path p = instance_dir / "label.txt";
  if (!fs::exists(p)) throw DataError("missing " + p.string());
  const std::string s = io::read_text(p);
  if (s.empty() || (s[0] != '0' && s[0] != '1')) throw DataError(p.string() + ": label must be 0 or 1");
  return s[0] - '0';
}

inline metrics::GroundTruthVolume read_gt(const fs::path& instance_dir, const GridSpec& grid) {
  const fs::path p = instance_dir / "gt_volume.mmtf";
  const auto t = io::load_tensor(p);
  const std::vector<std::uint64_t> expected{grid.dims[0], grid.dims[1], grid.dims[2]};
  if (t.dims != expected)
    throw DimensionMismatch(p.string() + ": shape " + io::dims_string(t.dims) + " but grid is " + io::dims_string(expected));
  std::vector<std::uint8_t> mask(t.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = t.values[i] > 0.5f ? 1 : 0;
  return metrics::GroundTruthVolume::from_mask(std::move(mask), grid.dims);
}

} // namespace modmap::dataset
