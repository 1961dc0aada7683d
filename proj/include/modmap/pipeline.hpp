#pragma once

// End-to-end commands over the on-disk dataset layout. A run directory holds
//   resolved_config.json
//   models/<category>.mmap, models/<category>_loss.csv   (or multiclass.*)
//   results/<category>/<instance_id>/{psi_image_view_<k>.mmtf, psi_depth_view_<k>.mmtf,
//       fused_view_<k>.pgm, volume.mmtf, hits.mmtf, volume.csv, score.txt}
//   metrics.csv, compare.csv

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "modmap/checkpoint.hpp"
#include "modmap/config.hpp"
#include "modmap/dataset.hpp"
#include "modmap/datagen.hpp"
#include "modmap/encoders.hpp"
#include "modmap/inference.hpp"
#include "modmap/io.hpp"
#include "modmap/metrics.hpp"
#include "modmap/modmap.hpp"
#include "modmap/volume.hpp"

namespace modmap::pipeline {

namespace fs = io::fs;

inline std::vector<ViewFeatures> encode_all(const std::vector<ViewSample>& views, const EncoderConfig& enc) {
  std::vector<ViewFeatures> out(views.size());
  parallel_for(views.size(), [&](std::size_t k) { out[k] = encode_view(views[k], enc); });
  return out;
}

inline std::vector<ViewGeometry> geometry(const std::vector<ViewSample>& views) {
  std::vector<ViewGeometry> g;
  for (const auto& v : views) g.push_back({&v.depth, &v.calib});
  return g;
}

inline std::vector<Raster> fuse_views(const std::vector<ModalityMaps>& per_view, FuseFunction fuse) {
  std::vector<Raster> out;
  for (const auto& m : per_view) out.push_back(fuse_modalities(m.image, m.depth, fuse));
  return out;
}

inline AggregateResult build_volume(const std::vector<ModalityMaps>& per_view, const std::vector<ViewSample>& views,
                                    const GridSpec& grid, FuseFunction fuse, UpsamplePolicy up) {
  return aggregate(fuse_views(per_view, fuse), geometry(views), grid, up);
}

struct InstanceOutput {
  AnomalyMapSet maps;
  AggregateResult volume;
  double score = 0;
};

inline InstanceOutput run_instance(const ModMapModel& model, const std::vector<ViewSample>& views, const GridSpec& grid,
                                   const InferOptions& opt, FuseFunction fuse, UpsamplePolicy up) {
  InstanceOutput o;
  o.maps = infer_views(model, encode_all(views, model.encoder), opt);
  o.volume = build_volume(o.maps.per_view, views, grid, fuse, up);
  o.score = instance_score(o.volume.grid);
  return o;
}

inline InferOptions infer_options(const RunConfig& c, std::size_t class_index, std::uint64_t seed) {
  InferOptions o;
  o.subsample_k = c.subsample_k;
  o.seed = seed;
  o.source_mode = c.source_mode;
  o.background_threshold = c.background_threshold;
  o.class_index = class_index;
  return o;
}

/// Seed of the source-view draw for one test instance.
inline std::uint64_t instance_seed(const RunConfig& c, const std::string& category, const std::string& id) {
  return derive_seed(c.seed, io::fnv1a(category + "/" + id));
}

// ---------------------------------------------------------------------------
// Metrics rows

struct Scored {
  double score = 0;
  int label = 0;
  const VoxelGrid* grid = nullptr;
  const metrics::GroundTruthVolume* gt = nullptr;
};

struct CategoryMetrics {
  std::string category;
  double i_auroc = 0;
  std::vector<double> v_aupro; // one per fpr limit
};

/// I-AUROC over instance scores and pooled V-AUPRO over every test volume.
inline CategoryMetrics evaluate_category(const std::string& name, const std::vector<Scored>& items,
                                         const std::vector<double>& fpr_limits, const metrics::ProOptions& pro) {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<metrics::ProSample> samples;
  for (const auto& it : items) {
    scores.push_back(it.score);
    labels.push_back(it.label);
    samples.push_back({it.grid, it.gt});
  }
  CategoryMetrics m{name, metrics::auroc(scores, labels), {}};
  const auto curve = metrics::pro_curve(std::span<const metrics::ProSample>(samples), pro);
  for (double f : fpr_limits) m.v_aupro.push_back(metrics::aupro_at(curve, f));
  return m;
}

inline std::string fpr_tag(double f) {
  std::ostringstream s;
  s << f * 100 << "%";
  return s.str();
}

inline std::string format_metrics_csv(const std::vector<CategoryMetrics>& rows, const std::vector<double>& fpr_limits,
                                      const std::string& lead_name = {}, const std::vector<std::string>& lead = {}) {
  std::ostringstream s;
  s << "# V-AUPRO: FPR is taken over observed voxels only (voxels no view projects into are ignored)\n";
  if (!lead_name.empty()) s << lead_name << ",";
  s << "category,I-AUROC";
  for (double f : fpr_limits) s << ",V-AUPRO@" << fpr_tag(f);
  s << "\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!lead_name.empty()) s << lead[i] << ",";
    s << rows[i].category << "," << rows[i].i_auroc;
    for (double v : rows[i].v_aupro) s << "," << v;
    s << "\n";
  }
  return s.str();
}

/// Appends the mean row over the given category rows.
inline CategoryMetrics mean_row(const std::vector<CategoryMetrics>& rows) {
  CategoryMetrics m{"mean", 0, std::vector<double>(rows.empty() ? 0 : rows.front().v_aupro.size(), 0.0)};
  for (const auto& r : rows) {
    m.i_auroc += r.i_auroc / double(rows.size());
    for (std::size_t k = 0; k < r.v_aupro.size(); ++k) m.v_aupro[k] += r.v_aupro[k] / double(rows.size());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Commands

inline std::vector<std::string> resolve_categories(const RunConfig& c) {
  if (c.categories.empty()) return dataset::list_categories(c.dataset);
  for (const auto& cat : c.categories)
    if (!fs::exists(fs::path(c.dataset) / cat / "grid.json"))
      throw DataError("category '" + cat + "' not found in " + c.dataset);
  return c.categories;
}

inline GridSpec grid_for(const RunConfig& c, const std::string& category) {
  return c.grid ? *c.grid : dataset::read_grid(c.dataset, category);
}

inline void write_resolved_config(const RunConfig& c) {
  fs::create_directories(c.out);
  io::write_text(fs::path(c.out) / "resolved_config.json", to_json(c, true).dump(2) + "\n");
}

inline std::string loss_csv(const TrainResult& r) {
  std::ostringstream s;
  s << "epoch,mean_loss\n" << std::setprecision(9);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) s << e + 1 << "," << r.epoch_loss[e] << "\n";
  return s.str();
}

inline std::vector<ViewSample> read_train_instance(const RunConfig& c, const std::string& category) {
  const auto ids = dataset::list_instances(c.dataset, category, "train");
  if (ids.size() != 1)
    throw DataError("category '" + category + "' needs exactly one nominal training instance, found " +
                    std::to_string(ids.size()));
  return dataset::read_views(fs::path(c.dataset) / category / "train" / ids.front());
}

inline void cmd_gen(const RunConfig& c, bool force, std::ostream& log) {
  const auto bench = datagen::make_benchmark(c.seed, c.bench);
  dataset::write_benchmark(c.dataset, bench, c.bench, force);
  for (const auto& cls : bench.classes) {
    std::size_t nominal = 0, defects = 0, single_view = 0, artefacts = 0;
    for (const auto& inst : cls.test) {
      nominal += inst.label == 0;
      defects += inst.defects.size();
      artefacts += inst.artefacts.size();
      for (const auto& seen : inst.defect_views) single_view += seen.size() == 1;
    }
    log << cls.name << ": 1 train, " << cls.test.size() << " test (" << nominal << " nominal, "
        << cls.test.size() - nominal << " defective), " << defects << " defects (" << single_view
        << " seen by one view), " << artefacts << " artefacts\n";
  }
  log << "dataset " << c.dataset << " digest " << io::hex64(io::directory_digest(c.dataset)) << "\n";
}

inline fs::path model_path(const RunConfig& c, const std::string& category) {
  return fs::path(c.out) / "models" / ((c.multiclass ? std::string("multiclass") : category) + ".mmap");
}

inline void cmd_train(const RunConfig& c, std::ostream& log) {
  const auto cats = resolve_categories(c);
  write_resolved_config(c);
  const fs::path models = fs::path(c.out) / "models";
  fs::create_directories(models);
  const std::uint64_t digest = model_digest(c);
  auto progress = [&log](const std::string& name, std::size_t epochs) {
    return [&log, name, epochs](std::size_t e, double loss) {
      if (e == 0 || e + 1 == epochs || (e + 1) % 50 == 0)
        log << name << " epoch " << e + 1 << "/" << epochs << " loss " << loss << "\n";
    };
  };
  if (c.multiclass) {
    std::vector<std::vector<ViewFeatures>> per_class;
    for (const auto& cat : cats) per_class.push_back(encode_all(read_train_instance(c, cat), c.encoder));
    ModMapModel model = ModMapModel::create(c.dims(per_class.front().size(), cats.size()), c.encoder,
                                            derive_seed(c.seed, io::fnv1a("multiclass")));
    TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, io::fnv1a("multiclass/train"));
    const auto r = train_multiclass(model, per_class, tc, progress("multiclass", tc.epochs));
    save_checkpoint(models / "multiclass.mmap", {model, c.seed, digest});
    io::write_text(models / "multiclass_loss.csv", loss_csv(r));
    io::write_text(models / "multiclass.json", json{{"categories", cats}}.dump() + "\n");
    return;
  }
  for (const auto& cat : cats) {
    const auto feats = encode_all(read_train_instance(c, cat), c.encoder);
    ModMapModel model = ModMapModel::create(c.dims(feats.size(), 0), c.encoder, derive_seed(c.seed, io::fnv1a(cat)));
    TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, io::fnv1a(cat + "/train"));
    const auto r = train(model, feats, tc, progress(cat, tc.epochs));
    save_checkpoint(models / (cat + ".mmap"), {model, c.seed, digest});
    io::write_text(models / (cat + "_loss.csv"), loss_csv(r));
  }
}

struct LoadedModel {
  ModMapModel model;
  std::size_t class_index = 0;
};

inline LoadedModel load_model(const RunConfig& c, const std::string& category) {
  const fs::path path = model_path(c, category);
  if (!fs::exists(path))
    throw DataError("no checkpoint " + path.string() + (c.multiclass ? "" : " (was the run trained with --multiclass?)"));
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_digest != model_digest(c))
    throw DataError(path.string() + " was trained with a different configuration (digest " + io::hex64(ck.config_digest) +
                    ", current " + io::hex64(model_digest(c)) + ")");
  LoadedModel out{std::move(ck.model), 0};
  if (c.multiclass) {
    const auto names = json::parse(io::read_text(fs::path(c.out) / "models" / "multiclass.json")).at("categories");
    const auto it = std::find(names.begin(), names.end(), category);
    if (it == names.end()) throw DataError("multi-class model was not trained on '" + category + "'");
    out.class_index = static_cast<std::size_t>(it - names.begin());
  }
  return out;
}

inline fs::path result_dir(const RunConfig& c, const std::string& category, const std::string& id) {
  return fs::path(c.out) / "results" / category / id;
}

inline void write_instance(const fs::path& dir, const std::string& category, const std::string& id, int label,
                           const InstanceOutput& o, FuseFunction fuse) {
  fs::create_directories(dir);
  const auto fused = fuse_views(o.maps.per_view, fuse);
  for (std::size_t k = 0; k < o.maps.per_view.size(); ++k) {
    const std::string v = std::to_string(k);
    io::save_tensor(dir / ("psi_image_view_" + v + ".mmtf"), io::to_tensor(o.maps.per_view[k].image));
    io::save_tensor(dir / ("psi_depth_view_" + v + ".mmtf"), io::to_tensor(o.maps.per_view[k].depth));
    io::save_pgm(dir / ("fused_view_" + v + ".pgm"), fused[k], 255, 0.0, 2.0);
  }
  const auto& g = o.volume.grid;
  const auto& d = g.spec.dims;
  io::save_tensor(dir / "volume.mmtf", {{d[0], d[1], d[2]}, g.scores});
  io::save_tensor(dir / "hits.mmtf", {{d[0], d[1], d[2]}, std::vector<float>(g.hit_counts.begin(), g.hit_counts.end())});
  std::ostringstream csv;
  csv << "x,y,z,score\n" << std::setprecision(9);
  for (std::size_t x = 0; x < d[0]; ++x)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t z = 0; z < d[2]; ++z) {
        const float s = g.scores[g.spec.flat(x, y, z)];
        if (s != 0) csv << x << "," << y << "," << z << "," << s << "\n";
      }
  io::write_text(dir / "volume.csv", csv.str());
  std::ostringstream rec;
  rec << std::setprecision(9) << category << " " << id << " " << label << " " << o.score << "\n";
  io::write_text(dir / "score.txt", rec.str());
}

/// Infers every test instance of the configured categories; `only` restricts
/// to one instance id (optionally written as category/id).
inline void cmd_infer(const RunConfig& c, const std::string& only, std::ostream& log) {
  const auto cats = resolve_categories(c);
  write_resolved_config(c);
  std::size_t done = 0;
  for (const auto& cat : cats) {
    std::string only_id = only;
    if (const auto slash = only.find('/'); slash != std::string::npos) {
      if (only.substr(0, slash) != cat) continue;
      only_id = only.substr(slash + 1);
    }
    const auto ids = dataset::list_instances(c.dataset, cat, "test");
    if (!only_id.empty() && std::find(ids.begin(), ids.end(), only_id) == ids.end()) continue;
    const LoadedModel lm = load_model(c, cat);
    const GridSpec grid = grid_for(c, cat);
    for (const auto& id : ids) {
      if (!only_id.empty() && id != only_id) continue;
      const fs::path src = fs::path(c.dataset) / cat / "test" / id;
      const auto views = dataset::read_views(src);
      const int label = dataset::read_label(src);
      const auto o = run_instance(lm.model, views, grid, infer_options(c, lm.class_index, instance_seed(c, cat, id)),
                                  c.fuse, c.upsample);
      if (o.volume.warn())
        log << "warning: " << cat << "/" << id << " dropped " << o.volume.dropped << " of " << o.volume.projected
            << " points outside the grid\n";
      write_instance(result_dir(c, cat, id), cat, id, label, o, c.fuse);
      log << cat << " " << id << " label " << label << " score " << o.score << "\n";
      ++done;
    }
  }
  if (!only.empty() && done == 0) throw UsageError("no test instance matches '" + only + "'");
}

inline VoxelGrid load_volume(const fs::path& dir, const GridSpec& grid) {
  for (const char* f : {"volume.mmtf", "hits.mmtf", "score.txt"})
    if (!fs::exists(dir / f)) throw DataError("incomplete results: missing " + (dir / f).string());
  const auto s = io::load_tensor(dir / "volume.mmtf");
  const auto h = io::load_tensor(dir / "hits.mmtf");
  const std::vector<std::uint64_t> expected{grid.dims[0], grid.dims[1], grid.dims[2]};
  if (s.dims != expected || h.dims != expected) throw DimensionMismatch(dir.string() + ": volume does not match the grid");
  VoxelGrid g(grid);
  g.scores = s.values;
  for (std::size_t i = 0; i < h.values.size(); ++i) g.hit_counts[i] = static_cast<std::uint32_t>(h.values[i]);
  return g;
}

inline double read_score(const fs::path& dir) {
  std::istringstream in(io::read_text(dir / "score.txt"));
  std::string cat, id;
  int label = 0;
  double score = 0;
  if (!(in >> cat >> id >> label >> score)) throw DataError((dir / "score.txt").string() + ": malformed score record");
  return score;
}

struct LoadedInstance {
  VoxelGrid grid;
  metrics::GroundTruthVolume gt;
  double score = 0;
  int label = 0;
};

inline std::vector<CategoryMetrics> cmd_eval(const RunConfig& c, std::ostream& log) {
  const auto cats = resolve_categories(c);
  std::vector<CategoryMetrics> rows;
  for (const auto& cat : cats) {
    const GridSpec grid = grid_for(c, cat);
    std::vector<LoadedInstance> loaded;
    for (const auto& id : dataset::list_instances(c.dataset, cat, "test")) {
      const fs::path src = fs::path(c.dataset) / cat / "test" / id;
      const fs::path res = result_dir(c, cat, id);
      LoadedInstance li{load_volume(res, grid), dataset::read_gt(src, grid), read_score(res), dataset::read_label(src)};
      loaded.push_back(std::move(li));
    }
    std::vector<Scored> items;
    for (const auto& li : loaded) items.push_back({li.score, li.label, &li.grid, &li.gt});
    rows.push_back(evaluate_category(cat, items, c.fpr_limits, c.pro));
  }
  rows.push_back(mean_row(rows));
  const std::string csv = format_metrics_csv(rows, c.fpr_limits);
  io::write_text(fs::path(c.out) / "metrics.csv", csv);
  log << csv;
  return rows;
}

/// Parses "fuse=max,min,product,mean".
inline std::vector<FuseFunction> parse_compare(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || spec.substr(0, eq) != "fuse")
    throw UsageError("--compare expects fuse=<f1>,<f2>,... (got '" + spec + "')");
  std::vector<FuseFunction> out;
  std::stringstream list(spec.substr(eq + 1));
  for (std::string item; std::getline(list, item, ',');) out.push_back(parse_fuse(item));
  if (out.empty()) throw UsageError("--compare needs at least one fuse function");
  return out;
}

/// Re-aggregates the stored per-view maps under each fuse function.
inline std::vector<CategoryMetrics> cmd_compare(const RunConfig& c, const std::vector<FuseFunction>& fuses,
                                                std::ostream& log) {
  const auto cats = resolve_categories(c);
  std::vector<CategoryMetrics> rows;
  std::vector<std::string> lead;
  for (FuseFunction f : fuses) {
    std::vector<CategoryMetrics> per_fuse;
    for (const auto& cat : cats) {
      const GridSpec grid = grid_for(c, cat);
      std::vector<LoadedInstance> loaded;
      for (const auto& id : dataset::list_instances(c.dataset, cat, "test")) {
        const fs::path src = fs::path(c.dataset) / cat / "test" / id;
        const fs::path res = result_dir(c, cat, id);
        const auto views = dataset::read_views(src);
        std::vector<ModalityMaps> maps(views.size());
        for (std::size_t k = 0; k < views.size(); ++k) {
          const std::string v = std::to_string(k);
          for (auto [name, dst] : {std::pair{"psi_image_view_", &maps[k].image}, std::pair{"psi_depth_view_", &maps[k].depth}}) {
            const fs::path p = res / (name + v + ".mmtf");
            if (!fs::exists(p)) throw DataError("incomplete results: missing " + p.string());
            *dst = io::to_raster(io::load_tensor(p), p.string());
          }
        }
        auto vol = build_volume(maps, views, grid, f, c.upsample);
        const double score = instance_score(vol.grid);
        loaded.push_back({std::move(vol.grid), dataset::read_gt(src, grid), score, dataset::read_label(src)});
      }
      std::vector<Scored> items;
      for (const auto& li : loaded) items.push_back({li.score, li.label, &li.grid, &li.gt});
      per_fuse.push_back(evaluate_category(cat, items, c.fpr_limits, c.pro));
    }
    per_fuse.push_back(mean_row(per_fuse));
    for (auto& r : per_fuse) {
      rows.push_back(r);
      lead.push_back(to_string(f));
    }
  }
  const std::string csv = format_metrics_csv(rows, c.fpr_limits, "fuse", lead);
  io::write_text(fs::path(c.out) / "compare.csv", csv);
  log << csv;
  return rows;
}

} // namespace modmap::pipeline
