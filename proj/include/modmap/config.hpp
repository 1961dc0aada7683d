#pragma once

// Run configuration: a single JSON document. Input files hold plain values;
// the resolved form written next to every run wraps each leaf as
// {"value": v, "source": "paper" | "decision"} and is accepted as input too.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "modmap/datagen.hpp"
#include "modmap/encoders.hpp"
#include "modmap/error.hpp"
#include "modmap/inference.hpp"
#include "modmap/io.hpp"
#include "modmap/metrics.hpp"
#include "modmap/modmap.hpp"
#include "modmap/volume.hpp"

namespace modmap {

using nlohmann::json;

struct RunConfig {
  std::string dataset = "data";
  std::vector<std::string> categories; // empty = every category found in the dataset
  EncoderConfig encoder;
  std::vector<std::size_t> hidden_i2d; // empty = scaled from c_image
  std::vector<std::size_t> hidden_d2i;
  std::size_t modulator_hidden = 128;
  TrainConfig train = [] {
    TrainConfig t;
    t.lr_scale = width_lr_scale(EncoderConfig{}.c_image);
    return t;
  }();
  bool multiclass = false;
  std::optional<std::size_t> subsample_k;
  FuseFunction fuse = FuseFunction::max;
  SourceMode source_mode = SourceMode::cross_view;
  double background_threshold = kDefaultBackgroundThreshold;
  UpsamplePolicy upsample = UpsamplePolicy::bilinear;
  std::optional<GridSpec> grid; // default: the grid.json stored with each category
  std::vector<double> fpr_limits{0.01};
  metrics::ProOptions pro;
  std::uint64_t seed = 0;
  std::string out = "run";
  datagen::BenchmarkConfig bench;

  ModelDims dims(std::size_t n_views, std::size_t n_classes) const {
    ModelDims d = ModelDims::scaled(n_views, encoder.c_image, encoder.c_depth, n_classes);
    if (!hidden_i2d.empty()) d.hidden_i2d = hidden_i2d;
    if (!hidden_d2i.empty()) d.hidden_d2i = hidden_d2i;
    d.modulator_hidden = modulator_hidden;
    return d;
  }

  void validate() const {
    encoder.validate();
    train.validate();
    train.schedule.validate();
    if (subsample_k && *subsample_k == 0) throw UsageError("subsample_k must be >= 1");
    if (!(background_threshold >= 0 && background_threshold <= 1))
      throw UsageError("background_threshold must lie in [0, 1]");
    if (fpr_limits.empty()) throw UsageError("fpr_limits must not be empty");
    for (double f : fpr_limits)
      if (!(f > 0 && f <= 1)) throw UsageError("fpr limits must lie in (0, 1]");
    if (grid) grid->validate();
  }
};

namespace config_detail {

inline json leaf(json v, const char* source) { return {{"value", std::move(v)}, {"source", source}}; }

/// Strips {"value", "source"} wrappers so resolved configs can be read back.
inline json unwrap(const json& j) {
  if (j.is_object()) {
    if (j.size() == 2 && j.contains("value") && j.contains("source")) return unwrap(j.at("value"));
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = unwrap(it.value());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& e : j) out.push_back(unwrap(e));
    return out;
  }
  return j;
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw UsageError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw UsageError("unknown config field '" + where + "." + it.key() + "'");
  }
}

inline json grid_json(const GridSpec& g) {
  return {{"origin", g.origin}, {"voxel_size", g.voxel_size}, {"dims", g.dims}};
}

inline GridSpec grid_from(const json& j) {
  GridSpec g;
  try {
    g.origin = j.at("origin").get<Vec3>();
    g.voxel_size = j.at("voxel_size").get<double>();
    g.dims = j.at("dims").get<std::array<std::size_t, 3>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed grid spec: ") + e.what());
  }
  g.validate();
  return g;
}

} // namespace config_detail

inline json grid_to_json(const GridSpec& g) { return config_detail::grid_json(g); }
inline GridSpec grid_from_json(const json& j) { return config_detail::grid_from(j); }

inline json encoder_to_json(const EncoderConfig& e) {
  return {{"patch_size", e.patch_size},
          {"c_image", e.c_image},
          {"c_depth", e.c_depth},
          {"depth_relief_gain", e.depth_relief_gain},
          {"image_contrast_gain", e.image_contrast_gain},
          {"output_scale", e.output_scale},
          {"image_channel_scale", e.image_channel_scale},
          {"depth_channel_scale", e.depth_channel_scale},
          {"resize", e.resize == ResizePolicy::stretch ? "stretch" : "none"},
          {"resize_to", e.resize_to}};
}

inline EncoderConfig encoder_from_json(const json& j) {
  using config_detail::read;
  config_detail::check_keys(j, "encoder",
                            {"patch_size", "c_image", "c_depth", "depth_relief_gain", "image_contrast_gain",
                             "output_scale", "image_channel_scale", "depth_channel_scale", "resize", "resize_to"});
  EncoderConfig e;
  read(j, "patch_size", e.patch_size);
  read(j, "c_image", e.c_image);
  read(j, "c_depth", e.c_depth);
  read(j, "depth_relief_gain", e.depth_relief_gain);
  read(j, "image_contrast_gain", e.image_contrast_gain);
  read(j, "output_scale", e.output_scale);
  read(j, "image_channel_scale", e.image_channel_scale);
  read(j, "depth_channel_scale", e.depth_channel_scale);
  std::string resize = "none";
  read(j, "resize", resize);
  if (resize != "none" && resize != "stretch") throw UsageError("encoder.resize must be none|stretch");
  e.resize = resize == "stretch" ? ResizePolicy::stretch : ResizePolicy::none;
  read(j, "resize_to", e.resize_to);
  e.validate();
  return e;
}

/// Plain JSON of the resolved configuration, or the annotated form with a
/// source flag on every leaf.
inline json to_json(const RunConfig& c, bool annotated = false) {
  auto L = [annotated](json v, const char* src) { return annotated ? config_detail::leaf(std::move(v), src) : v; };
  const char* P = "paper";
  const char* D = "decision";
  const auto& s = c.train.schedule;
  const auto& b = c.bench;
  const json enc_plain = encoder_to_json(c.encoder);
  json enc;
  for (auto& [k, v] : enc_plain.items()) enc[k] = L(v, D);
  const ModelDims d = c.dims(0, 0);
  json j;
  j["dataset"] = L(c.dataset, D);
  j["categories"] = L(c.categories, D);
  j["encoder"] = enc;
  j["model"] = {{"hidden_i2d", L(d.hidden_i2d, D)},
                {"hidden_d2i", L(d.hidden_d2i, D)},
                {"modulator_hidden", L(c.modulator_hidden, P)}};
  j["train"] = {{"epochs", L(c.train.epochs, P)},
                {"pairs_per_batch", L(c.train.pairs_per_batch, P)},
                {"pair_mode", L(c.train.pair_mode == PairMode::all_pairs ? "all_pairs" : "same_view", P)},
                {"lr_init", L(s.lr_init, P)},
                {"lr_max", L(s.lr_max, P)},
                {"lr_final", L(s.lr_final, D)},
                {"warmup_fraction", L(s.warmup_fraction, P)},
                {"lr_scale", L(c.train.lr_scale, D)},
                {"weight_decay", L(0.0, D)},
                {"gradient_clipping", L("none", D)},
                {"multiclass", L(c.multiclass, P)}};
  j["infer"] = {{"subsample_k", L(c.subsample_k ? json(*c.subsample_k) : json(nullptr), D)},
                {"fuse", L(to_string(c.fuse), P)},
                {"source_mode", L(c.source_mode == SourceMode::cross_view ? "cross_view" : "same_view", P)},
                {"background_threshold", L(c.background_threshold, D)},
                {"upsample", L(c.upsample == UpsamplePolicy::bilinear ? "bilinear" : "nearest", D)}};
  j["grid"] = L(c.grid ? grid_to_json(*c.grid) : json("dataset"), D);
  j["metrics"] = {{"fpr_limits", L(c.fpr_limits, P)},
                  {"fpr_convention", L("observed voxels only", D)},
                  {"pro_max_exact", L(c.pro.max_exact, D)},
                  {"pro_quantiles", L(c.pro.quantiles, D)}};
  j["seed"] = L(c.seed, D);
  j["out"] = L(c.out, D);
  j["bench"] = {{"n_nominal_test", L(b.n_nominal_test, D)},
                {"n_defective_test", L(b.n_defective_test, D)},
                {"artefacts", L(b.artefacts, D)},
                {"n_views", L(b.n_views, D)},
                {"resolution", L(b.resolution, D)},
                {"band_amplitude", L(b.band_amplitude, D)},
                {"noise_amplitude", L(b.noise_amplitude, D)},
                {"geometric_magnitude", L(b.geometric_magnitude, D)},
                {"blob_magnitude", L(b.blob_magnitude, D)},
                {"defect_radius", L(b.defect_radius, D)},
                {"highlight_peak", L(b.highlight_peak, D)},
                {"highlight_radius", L(b.highlight_radius, D)},
                {"hole_radius", L(b.hole_radius, D)}};
  return j;
}

inline RunConfig config_from_json(const json& raw) {
  using config_detail::check_keys;
  using config_detail::read;
  const json j = config_detail::unwrap(raw);
  check_keys(j, "config", {"dataset", "categories", "encoder", "model", "train", "infer", "grid", "metrics", "seed",
                           "out", "bench"});
  RunConfig c;
  read(j, "dataset", c.dataset);
  read(j, "categories", c.categories);
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  // The width correction follows c_image unless set explicitly.
  c.train.lr_scale = width_lr_scale(c.encoder.c_image);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model", {"hidden_i2d", "hidden_d2i", "modulator_hidden"});
    read(m, "hidden_i2d", c.hidden_i2d);
    read(m, "hidden_d2i", c.hidden_d2i);
    read(m, "modulator_hidden", c.modulator_hidden);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train", {"epochs", "pairs_per_batch", "pair_mode", "lr_init", "lr_max", "lr_final",
                            "warmup_fraction", "lr_scale", "weight_decay", "gradient_clipping", "multiclass"});
    read(t, "epochs", c.train.epochs);
    read(t, "pairs_per_batch", c.train.pairs_per_batch);
    std::string mode = "all_pairs";
    read(t, "pair_mode", mode);
    if (mode != "all_pairs" && mode != "same_view") throw UsageError("train.pair_mode must be all_pairs|same_view");
    c.train.pair_mode = mode == "all_pairs" ? PairMode::all_pairs : PairMode::same_view;
    read(t, "lr_init", c.train.schedule.lr_init);
    read(t, "lr_max", c.train.schedule.lr_max);
    read(t, "lr_final", c.train.schedule.lr_final);
    read(t, "warmup_fraction", c.train.schedule.warmup_fraction);
    read(t, "lr_scale", c.train.lr_scale);
    double wd = 0;
    read(t, "weight_decay", wd);
    if (wd != 0) throw UsageError("weight decay is not supported");
    std::string clip = "none";
    read(t, "gradient_clipping", clip);
    if (clip != "none") throw UsageError("gradient clipping is not supported");
    read(t, "multiclass", c.multiclass);
  }
  if (j.contains("infer")) {
    const auto& in = j.at("infer");
    check_keys(in, "infer", {"subsample_k", "fuse", "source_mode", "background_threshold", "upsample"});
    if (in.contains("subsample_k") && !in.at("subsample_k").is_null()) {
      std::size_t k = 0;
      read(in, "subsample_k", k);
      c.subsample_k = k;
    }
    if (in.contains("fuse")) c.fuse = parse_fuse(in.at("fuse").get<std::string>());
    std::string mode = "cross_view";
    read(in, "source_mode", mode);
    if (mode != "cross_view" && mode != "same_view") throw UsageError("infer.source_mode must be cross_view|same_view");
    c.source_mode = mode == "cross_view" ? SourceMode::cross_view : SourceMode::same_view;
    read(in, "background_threshold", c.background_threshold);
    std::string up = "bilinear";
    read(in, "upsample", up);
    if (up != "bilinear" && up != "nearest") throw UsageError("infer.upsample must be bilinear|nearest");
    c.upsample = up == "bilinear" ? UpsamplePolicy::bilinear : UpsamplePolicy::nearest;
  }
  if (j.contains("grid") && !(j.at("grid").is_string() && j.at("grid") == "dataset"))
    c.grid = grid_from_json(j.at("grid"));
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "metrics", {"fpr_limits", "fpr_convention", "pro_max_exact", "pro_quantiles"});
    read(m, "fpr_limits", c.fpr_limits);
    read(m, "pro_max_exact", c.pro.max_exact);
    read(m, "pro_quantiles", c.pro.quantiles);
  }
  read(j, "seed", c.seed);
  read(j, "out", c.out);
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    check_keys(b, "bench", {"n_nominal_test", "n_defective_test", "artefacts", "n_views", "resolution",
                            "band_amplitude", "noise_amplitude", "geometric_magnitude", "blob_magnitude",
                            "defect_radius", "highlight_peak", "highlight_radius", "hole_radius"});
    auto& o = c.bench;
    read(b, "n_nominal_test", o.n_nominal_test);
    read(b, "n_defective_test", o.n_defective_test);
    read(b, "artefacts", o.artefacts);
    read(b, "n_views", o.n_views);
    read(b, "resolution", o.resolution);
    read(b, "band_amplitude", o.band_amplitude);
    read(b, "noise_amplitude", o.noise_amplitude);
    read(b, "geometric_magnitude", o.geometric_magnitude);
    read(b, "blob_magnitude", o.blob_magnitude);
    read(b, "defect_radius", o.defect_radius);
    read(b, "highlight_peak", o.highlight_peak);
    read(b, "highlight_radius", o.highlight_radius);
    read(b, "hole_radius", o.hole_radius);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const io::fs::path& path) {
  if (!io::fs::exists(path)) throw UsageError("config file " + path.string() + " does not exist");
  try {
    return config_from_json(json::parse(io::read_text(path)));
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

/// Digest of everything the trained parameters depend on.
inline std::uint64_t model_digest(const RunConfig& c) {
  const json full = to_json(c);
  const json part = {{"encoder", full["encoder"]}, {"model", full["model"]}, {"train", full["train"]},
                     {"seed", full["seed"]}};
  return io::fnv1a(part.dump());
}

} // namespace modmap
