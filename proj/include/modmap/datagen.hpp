#pragma once

// Deterministic synthetic multiview scenes: analytic ray casting of simple
// primitives, procedural texture, Lambert shading under a camera-fixed light,
// surface defects with voxel ground truth, and single-view sensing artefacts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "modmap/camera.hpp"
#include "modmap/encoders.hpp"
#include "modmap/error.hpp"
#include "modmap/io.hpp"
#include "modmap/metrics.hpp"
#include "modmap/parallel.hpp"
#include "modmap/raster.hpp"
#include "modmap/rng.hpp"
#include "modmap/volume.hpp"

namespace modmap::datagen {

enum class Primitive { sphere, box, superellipsoid };

inline const char* to_string(Primitive p) {
  switch (p) {
  case Primitive::sphere: return "sphere";
  case Primitive::box: return "box";
  case Primitive::superellipsoid: return "superellipsoid";
  }
  return "?";
}

struct TextureSpec {
  double base = 0.55;
  double band_amplitude = 0.18;
  double band_period = 0.6;    // in units of the normal's z component
  double noise_amplitude = 0.05;
  std::size_t noise_waves = 6;
  double noise_frequency = 4.0; // radians per meter
  std::uint64_t pattern_seed = 1; // wave directions and frequencies (per class)
  std::uint64_t phase_seed = 1;   // wave phases (per instance)
};

struct SceneSpec {
  Primitive primitive = Primitive::sphere;
  Vec3 size{1.0, 1.0, 1.0};       // radius / half extents / semi-axes
  double exponent_ns = 1.0;       // superellipsoid north-south exponent
  double exponent_ew = 1.0;       // superellipsoid east-west exponent
  TextureSpec texture;
  std::size_t n_views = 8;
  double ring_radius = 3.0;
  double elevation_deg = 20.0;
  double azimuth_offset_deg = 0.0;
  std::size_t width = 128;
  std::size_t height = 128;
  double fov_deg = 50.0;
  Vec3 light_camera{-0.3, -0.5, -1.0}; // direction towards the light, camera frame
  double ambient = 0.25;
  double diffuse = 0.75;

  void validate() const {
    if (n_views < 2) throw UsageError("a scene needs at least two views");
    if (!(size[0] > 0 && size[1] > 0 && size[2] > 0)) throw DataError("degenerate primitive: non-positive size");
    if (primitive == Primitive::superellipsoid && !(exponent_ns > 0 && exponent_ew > 0))
      throw DataError("degenerate primitive: non-positive superellipsoid exponent");
    if (width == 0 || height == 0) throw UsageError("scene resolution must be positive");
    if (ring_radius <= norm(size) * 1.05) throw UsageError("camera ring intersects the object");
  }
};

struct SurfaceHit {
  double t;
  Vec3 point;
  Vec3 normal;
};

namespace detail {

inline std::optional<std::pair<double, double>> slab(const Vec3& o, const Vec3& d, const Vec3& half) {
  double t0 = -1e300, t1 = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (std::abs(o[a]) > half[a]) return std::nullopt;
      continue;
    }
    double ta = (-half[a] - o[a]) / d[a], tb = (half[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 < 0) return std::nullopt;
  return std::make_pair(std::max(t0, 0.0), t1);
}

inline double superellipsoid_value(const SceneSpec& s, const Vec3& p) {
  const double e1 = s.exponent_ns, e2 = s.exponent_ew;
  const double ax = std::pow(std::abs(p[0] / s.size[0]), 2.0 / e2);
  const double ay = std::pow(std::abs(p[1] / s.size[1]), 2.0 / e2);
  const double az = std::pow(std::abs(p[2] / s.size[2]), 2.0 / e1);
  return std::pow(ax + ay, e2 / e1) + az - 1.0;
}

inline Vec3 superellipsoid_normal(const SceneSpec& s, const Vec3& p) {
  const double e1 = s.exponent_ns, e2 = s.exponent_ew;
  const double ux = std::abs(p[0] / s.size[0]), uy = std::abs(p[1] / s.size[1]), uz = std::abs(p[2] / s.size[2]);
  const double a = std::pow(ux, 2.0 / e2) + std::pow(uy, 2.0 / e2);
  const double pre = a > 0 ? (2.0 / e1) * std::pow(a, e2 / e1 - 1.0) : 0.0;
  auto sgn = [](double v) { return v < 0 ? -1.0 : 1.0; };
  Vec3 g{pre * std::pow(ux, 2.0 / e2 - 1.0) * sgn(p[0]) / s.size[0],
         pre * std::pow(uy, 2.0 / e2 - 1.0) * sgn(p[1]) / s.size[1],
         (2.0 / e1) * std::pow(uz, 2.0 / e1 - 1.0) * sgn(p[2]) / s.size[2]};
  const double n = norm(g);
  if (!(n > 0)) return normalized(p);
  return (1.0 / n) * g;
}

} // namespace detail

/// First intersection of the ray o + t d (t > 0, d unit length) with the object.
inline std::optional<SurfaceHit> intersect(const SceneSpec& s, const Vec3& o, const Vec3& d) {
  switch (s.primitive) {
  case Primitive::sphere: {
    const double r = s.size[0];
    const double b = dot(o, d), c = dot(o, o) - r * r;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 0) t = -b + sq;
    if (t <= 0) return std::nullopt;
    const Vec3 p = o + t * d;
    return SurfaceHit{t, p, (1.0 / r) * p};
  }
  case Primitive::box: {
    const auto span = detail::slab(o, d, s.size);
    if (!span) return std::nullopt;
    const double t = span->first;
    if (t <= 0) return std::nullopt;
    const Vec3 p = o + t * d;
    int axis = 0;
    double best = -1;
    for (int a = 0; a < 3; ++a) {
      const double closeness = std::abs(p[a]) / s.size[a];
      if (closeness > best) best = closeness, axis = a;
    }
    Vec3 n{0, 0, 0};
    n[axis] = p[axis] < 0 ? -1.0 : 1.0;
    return SurfaceHit{t, p, n};
  }
  case Primitive::superellipsoid: {
    const auto span = detail::slab(o, d, (1.0001) * s.size);
    if (!span) return std::nullopt;
    const auto [t0, t1] = *span;
    constexpr int steps = 96;
    double prev_t = t0, prev_f = detail::superellipsoid_value(s, o + t0 * d);
    if (prev_f <= 0) return std::nullopt; // ray starts inside
    for (int i = 1; i <= steps; ++i) {
      const double t = t0 + (t1 - t0) * double(i) / steps;
      const double f = detail::superellipsoid_value(s, o + t * d);
      if (f <= 0) {
        double lo = prev_t, hi = t;
        for (int k = 0; k < 60; ++k) {
          const double mid = 0.5 * (lo + hi);
          if (detail::superellipsoid_value(s, o + mid * d) > 0) lo = mid;
          else hi = mid;
        }
        const double th = 0.5 * (lo + hi);
        const Vec3 p = o + th * d;
        return SurfaceHit{th, p, detail::superellipsoid_normal(s, p)};
      }
      prev_t = t;
      prev_f = f;
    }
    return std::nullopt;
  }
  }
  return std::nullopt;
}

inline std::vector<CameraCalib> ring_cameras(const SceneSpec& s) {
  std::vector<CameraCalib> cams;
  const double e = s.elevation_deg * std::numbers::pi / 180.0;
  const double f = 0.5 * double(s.width) / std::tan(0.5 * s.fov_deg * std::numbers::pi / 180.0);
  for (std::size_t k = 0; k < s.n_views; ++k) {
    const double az = 2.0 * std::numbers::pi * double(k) / double(s.n_views) + s.azimuth_offset_deg * std::numbers::pi / 180.0;
    const Vec3 eye{s.ring_radius * std::cos(e) * std::cos(az), s.ring_radius * std::cos(e) * std::sin(az),
                   s.ring_radius * std::sin(e)};
    cams.push_back(CameraCalib::look_at(eye, {0, 0, 0}, {0, 0, 1}, f, f, double(s.width) / 2.0, double(s.height) / 2.0));
  }
  return cams;
}

/// Per-pixel surface geometry of one view.
struct SurfaceBuffer {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> hit;
  std::vector<Vec3> point, normal;
  std::vector<double> ray_t;
  Raster depth;
};

inline SurfaceBuffer trace_view(const SceneSpec& s, const CameraCalib& cam) {
  SurfaceBuffer b;
  b.height = s.height;
  b.width = s.width;
  const std::size_t n = s.height * s.width;
  b.hit.assign(n, 0);
  b.point.assign(n, {0, 0, 0});
  b.normal.assign(n, {0, 0, 0});
  b.ray_t.assign(n, 0.0);
  b.depth = Raster(s.height, s.width);
  const Vec3 eye = cam.camera_center();
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c) {
      const Vec3 d = normalized(cam.ray_direction(double(c), double(r)));
      const auto h = intersect(s, eye, d);
      if (!h) continue;
      const std::size_t i = r * s.width + c;
      b.hit[i] = 1;
      b.point[i] = h->point;
      b.normal[i] = h->normal;
      b.ray_t[i] = h->t;
      b.depth.values[i] = static_cast<float>(cam.to_camera(h->point)[2]);
    }
  return b;
}

/// Procedural albedo: bands over the surface normal's elevation plus
/// band-limited noise whose phases are the only thing that varies between
/// instances of a class. Bands follow the normal rather than height so they
/// stay predictable from local shape on surfaces of constant cross-section.
class Texture {
public:
  explicit Texture(const TextureSpec& t) : spec_(t) {
    Rng pattern(derive_seed(t.pattern_seed, 11));
    Rng phase(derive_seed(t.phase_seed, 13));
    for (std::size_t k = 0; k < t.noise_waves; ++k) {
      const double z = pattern.uniform(-1, 1), az = pattern.uniform(0, 2 * std::numbers::pi);
      const double rxy = std::sqrt(1 - z * z);
      const double freq = t.noise_frequency * pattern.uniform(0.7, 1.4);
      waves_.push_back({freq * rxy * std::cos(az), freq * rxy * std::sin(az), freq * z});
      phases_.push_back(phase.uniform(0, 2 * std::numbers::pi));
    }
  }

  double albedo(const Vec3& p, const Vec3& n) const {
    double a = spec_.base + spec_.band_amplitude * std::sin(2 * std::numbers::pi * n[2] / spec_.band_period);
    if (!waves_.empty()) {
      double n = 0;
      for (std::size_t k = 0; k < waves_.size(); ++k) n += std::sin(dot(waves_[k], p) + phases_[k]);
      a += spec_.noise_amplitude * n / std::sqrt(double(waves_.size()));
    }
    return std::clamp(a, 0.02, 1.0);
  }

private:
  TextureSpec spec_;
  std::vector<Vec3> waves_;
  std::vector<double> phases_;
};

inline Vec3 light_world(const SceneSpec& s, const CameraCalib& cam) {
  const Vec3 l = normalized(s.light_camera);
  return normalized(cam.to_world(l) - cam.camera_center());
}

/// `shading_normal` may differ from the surface normal for re-shaded defects;
/// the albedo stays painted on the undisturbed surface.
inline double shade(const SceneSpec& s, const Texture& tex, const Vec3& light, const Vec3& point, const Vec3& normal,
                    const Vec3& shading_normal) {
  return std::clamp(tex.albedo(point, normal) * (s.ambient + s.diffuse * std::max(0.0, dot(shading_normal, light))),
                    0.0, 1.0);
}

inline Raster shade_view(const SceneSpec& s, const CameraCalib& cam, const SurfaceBuffer& b) {
  const Texture tex(s.texture);
  const Vec3 light = light_world(s, cam);
  Raster img(b.height, b.width);
  for (std::size_t i = 0; i < img.size(); ++i)
    if (b.hit[i]) img.values[i] = float(shade(s, tex, light, b.point[i], b.normal[i], b.normal[i]));
  io::quantize16(img);
  return img;
}

struct RenderedScene {
  std::vector<ViewSample> views;
  std::vector<SurfaceBuffer> surfaces;
  Vec3 bounds_lo{0, 0, 0}, bounds_hi{0, 0, 0};
};

inline RenderedScene shade_scene(const SceneSpec& s, const std::vector<CameraCalib>& cams,
                                 const std::vector<SurfaceBuffer>& surfaces) {
  RenderedScene out;
  out.surfaces = surfaces;
  out.views.resize(cams.size());
  parallel_for(cams.size(), [&](std::size_t k) {
    out.views[k] = {k, shade_view(s, cams[k], surfaces[k]), surfaces[k].depth, cams[k]};
  });
  if (s.primitive == Primitive::sphere) {
    out.bounds_lo = {-s.size[0], -s.size[0], -s.size[0]};
    out.bounds_hi = {s.size[0], s.size[0], s.size[0]};
  } else {
    out.bounds_lo = {-s.size[0], -s.size[1], -s.size[2]};
    out.bounds_hi = s.size;
  }
  return out;
}

/// Traces every view; the object must stay clear of the image border.
inline std::vector<SurfaceBuffer> trace_scene(const SceneSpec& s, const std::vector<CameraCalib>& cams) {
  std::vector<SurfaceBuffer> out(cams.size());
  parallel_for(cams.size(), [&](std::size_t k) { out[k] = trace_view(s, cams[k]); });
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& b = out[k];
    for (std::size_t r = 0; r < b.height; ++r)
      for (std::size_t c = 0; c < b.width; ++c)
        if ((r == 0 || c == 0 || r + 1 == b.height || c + 1 == b.width) && b.hit[r * b.width + c])
          throw UsageError("object does not fit the frustum of view " + std::to_string(k));
  }
  return out;
}

/// Renders every ring view: depth from analytic intersection (0 = background),
/// intensity = albedo * Lambert under the camera-fixed light.
inline RenderedScene render_views(const SceneSpec& s) {
  s.validate();
  const auto cams = ring_cameras(s);
  return shade_scene(s, cams, trace_scene(s, cams));
}

enum class DefectKind { geometric_bump, geometric_dent, intensity_blob };
enum class Visibility { both, image_only, depth_only };

inline const char* to_string(DefectKind k) {
  switch (k) {
  case DefectKind::geometric_bump: return "geometric_bump";
  case DefectKind::geometric_dent: return "geometric_dent";
  case DefectKind::intensity_blob: return "intensity_blob";
  }
  return "?";
}

inline const char* to_string(Visibility v) {
  switch (v) {
  case Visibility::both: return "both";
  case Visibility::image_only: return "image_only";
  case Visibility::depth_only: return "depth_only";
  }
  return "?";
}

struct DefectSpec {
  DefectKind kind = DefectKind::geometric_bump;
  Vec3 center{0, 0, 0}; // surface point
  double radius = 0.15; // meters
  double magnitude = 0.05; // meters for geometric kinds, intensity for blobs
  Visibility visibility = Visibility::both;

  bool touches_image() const { return kind == DefectKind::intensity_blob || visibility != Visibility::depth_only; }
  bool touches_depth() const { return kind != DefectKind::intensity_blob && visibility != Visibility::image_only; }
};

enum class ArtefactKind { specular_highlight, depth_hole };

inline const char* to_string(ArtefactKind k) {
  return k == ArtefactKind::specular_highlight ? "specular_highlight" : "depth_hole";
}

struct ArtefactSpec {
  ArtefactKind kind = ArtefactKind::specular_highlight;
  std::size_t affected_view = 0;
  double center_u = 0, center_v = 0; // pixel
  double radius = 8;                 // pixels
  double peak = 1.0;                 // highlight intensity at the centre
};

/// Signed distance of p to the primitive's surface for spheres; for other
/// primitives the implicit-function sign is used with a small tolerance.
inline bool on_surface(const SceneSpec& s, const Vec3& p, double tol = 1e-4) {
  switch (s.primitive) {
  case Primitive::sphere: return std::abs(norm(p) - s.size[0]) <= tol;
  case Primitive::box: {
    double worst = 0;
    bool on_face = false;
    for (int a = 0; a < 3; ++a) {
      worst = std::max(worst, std::abs(p[a]) - s.size[a]);
      if (std::abs(std::abs(p[a]) - s.size[a]) <= tol) on_face = true;
    }
    return on_face && worst <= tol;
  }
  case Primitive::superellipsoid: {
    // Compare the point with the surface point along its own radial ray.
    const double r = norm(p);
    if (r == 0) return false;
    const Vec3 d = (1.0 / r) * p;
    const Vec3 o = (3.0 * norm(s.size)) * d;
    const auto h = intersect(s, o, -1.0 * d);
    return h && norm(h->point - p) <= tol;
  }
  }
  return false;
}

/// Distance-based smooth profile, 1 at the centre and 0 at rho = 1.
inline double profile(double rho) { return rho >= 1 ? 0.0 : (1 - rho * rho) * (1 - rho * rho); }

/// Ground-truth voxels are the grid cells whose centre lies within the
/// defect radius of its centre.
inline std::vector<std::uint8_t> defect_voxels(const GridSpec& grid, const DefectSpec& d) {
  std::vector<std::uint8_t> mask(grid.voxel_count(), 0);
  if (d.magnitude == 0) return mask;
  for (std::size_t x = 0; x < grid.dims[0]; ++x)
    for (std::size_t y = 0; y < grid.dims[1]; ++y)
      for (std::size_t z = 0; z < grid.dims[2]; ++z)
        if (norm(grid.center(x, y, z) - d.center) <= d.radius) mask[grid.flat(x, y, z)] = 1;
  return mask;
}

/// Applies a surface defect to every view. Geometric kinds displace depth
/// along the normal and/or re-shade with the perturbed normal; blobs darken
/// the image only. Returns the ground-truth mask of the defect.
inline std::vector<std::uint8_t> inject_defect(RenderedScene& scene, const SceneSpec& s, const GridSpec& grid,
                                               const DefectSpec& d) {
  if (!(d.radius > 0)) throw DataError("defect radius must be positive");
  if (!on_surface(s, d.center, 1e-3)) throw DataError("defect centre is not on the object surface");
  if (d.magnitude == 0) return defect_voxels(grid, d);
  const Texture tex(s.texture);
  for (std::size_t k = 0; k < scene.views.size(); ++k) {
    auto& view = scene.views[k];
    const auto& surf = scene.surfaces[k];
    const Vec3 light = light_world(s, view.calib);
    const Vec3 eye = view.calib.camera_center();
    bool touched = false;
    for (std::size_t i = 0; i < surf.hit.size(); ++i) {
      if (!surf.hit[i]) continue;
      const Vec3& p = surf.point[i];
      const double dist = norm(p - d.center);
      if (dist >= d.radius) continue;
      const double rho = dist / d.radius;
      const double w = profile(rho);
      const Vec3& n = surf.normal[i];
      if (d.kind == DefectKind::intensity_blob) {
        view.image.values[i] = float(std::clamp(double(view.image.values[i]) - d.magnitude * w, 0.0, 1.0));
        touched = true;
        continue;
      }
      const double h = (d.kind == DefectKind::geometric_bump ? 1.0 : -1.0) * d.magnitude * w;
      if (d.touches_depth() && view.depth.values[i] > 0) {
        const Vec3 ray = normalized(p - eye);
        const double cosang = std::max(0.25, std::abs(dot(ray, n)));
        const double t_new = surf.ray_t[i] - h / cosang;
        view.depth.values[i] = float(double(surf.depth.values[i]) * t_new / surf.ray_t[i]);
        touched = true;
      }
      if (d.touches_image()) {
        const double sign = d.kind == DefectKind::geometric_bump ? 1.0 : -1.0;
        const Vec3 g = (-4.0 * sign * d.magnitude * (1 - rho * rho) / (d.radius * d.radius)) * (p - d.center);
        const Vec3 gt = g - dot(g, n) * n;
        const Vec3 n2 = normalized(n - gt);
        view.image.values[i] = float(shade(s, tex, light, p, n, n2));
        touched = true;
      }
    }
    if (touched) io::quantize16(view.image);
  }
  return defect_voxels(grid, d);
}

/// Single-view sensing artefact; never part of the ground truth. Idempotent.
inline void inject_artefact(RenderedScene& scene, const ArtefactSpec& a) {
  if (a.affected_view >= scene.views.size()) throw UsageError("artefact view out of range");
  auto& view = scene.views[a.affected_view];
  for (std::size_t r = 0; r < view.image.height; ++r)
    for (std::size_t c = 0; c < view.image.width; ++c) {
      const double rho = std::hypot(double(c) - a.center_u, double(r) - a.center_v) / a.radius;
      if (rho >= 1) continue;
      if (a.kind == ArtefactKind::depth_hole) {
        view.depth.at(r, c) = 0.0f;
      } else if (view.depth.at(r, c) > 0) {
        const float highlight = float(a.peak * (1.0 - rho * rho));
        view.image.at(r, c) = std::max(view.image.at(r, c), highlight);
      }
    }
  if (a.kind == ArtefactKind::specular_highlight) io::quantize16(view.image);
}

/// Views in which a surface point is seen unoccluded (its projection lands on
/// a foreground pixel whose surface point is the point itself).
inline std::vector<std::size_t> visible_views(const RenderedScene& scene, const Vec3& p, double tol = 0.02) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < scene.views.size(); ++k) {
    const auto& cam = scene.views[k].calib;
    const auto px = project(p, cam);
    if (px.depth <= 0) continue;
    const long c = std::lround(px.u), r = std::lround(px.v);
    if (c < 0 || r < 0 || c >= long(scene.surfaces[k].width) || r >= long(scene.surfaces[k].height)) continue;
    const std::size_t i = std::size_t(r) * scene.surfaces[k].width + std::size_t(c);
    if (!scene.surfaces[k].hit[i]) continue;
    if (norm(scene.surfaces[k].point[i] - p) <= tol) out.push_back(k);
  }
  return out;
}

/// Surface point hit by the ray travelling towards the origin from direction
/// (azimuth, latitude).
inline std::optional<Vec3> surface_point(const SceneSpec& s, double azimuth, double latitude) {
  const Vec3 dir{std::cos(latitude) * std::cos(azimuth), std::cos(latitude) * std::sin(azimuth), std::sin(latitude)};
  const Vec3 o = (3.0 * norm(s.size)) * dir;
  const auto h = intersect(s, o, -1.0 * dir);
  if (!h) return std::nullopt;
  return h->point;
}

// ---------------------------------------------------------------------------
// Benchmark

struct Instance {
  std::string id;
  int label = 0;
  std::vector<ViewSample> views;
  std::vector<std::uint8_t> gt_mask; // on the class grid
  std::vector<DefectSpec> defects;
  std::vector<ArtefactSpec> artefacts;
  std::vector<std::vector<std::size_t>> defect_views; // views seeing each defect centre
};

struct ClassData {
  std::string name;
  SceneSpec scene;
  GridSpec grid;
  Instance train;
  std::vector<Instance> test;
};

struct Benchmark {
  std::uint64_t seed = 0;
  std::vector<ClassData> classes;
};

struct BenchmarkConfig {
  std::size_t n_nominal_test = 6;
  std::size_t n_defective_test = 10;
  bool artefacts = true; // one specular highlight and one depth hole per test instance
  std::size_t n_views = 8;
  std::size_t resolution = 128;
  double band_amplitude = 0.18;
  double noise_amplitude = 0.05;
  std::array<double, 2> geometric_magnitude{0.06, 0.13}; // meters
  std::array<double, 2> blob_magnitude{0.25, 0.45};
  std::array<double, 2> defect_radius{0.14, 0.24}; // meters
  double highlight_peak = 0.85;
  std::array<double, 2> highlight_radius{5, 8}; // pixels
  std::array<double, 2> hole_radius{5, 8};
};

inline std::vector<SceneSpec> benchmark_classes(std::uint64_t seed, const BenchmarkConfig& cfg) {
  SceneSpec ball;
  ball.primitive = Primitive::sphere;
  ball.size = {1.0, 1.0, 1.0};
  ball.texture.pattern_seed = derive_seed(seed, 100);
  SceneSpec vase;
  vase.primitive = Primitive::superellipsoid;
  vase.size = {0.85, 0.85, 1.0};
  vase.exponent_ns = 0.5;
  vase.exponent_ew = 1.0;
  vase.texture.pattern_seed = derive_seed(seed, 101);
  vase.texture.band_period = 0.45;
  for (auto* s : {&ball, &vase}) {
    s->texture.band_amplitude = cfg.band_amplitude;
    s->texture.noise_amplitude = cfg.noise_amplitude;
    s->n_views = cfg.n_views;
    s->width = s->height = cfg.resolution;
  }
  return {ball, vase};
}

namespace detail {

inline std::vector<std::size_t> foreground_pixels(const SurfaceBuffer& b) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.hit.size(); ++i)
    if (b.hit[i]) out.push_back(i);
  return out;
}

/// A surface point seen by exactly one view, searched below that view's
/// optical axis.
inline std::optional<Vec3> single_view_point(const SceneSpec& s, const RenderedScene& scene, std::size_t view) {
  const Vec3 eye = scene.views[view].calib.camera_center();
  const double az = std::atan2(eye[1], eye[0]);
  for (double lat_deg = -20; lat_deg >= -70; lat_deg -= 2.5) {
    const auto p = surface_point(s, az, lat_deg * std::numbers::pi / 180.0);
    if (!p) continue;
    const auto vis = visible_views(scene, *p);
    if (vis.size() == 1 && vis[0] == view) return p;
  }
  return std::nullopt;
}

/// A random surface point visible in at least two views.
inline Vec3 random_visible_point(const SceneSpec& s, const RenderedScene& scene, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double az = rng.uniform(0, 2 * std::numbers::pi);
    const double lat = rng.uniform(-15, 45) * std::numbers::pi / 180.0;
    const auto p = surface_point(s, az, lat);
    if (p && visible_views(scene, *p).size() >= 2) return *p;
  }
  throw DataError("could not place a visible defect");
}

} // namespace detail

/// Defect recipe of the i-th defective test instance: kinds and modality
/// visibilities cycle so every class has both single-modality kinds, and the
/// first instance carries a defect seen from a single view only.
inline std::vector<DefectSpec> plan_defects(const SceneSpec& s, const RenderedScene& scene, std::size_t index,
                                            const BenchmarkConfig& cfg, Rng& rng) {
  static constexpr std::array<std::pair<DefectKind, Visibility>, 6> cycle{{
      {DefectKind::geometric_bump, Visibility::both},
      {DefectKind::intensity_blob, Visibility::image_only},
      {DefectKind::geometric_dent, Visibility::depth_only},
      {DefectKind::geometric_dent, Visibility::both},
      {DefectKind::geometric_bump, Visibility::depth_only},
      {DefectKind::intensity_blob, Visibility::image_only},
  }};
  const std::size_t count = 1 + static_cast<std::size_t>(rng.index(3));
  std::vector<DefectSpec> out;
  for (std::size_t j = 0; j < count; ++j) {
    const auto [kind, vis] = cycle[(index + 2 * j) % cycle.size()];
    DefectSpec d;
    d.kind = kind;
    d.visibility = vis;
    const auto& mag = kind == DefectKind::intensity_blob ? cfg.blob_magnitude : cfg.geometric_magnitude;
    d.radius = rng.uniform(cfg.defect_radius[0], cfg.defect_radius[1]);
    d.magnitude = rng.uniform(mag[0], mag[1]);
    std::optional<Vec3> c;
    if (index == 0 && j == 0) c = detail::single_view_point(s, scene, rng.index(scene.views.size()));
    for (int attempt = 0; !c || attempt == 0; ++attempt) {
      if (!c) c = detail::random_visible_point(s, scene, rng);
      bool clear = true;
      for (const auto& o : out)
        if (norm(o.center - *c) < o.radius + d.radius) clear = false;
      if (clear) break;
      c.reset();
      if (attempt > 200) throw DataError("could not separate defects");
    }
    d.center = *c;
    out.push_back(d);
  }
  return out;
}

/// Artefacts placed on foreground pixels away from every defect.
inline std::vector<ArtefactSpec> plan_artefacts(const RenderedScene& scene, const std::vector<DefectSpec>& defects,
                                                const BenchmarkConfig& cfg, Rng& rng) {
  std::vector<ArtefactSpec> out;
  for (auto kind : {ArtefactKind::specular_highlight, ArtefactKind::depth_hole}) {
    ArtefactSpec a;
    a.kind = kind;
    a.affected_view = rng.index(scene.views.size());
    const auto& range = kind == ArtefactKind::specular_highlight ? cfg.highlight_radius : cfg.hole_radius;
    a.radius = rng.uniform(range[0], range[1]);
    if (kind == ArtefactKind::specular_highlight) a.peak = cfg.highlight_peak;
    const auto& surf = scene.surfaces[a.affected_view];
    const auto fg = detail::foreground_pixels(surf);
    for (int attempt = 0;; ++attempt) {
      const std::size_t i = fg[rng.index(fg.size())];
      const double u = double(i % surf.width), v = double(i / surf.width);
      bool inside = true;
      for (double dv : {-a.radius, a.radius})
        for (double du : {-a.radius, a.radius}) {
          const long c = std::lround(u + du), r = std::lround(v + dv);
          if (c < 0 || r < 0 || c >= long(surf.width) || r >= long(surf.height) ||
              !surf.hit[std::size_t(r) * surf.width + std::size_t(c)])
            inside = false;
        }
      bool clear = true;
      for (const auto& d : defects)
        if (norm(surf.point[i] - d.center) < d.radius + 0.3) clear = false;
      if ((inside && clear) || attempt > 2000) {
        a.center_u = u;
        a.center_v = v;
        break;
      }
    }
    out.push_back(a);
  }
  return out;
}

inline std::string instance_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
}

/// Two classes, each with one clean nominal training instance plus nominal
/// and defective test instances that share the training viewpoints.
inline Benchmark make_benchmark(std::uint64_t seed, const BenchmarkConfig& cfg = {}) {
  Benchmark bench;
  bench.seed = seed;
  const auto specs = benchmark_classes(seed, cfg);
  const std::array<const char*, 2> names{"ball", "vase"};
  for (std::size_t ci = 0; ci < specs.size(); ++ci) {
    ClassData cls;
    cls.name = names[ci];
    cls.scene = specs[ci];
    cls.scene.texture.phase_seed = derive_seed(seed, 1000 + ci);
    cls.scene.validate();
    const auto cams = ring_cameras(cls.scene);
    const auto surfaces = trace_scene(cls.scene, cams);

    const RenderedScene train = shade_scene(cls.scene, cams, surfaces);
    std::vector<ViewGeometry> geo;
    for (const auto& v : train.views) geo.push_back({&v.depth, &v.calib});
    cls.grid = fit_grid(geo);
    cls.train = {"000", 0, train.views, std::vector<std::uint8_t>(cls.grid.voxel_count(), 0), {}, {}, {}};

    const std::size_t n_test = cfg.n_nominal_test + cfg.n_defective_test;
    for (std::size_t i = 0; i < n_test; ++i) {
      SceneSpec spec = cls.scene;
      spec.texture.phase_seed = derive_seed(seed, 3000 + 100 * ci + i);
      RenderedScene scene = shade_scene(spec, cams, surfaces);
      Instance inst;
      inst.id = instance_id(i);
      inst.label = i >= cfg.n_nominal_test ? 1 : 0;
      inst.gt_mask.assign(cls.grid.voxel_count(), 0);
      Rng defect_rng(derive_seed(seed, 5000 + 100 * ci + i));
      Rng artefact_rng(derive_seed(seed, 7000 + 100 * ci + i));
      if (inst.label) inst.defects = plan_defects(spec, scene, i - cfg.n_nominal_test, cfg, defect_rng);
      for (const auto& d : inst.defects) {
        inst.defect_views.push_back(visible_views(scene, d.center));
        const auto m = inject_defect(scene, spec, cls.grid, d);
        for (std::size_t v = 0; v < m.size(); ++v) inst.gt_mask[v] |= m[v];
      }
      if (cfg.artefacts) {
        inst.artefacts = plan_artefacts(scene, inst.defects, cfg, artefact_rng);
        for (const auto& a : inst.artefacts) inject_artefact(scene, a);
      }
      inst.views = std::move(scene.views);
      cls.test.push_back(std::move(inst));
    }
    bench.classes.push_back(std::move(cls));
  }
  return bench;
}

} // namespace modmap::datagen
