#pragma once

#include <array>
#include <cmath>
#include <string>

#include "modmap/error.hpp"

namespace modmap {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }

/// Pinhole camera: zero-skew intrinsics plus a rigid camera-to-world pose.
/// Camera frame: x right, y down, z forward. Depth is the camera-frame z.
struct CameraCalib {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  std::array<double, 16> cam_to_world{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; // row-major

  double rot(int r, int c) const { return cam_to_world[r * 4 + c]; }
  Vec3 translation() const { return {cam_to_world[3], cam_to_world[7], cam_to_world[11]}; }

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw DataError("camera focal lengths must be positive");
    double worst = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += rot(k, i) * rot(k, j);
        worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
    if (worst >= 1e-6) throw DataError("camera rotation is not orthonormal");
    const Vec3 r0{rot(0, 0), rot(1, 0), rot(2, 0)}, r1{rot(0, 1), rot(1, 1), rot(2, 1)},
        r2{rot(0, 2), rot(1, 2), rot(2, 2)};
    if (dot(cross(r0, r1), r2) <= 0) throw DataError("camera rotation has negative determinant");
  }

  Vec3 to_world(const Vec3& p) const {
    return {rot(0, 0) * p[0] + rot(0, 1) * p[1] + rot(0, 2) * p[2] + cam_to_world[3],
            rot(1, 0) * p[0] + rot(1, 1) * p[1] + rot(1, 2) * p[2] + cam_to_world[7],
            rot(2, 0) * p[0] + rot(2, 1) * p[1] + rot(2, 2) * p[2] + cam_to_world[11]};
  }

  Vec3 to_camera(const Vec3& p) const {
    const Vec3 q = p - translation();
    return {rot(0, 0) * q[0] + rot(1, 0) * q[1] + rot(2, 0) * q[2],
            rot(0, 1) * q[0] + rot(1, 1) * q[1] + rot(2, 1) * q[2],
            rot(0, 2) * q[0] + rot(1, 2) * q[1] + rot(2, 2) * q[2]};
  }

  Vec3 camera_center() const { return translation(); }

  /// World-space direction of the ray through pixel (u, v), not normalized.
  Vec3 ray_direction(double u, double v) const {
    const Vec3 d{(u - cx) / fx, (v - cy) / fy, 1.0};
    return {rot(0, 0) * d[0] + rot(0, 1) * d[1] + rot(0, 2) * d[2],
            rot(1, 0) * d[0] + rot(1, 1) * d[1] + rot(1, 2) * d[2],
            rot(2, 0) * d[0] + rot(2, 1) * d[1] + rot(2, 2) * d[2]};
  }

  /// Camera looking from `eye` at `target`, world up `up`.
  static CameraCalib look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
                             double cx, double cy) {
    const Vec3 z = normalized(target - eye);
    const Vec3 x = normalized(cross(z, up));
    const Vec3 y = cross(z, x);
    CameraCalib c;
    c.fx = fx, c.fy = fy, c.cx = cx, c.cy = cy;
    c.cam_to_world = {x[0], y[0], z[0], eye[0], x[1], y[1], z[1], eye[1],
                      x[2], y[2], z[2], eye[2], 0,    0,    0,    1};
    return c;
  }
};

/// X_cam = d K^-1 [u v 1]^T, mapped to world by the camera pose.
inline Vec3 unproject(double u, double v, double depth, const CameraCalib& calib) {
  if (!(depth > 0)) throw DataError("unproject needs positive depth, got " + std::to_string(depth));
  const Vec3 cam{depth * (u - calib.cx) / calib.fx, depth * (v - calib.cy) / calib.fy, depth};
  return calib.to_world(cam);
}

struct PixelDepth {
  double u, v, depth;
};

/// Forward pinhole model; depth <= 0 means the point is behind the camera.
inline PixelDepth project(const Vec3& world, const CameraCalib& calib) {
  const Vec3 c = calib.to_camera(world);
  return {calib.fx * c[0] / c[2] + calib.cx, calib.fy * c[1] / c[2] + calib.cy, c[2]};
}

} // namespace modmap
