#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cvl/error.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/parallel.hpp"

namespace cvl {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 operator*(const Mat3& m, const Vec3& v) {
  return {dot(m[0], v), dot(m[1], v), dot(m[2], v)};
}

inline Mat3 transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

inline Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

inline double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// Pinhole intrinsics, pixels. Camera frame is x-right, y-down, z-forward.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;

  void validate() const {
    require(fx > 0 && fy > 0, ErrorCode::InvalidArgument, "focal lengths must be positive");
    require(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height),
            ErrorCode::InvalidArgument, "principal point outside the image");
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// World-to-camera rigid transform: q = rotation * p + translation.
struct RigidPose {
  Mat3 rotation = identity3();
  Vec3 translation{0, 0, 0};
  std::size_t timestamp_index = 1;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  // Camera centre in world coordinates, -R^T t.
  Vec3 center() const { return -1.0 * (transpose(rotation) * translation); }

  void validate(double tol = 1e-9) const {
    const Mat3 rt = transpose(rotation);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double e = dot(rt[i], rt[j]) - (i == j ? 1.0 : 0.0);
        require(std::abs(e) <= tol, ErrorCode::InvalidArgument, "rotation is not orthonormal");
      }
    require(std::abs(determinant(rotation) - 1.0) <= tol, ErrorCode::InvalidArgument,
            "rotation determinant is not 1");
  }
};

// Builds a world-to-camera pose from a camera centre and an optical axis
// direction. `right_hint` fixes roll: camera x is forward x up, with world
// up = +z. Forward must not be vertical unless `right_hint` is given.
inline RigidPose look_along(const Vec3& center, const Vec3& forward, std::optional<Vec3> right_hint = {},
                            std::size_t timestamp_index = 1) {
  const Vec3 f = (1.0 / norm(forward)) * forward;
  Vec3 r = right_hint ? *right_hint : cross(f, Vec3{0, 0, 1});
  r = r - dot(r, f) * f;
  require(norm(r) > 1e-12, ErrorCode::InvalidArgument, "degenerate camera orientation");
  r = (1.0 / norm(r)) * r;
  const Vec3 d = cross(f, r);
  RigidPose pose;
  pose.rotation = {r, d, f};
  pose.translation = -1.0 * (pose.rotation * center);
  pose.timestamp_index = timestamp_index;
  return pose;
}

// Overhead canvas: S x S pixels, lambda metres per pixel, centred on the
// query camera. World frame: x south, y east, z up, ground plane at z = -h.
// Pixel (u, v) is (row, column).
struct CanvasSpec {
  std::size_t size_px = 512;
  double meters_per_pixel = 0.2;
  double center_u = 256.0;
  double center_v = 256.0;
  double camera_height = 1.65;

  static CanvasSpec centered(std::size_t size, double meters_per_pixel, double camera_height = 1.65) {
    return {size, meters_per_pixel, static_cast<double>(size / 2), static_cast<double>(size / 2),
            camera_height};
  }

  double coverage_m() const { return static_cast<double>(size_px) * meters_per_pixel; }

  void validate() const {
    require(size_px > 0, ErrorCode::InvalidArgument, "canvas size must be positive");
    require(meters_per_pixel > 0, ErrorCode::InvalidArgument, "meters_per_pixel must be positive");
    require(camera_height > 0, ErrorCode::InvalidArgument, "camera_height must be positive");
  }
};

inline Vec3 overhead_pixel_to_world(double u, double v, const CanvasSpec& canvas) {
  const double lambda = canvas.meters_per_pixel;
  return {lambda * (v - canvas.center_v), lambda * (u - canvas.center_u), -canvas.camera_height};
}

struct OverheadPixel {
  double u;
  double v;
};

inline OverheadPixel world_to_overhead_pixel(const Vec3& p, const CanvasSpec& canvas) {
  return {p[1] / canvas.meters_per_pixel + canvas.center_u, p[0] / canvas.meters_per_pixel + canvas.center_v};
}

struct GroundPixel {
  double u;  // horizontal image coordinate (column)
  double v;  // vertical image coordinate (row)
  double w;  // depth along the optical axis
};

inline constexpr double kMinDepth = 1e-6;

// Perspective projection without the visibility check; w is returned as is.
inline GroundPixel project_to_ground(const Vec3& p, const CameraIntrinsics& k, const RigidPose& pose) {
  const Vec3 q = pose.apply(p);
  const double w = q[2];
  return {k.fx * q[0] / w + k.cx, k.fy * q[1] / w + k.cy, w};
}

inline GroundPixel world_to_ground_pixel(const Vec3& p, const CameraIntrinsics& k, const RigidPose& pose) {
  const GroundPixel g = project_to_ground(p, k, pose);
  if (!(g.w > kMinDepth)) fail(ErrorCode::NotInFront, "point depth " + std::to_string(g.w));
  return g;
}

// Back-projects a ground-image pixel onto the plane z = -h. Empty when the
// ray does not hit the plane in front of the camera.
inline std::optional<Vec3> ground_pixel_to_plane(double u, double v, const CameraIntrinsics& k,
                                                 const RigidPose& pose, double camera_height) {
  const Vec3 ray_cam{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
  const Vec3 dir = transpose(pose.rotation) * ray_cam;
  const Vec3 origin = pose.center();
  if (std::abs(dir[2]) < 1e-15) return std::nullopt;
  const double s = (-camera_height - origin[2]) / dir[2];
  if (!(s > 0)) return std::nullopt;
  return origin + s * dir;
}

enum class Interpolation { Bilinear, Nearest };

// Samples `source` at the fractional location (col, row). Masked source
// pixels carry no weight; the remaining weights are renormalised and the
// sample is rejected when their total falls below 1e-6.
template <typename T>
bool sample_masked(const FeatureMap<T>& source, double col, double row, Interpolation mode, std::span<T> out) {
  const std::size_t channels = source.channels();
  if (mode == Interpolation::Nearest) {
    const auto c = static_cast<std::size_t>(std::lround(col));
    const auto r = static_cast<std::size_t>(std::lround(row));
    if (!source.valid(r, c)) return false;
    const auto px = source.pixel(r, c);
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = px[ch];
    return true;
  }
  const auto c0 = static_cast<std::size_t>(std::floor(col));
  const auto r0 = static_cast<std::size_t>(std::floor(row));
  const std::size_t c1 = std::min(c0 + 1, source.width() - 1);
  const std::size_t r1 = std::min(r0 + 1, source.height() - 1);
  const double ac = col - static_cast<double>(c0);
  const double ar = row - static_cast<double>(r0);
  const std::array<std::size_t, 4> rows{r0, r0, r1, r1};
  const std::array<std::size_t, 4> cols{c0, c1, c0, c1};
  const std::array<double, 4> weights{(1 - ar) * (1 - ac), (1 - ar) * ac, ar * (1 - ac), ar * ac};

  double total = 0.0;
  for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = T(0);
  for (int k = 0; k < 4; ++k) {
    if (weights[k] == 0.0 || !source.valid(rows[k], cols[k])) continue;
    total += weights[k];
    const auto px = source.pixel(rows[k], cols[k]);
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] += static_cast<T>(weights[k] * px[ch]);
  }
  if (total < 1e-6) {
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = T(0);
    return false;
  }
  for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = static_cast<T>(out[ch] / total);
  return true;
}

struct WarpOptions {
  Interpolation interpolation = Interpolation::Bilinear;
};

/// Geometry-driven view projection: inverse-warps a ground-view feature map
/// onto the overhead canvas assuming every canvas pixel lies on the ground
/// plane. Canvas pixels that land behind the camera or outside the source
/// image are masked.
template <typename T>
FeatureMap<T> gvp_warp(const FeatureMap<T>& source, const CameraIntrinsics& intrinsics, const RigidPose& pose,
                       const CanvasSpec& canvas, WarpOptions options = {}) {
  require(source.width() == intrinsics.width && source.height() == intrinsics.height,
          ErrorCode::DimensionMismatch,
          "source is " + std::to_string(source.height()) + "x" + std::to_string(source.width()) +
              " but intrinsics describe " + std::to_string(intrinsics.height) + "x" +
              std::to_string(intrinsics.width));
  canvas.validate();
  const std::size_t size = canvas.size_px;
  FeatureMap<T> out(size, size, source.channels());
  if (source.empty()) return out;
  const double max_col = static_cast<double>(source.width() - 1);
  const double max_row = static_cast<double>(source.height() - 1);

  parallel_for(0, size, [&](std::size_t u) {
    for (std::size_t v = 0; v < size; ++v) {
      const Vec3 world = overhead_pixel_to_world(static_cast<double>(u), static_cast<double>(v), canvas);
      const GroundPixel g = project_to_ground(world, intrinsics, pose);
      if (!(g.w > kMinDepth)) continue;
      if (!(g.u >= 0.0 && g.u <= max_col && g.v >= 0.0 && g.v <= max_row)) continue;
      if (sample_masked(source, g.u, g.v, options.interpolation, out.pixel(u, v))) out.set_valid(u, v, true);
    }
  });
  return out;
}

template <typename T>
std::vector<FeatureMap<T>> gvp_warp_sequence(const std::vector<FeatureMap<T>>& sources,
                                             const std::vector<CameraIntrinsics>& intrinsics,
                                             const std::vector<RigidPose>& poses, const CanvasSpec& canvas,
                                             WarpOptions options = {}) {
  require(!sources.empty(), ErrorCode::EmptySequence, "no frames to project");
  require(intrinsics.size() == sources.size() && poses.size() == sources.size(), ErrorCode::DimensionMismatch,
          "frame, intrinsics and pose counts differ");
  std::vector<FeatureMap<T>> out;
  out.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    out.push_back(gvp_warp(sources[i], intrinsics[i], poses[i], canvas, options));
  return out;
}

}  // namespace cvl
