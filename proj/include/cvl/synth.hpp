#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cvl/error.hpp"
#include "cvl/eval.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/geometry.hpp"
#include "cvl/parallel.hpp"

namespace cvl {

// splitmix64; fully specified so synthetic data is identical on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class TextureKind { ValueNoise, Checkerboard };

struct SceneOptions {
  TextureKind kind = TextureKind::ValueNoise;
  // Value-noise octaves: lattice period in metres and amplitude.
  std::vector<double> octave_periods_m{25.6, 12.8, 6.4};
  std::vector<double> octave_weights{0.45, 0.35, 0.2};
  double checker_cell_m = 1.0;
  GeoPoint origin{49.0, 8.4};
};

/// Periodic planar texture on the ground plane. World (x, y) maps to
/// texture (row, col) = (x, y) / texel + T/2, wrapped.
struct Scene {
  std::size_t texture_size = 0;
  double extent_m = 0.0;
  std::uint64_t seed = 0;
  GeoPoint origin;
  std::vector<double> texture;

  double texel_m() const { return extent_m / static_cast<double>(texture_size); }
  double texel(std::size_t row, std::size_t col) const { return texture[row * texture_size + col]; }

  // Bilinear texture lookup at a world position.
  double sample(double x, double y) const {
    const double n = static_cast<double>(texture_size);
    const double tr = x / texel_m() + 0.5 * n;
    const double tc = y / texel_m() + 0.5 * n;
    const double fr = std::floor(tr);
    const double fc = std::floor(tc);
    const double ar = tr - fr;
    const double ac = tc - fc;
    auto wrap = [&](double i) {
      const double m = std::fmod(i, n);
      return static_cast<std::size_t>(m < 0 ? m + n : m);
    };
    const std::size_t r0 = wrap(fr), r1 = wrap(fr + 1), c0 = wrap(fc), c1 = wrap(fc + 1);
    return (1 - ar) * ((1 - ac) * texel(r0, c0) + ac * texel(r0, c1)) +
           ar * ((1 - ac) * texel(r1, c0) + ac * texel(r1, c1));
  }
};

namespace detail {
inline double lattice_value(std::uint64_t seed, std::size_t octave, std::size_t i, std::size_t j) {
  std::uint64_t h = Rng::mix(seed ^ 0x5851f42d4c957f2dULL);
  h = Rng::mix(h ^ (octave + 1));
  h = Rng::mix(h ^ (static_cast<std::uint64_t>(i) << 32 ^ j));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }
}  // namespace detail

inline Scene make_scene(std::uint64_t seed, double extent_m, std::size_t texture_size, const SceneOptions& options = {}) {
  require(extent_m > 0, ErrorCode::InvalidArgument, "scene extent must be positive");
  require(texture_size >= 2, ErrorCode::InvalidArgument, "texture needs at least 2 texels per side");
  require(options.octave_periods_m.size() == options.octave_weights.size(), ErrorCode::InvalidArgument,
          "octave periods and weights differ in length");
  Scene scene{texture_size, extent_m, seed, options.origin, std::vector<double>(texture_size * texture_size, 0.0)};
  const double texel = scene.texel_m();
  const std::size_t n = texture_size;

  if (options.kind == TextureKind::Checkerboard) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const auto a = static_cast<long long>(std::floor(static_cast<double>(r) * texel / options.checker_cell_m));
        const auto b = static_cast<long long>(std::floor(static_cast<double>(c) * texel / options.checker_cell_m));
        scene.texture[r * n + c] = ((a + b) % 2 == 0) ? 1.0 : 0.0;
      }
    return scene;
  }

  double total_weight = 0.0;
  for (double w : options.octave_weights) total_weight += w;
  require(total_weight > 0, ErrorCode::InvalidArgument, "octave weights must sum to a positive value");
  for (std::size_t o = 0; o < options.octave_periods_m.size(); ++o) {
    // Lattice cells per side; at least one so the octave tiles the texture.
    const auto cells = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(extent_m / options.octave_periods_m[o])));
    const double period_texels = static_cast<double>(n) / static_cast<double>(cells);
    const double weight = options.octave_weights[o] / total_weight;
    for (std::size_t r = 0; r < n; ++r) {
      const double fr = static_cast<double>(r) / period_texels;
      const auto i0 = static_cast<std::size_t>(fr);
      const double tr = detail::smoothstep(fr - static_cast<double>(i0));
      const std::size_t i1 = (i0 + 1) % cells;
      for (std::size_t c = 0; c < n; ++c) {
        const double fc = static_cast<double>(c) / period_texels;
        const auto j0 = static_cast<std::size_t>(fc);
        const double tc = detail::smoothstep(fc - static_cast<double>(j0));
        const std::size_t j1 = (j0 + 1) % cells;
        const double v00 = detail::lattice_value(seed, o, i0 % cells, j0 % cells);
        const double v01 = detail::lattice_value(seed, o, i0 % cells, j1);
        const double v10 = detail::lattice_value(seed, o, i1, j0 % cells);
        const double v11 = detail::lattice_value(seed, o, i1, j1);
        const double v = (1 - tr) * ((1 - tc) * v00 + tc * v01) + tr * ((1 - tc) * v10 + tc * v11);
        scene.texture[r * n + c] += weight * v;
      }
    }
  }
  return scene;
}

// Orthographic overhead render centred on world (x, y) = center_world.
inline FeatureMap<double> render_satellite(const Scene& scene, const CanvasSpec& canvas, double center_x,
                                           double center_y) {
  canvas.validate();
  const std::size_t s = canvas.size_px;
  FeatureMap<double> out(s, s, 1, true);
  const double lambda = canvas.meters_per_pixel;
  parallel_for(0, s, [&](std::size_t u) {
    for (std::size_t v = 0; v < s; ++v) {
      const double x = center_x + lambda * (static_cast<double>(v) - canvas.center_v);
      const double y = center_y + lambda * (static_cast<double>(u) - canvas.center_u);
      out.at(u, v, 0) = scene.sample(x, y);
    }
  });
  return out;
}

/// Ray-cast render of the ground plane z = -camera_height as seen through
/// a pinhole camera. Rays that miss the plane (sky) are masked.
inline FeatureMap<double> render_ground(const Scene& scene, const CameraIntrinsics& k, const RigidPose& pose,
                                        double camera_height) {
  k.validate();
  const Mat3 cam_to_world = transpose(pose.rotation);
  const Vec3 origin = pose.center();
  require(origin[2] > -camera_height, ErrorCode::InvalidArgument, "camera is below the ground plane");
  FeatureMap<double> out(k.height, k.width, 1);
  parallel_for(0, k.height, [&](std::size_t row) {
    for (std::size_t col = 0; col < k.width; ++col) {
      const double dx = (static_cast<double>(col) - k.cx) / k.fx;
      const double dy = (static_cast<double>(row) - k.cy) / k.fy;
      const double dir_z = cam_to_world[2][0] * dx + cam_to_world[2][1] * dy + cam_to_world[2][2];
      if (!(dir_z < -1e-12)) continue;
      const double t = (-camera_height - origin[2]) / dir_z;
      if (!(t > 0)) continue;
      const double x = origin[0] + t * (cam_to_world[0][0] * dx + cam_to_world[0][1] * dy + cam_to_world[0][2]);
      const double y = origin[1] + t * (cam_to_world[1][0] * dx + cam_to_world[1][1] * dy + cam_to_world[1][2]);
      out.at(row, col, 0) = scene.sample(x, y);
      out.set_valid(row, col, true);
    }
  });
  return out;
}

// Pinhole intrinsics with square pixels and the principal point at the
// image centre.
inline CameraIntrinsics make_intrinsics(std::size_t width, std::size_t height, double horizontal_fov_rad) {
  const double f = 0.5 * static_cast<double>(width) / std::tan(0.5 * horizontal_fov_rad);
  return {f, f, 0.5 * static_cast<double>(width), 0.5 * static_cast<double>(height), width, height};
}

// Horizontal driving direction for a heading measured counter-clockwise
// (seen from above) from north: 0 -> north (-x), pi/2 -> west (-y).
inline Vec3 heading_direction(double heading_rad) { return {-std::cos(heading_rad), -std::sin(heading_rad), 0.0}; }

// Camera at `center` looking along `heading`, pitched down by `pitch_rad`.
inline RigidPose make_pose(const Vec3& center, double heading_rad, double pitch_rad = 0.0,
                           std::size_t timestamp_index = 1) {
  const Vec3 f = heading_direction(heading_rad);
  const Vec3 forward = std::cos(pitch_rad) * f + std::sin(pitch_rad) * Vec3{0, 0, -1};
  return look_along(center, forward, cross(f, Vec3{0, 0, 1}), timestamp_index);
}

struct Trajectory {
  std::vector<RigidPose> poses;
  std::vector<Vec3> centers;
  double spacing = 0.0;
  double heading = 0.0;
};

/// Straight constant-heading drive ending at the world origin: frame i of n
/// sits (n - i) * spacing behind the origin.
inline Trajectory make_trajectory(std::size_t n_frames, double spacing_m, double heading_rad, double pitch_rad = 0.0,
                                  const Vec3& end = {0, 0, 0}) {
  require(n_frames >= 1, ErrorCode::InvalidArgument, "trajectory needs at least one frame");
  require(spacing_m > 0, ErrorCode::InvalidArgument, "frame spacing must be positive");
  Trajectory traj;
  traj.spacing = spacing_m;
  traj.heading = heading_rad;
  const Vec3 forward = heading_direction(heading_rad);
  for (std::size_t i = 1; i <= n_frames; ++i) {
    const double back = static_cast<double>(n_frames - i) * spacing_m;
    const Vec3 c = end - back * forward;
    traj.centers.push_back(c);
    traj.poses.push_back(make_pose(c, heading_rad, pitch_rad, i));
  }
  return traj;
}

// The same pose with the world origin moved to `anchor`.
inline RigidPose reanchor(const RigidPose& pose, const Vec3& anchor) {
  RigidPose out = pose;
  out.translation = pose.translation + pose.rotation * anchor;
  return out;
}

// Adds i.i.d. Gaussian noise to valid entries.
inline void add_gaussian_noise(FeatureMap<double>& f, double sigma, Rng& rng) {
  for (std::size_t r = 0; r < f.height(); ++r)
    for (std::size_t c = 0; c < f.width(); ++c) {
      if (!f.valid(r, c)) continue;
      for (auto& v : f.pixel(r, c)) v += sigma * rng.normal();
    }
}

}  // namespace cvl
