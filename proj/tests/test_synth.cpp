#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cvl/geometry.hpp"
#include "cvl/synth.hpp"
#include "test_util.hpp"

namespace cvl {
namespace {

SceneOptions checkerboard(double cell_m = 1.0) {
  SceneOptions o;
  o.kind = TextureKind::Checkerboard;
  o.checker_cell_m = cell_m;
  return o;
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs = differs || x != c.next();
    const double u = a.uniform();
    b.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  double s = 0, ss = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}

TEST(MakeScene, SameSeedIsIdentical) {
  const Scene a = make_scene(5, 102.4, 256);
  const Scene b = make_scene(5, 102.4, 256);
  EXPECT_EQ(a.texture, b.texture);
  for (double v : a.texture) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MakeScene, DifferentSeedsDiffer) {
  const Scene a = make_scene(1, 102.4, 256);
  const Scene b = make_scene(2, 102.4, 256);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.texture.size(); ++i) differing += a.texture[i] != b.texture[i];
  EXPECT_GE(differing, a.texture.size() / 100);
}

TEST(MakeScene, CheckerboardFlipsEveryMetre) {
  const Scene s = make_scene(0, 16.0, 160, checkerboard());
  // Sample at cell centres so bilinear blending plays no role.
  for (int i = -5; i < 5; ++i) {
    const double x = i + 0.5;
    EXPECT_NE(s.sample(x, 0.5), s.sample(x + 1.0, 0.5));
    EXPECT_NE(s.sample(0.5, x), s.sample(0.5, x + 1.0));
    EXPECT_NEAR(s.sample(x, 0.5), s.sample(x + 0.4, 0.5 - 0.4), 1e-9);
  }
}

TEST(MakeScene, RejectsBadArguments) {
  EXPECT_THROW(make_scene(0, 0.0, 16), Error);
  EXPECT_THROW(make_scene(0, 10.0, 1), Error);
}

TEST(Scene, SampleIsPeriodic) {
  const Scene s = make_scene(9, 51.2, 128);
  EXPECT_NEAR(s.sample(3.3, -7.1), s.sample(3.3 + 51.2, -7.1 - 51.2), 1e-9);
}

TEST(RenderSatellite, CenterPixelIsTextureAtCenter) {
  const Scene s = make_scene(3, 102.4, 512);
  const CanvasSpec canvas = CanvasSpec::centered(64, 0.3);
  const auto img = render_satellite(s, canvas, 4.2, -1.7);
  EXPECT_EQ(img.valid_count(), 64u * 64u);
  EXPECT_DOUBLE_EQ(img.at(32, 32, 0), s.sample(4.2, -1.7));
}

TEST(RenderSatellite, ShiftByOneMetrePixel) {
  const Scene s = make_scene(4, 102.4, 512);
  const CanvasSpec canvas = CanvasSpec::centered(48, 0.25);
  const auto a = render_satellite(s, canvas, 0.0, 0.0);
  const auto b = render_satellite(s, canvas, 0.0, 0.25);
  for (std::size_t u = 0; u + 1 < 48; ++u)
    for (std::size_t v = 0; v < 48; ++v) EXPECT_NEAR(b.at(u, v, 0), a.at(u + 1, v, 0), 1e-12);
}

// First two transitions of a thresholded checkerboard along the centre row.
double transition_spacing(const FeatureMap<double>& img) {
  const std::size_t row = img.height() / 2 + 1;
  std::vector<std::size_t> edges;
  for (std::size_t v = 1; v < img.width(); ++v)
    if ((img.at(row, v, 0) > 0.5) != (img.at(row, v - 1, 0) > 0.5)) edges.push_back(v);
  EXPECT_GE(edges.size(), 3u);
  return static_cast<double>(edges[2] - edges[1]);
}

TEST(RenderSatellite, DoublingResolutionHalvesFeatureSize) {
  const Scene s = make_scene(0, 64.0, 640, checkerboard());
  const double fine = transition_spacing(render_satellite(s, CanvasSpec::centered(64, 0.1), 0.03, 0.03));
  const double coarse = transition_spacing(render_satellite(s, CanvasSpec::centered(64, 0.2), 0.03, 0.03));
  EXPECT_EQ(fine, 10.0);
  EXPECT_EQ(coarse, 5.0);
}

TEST(RenderGround, StraightDownMatchesDirectSampling) {
  const Scene s = make_scene(11, 102.4, 1024);
  const CameraIntrinsics k = make_intrinsics(64, 48, std::numbers::pi / 3);
  const Vec3 center{1.5, -2.0, 0.0};
  const double h = 1.65;
  const RigidPose pose = make_pose(center, 0.4, std::numbers::pi / 2);
  const auto img = render_ground(s, k, pose, h);
  ASSERT_EQ(img.valid_count(), 64u * 48u);
  // The camera axes are the rows of the rotation; the ray through a pixel
  // meets the plane h below the centre.
  const Vec3 right = pose.rotation[0], down = pose.rotation[1];
  for (std::size_t r = 0; r < 48; r += 5)
    for (std::size_t c = 0; c < 64; c += 5) {
      const double dx = (static_cast<double>(c) - k.cx) / k.fx;
      const double dy = (static_cast<double>(r) - k.cy) / k.fy;
      const Vec3 p = center + h * (dx * right + dy * down);
      EXPECT_NEAR(img.at(r, c, 0), s.sample(p[0], p[1]), 1e-9);
    }
}

TEST(RenderGround, HorizonAndSkyMasked) {
  const Scene s = make_scene(12, 102.4, 512);
  const CameraIntrinsics k = make_intrinsics(32, 24, std::numbers::pi / 2);
  const auto img = render_ground(s, k, make_pose({0, 0, 0}, 1.1), 1.65);
  const auto horizon = static_cast<std::size_t>(k.cy);
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(img.valid(r, c), r > horizon) << r << "," << c;
}

TEST(RenderGround, PitchedDownShowsMoreGround) {
  const Scene s = make_scene(13, 102.4, 512);
  const CameraIntrinsics k = make_intrinsics(32, 24, std::numbers::pi / 2);
  const auto level = render_ground(s, k, make_pose({0, 0, 0}, 0.0), 1.65);
  const auto pitched = render_ground(s, k, make_pose({0, 0, 0}, 0.0, 0.2), 1.65);
  EXPECT_GT(pitched.valid_count(), level.valid_count());
  EXPECT_TRUE(pitched.valid(23, 0));
  EXPECT_FALSE(pitched.valid(0, 0));
}

TEST(RenderGround, RejectsCameraBelowGround) {
  const Scene s = make_scene(1, 10.0, 16);
  const CameraIntrinsics k = make_intrinsics(8, 8, 1.0);
  EXPECT_THROW(render_ground(s, k, make_pose({0, 0, -2.0}, 0.0), 1.65), Error);
}

TEST(MakeTrajectory, Examples) {
  const Trajectory one = make_trajectory(1, 5.0, 0.3);
  ASSERT_EQ(one.poses.size(), 1u);
  for (double v : one.poses[0].center()) EXPECT_NEAR(v, 0.0, 1e-12);

  const Trajectory north = make_trajectory(4, 5.0, 0.0);
  ASSERT_EQ(north.poses.size(), 4u);
  const double behind[] = {15, 10, 5, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec3 c = north.poses[i].center();
    EXPECT_NEAR(c[0], behind[i], 1e-12);  // behind a north-facing camera is south (+x)
    EXPECT_NEAR(c[1], 0.0, 1e-12);
    EXPECT_EQ(north.poses[i].timestamp_index, i + 1);
  }

  const Trajectory east = make_trajectory(3, 2.0, std::numbers::pi / 2);
  EXPECT_NEAR(east.poses[0].center()[1], 4.0, 1e-12);
  EXPECT_NEAR(east.poses[0].center()[0], 0.0, 1e-12);
}

TEST(MakeTrajectory, CustomEndPoint) {
  const Trajectory t = make_trajectory(2, 3.0, 0.0, 0.0, {7.0, -1.0, 0.0});
  EXPECT_NEAR(t.poses[1].center()[0], 7.0, 1e-12);
  EXPECT_NEAR(t.poses[0].center()[0], 10.0, 1e-12);
  EXPECT_NEAR(t.poses[0].center()[1], -1.0, 1e-12);
}

TEST(Reanchor, MovesWorldOrigin) {
  const RigidPose pose = make_pose({12.0, -3.0, 0.0}, 0.8, 0.1);
  const Vec3 anchor{10.0, -5.0, 0.0};
  const RigidPose local = reanchor(pose, anchor);
  const Vec3 c = local.center();
  EXPECT_NEAR(c[0], 2.0, 1e-12);
  EXPECT_NEAR(c[1], 2.0, 1e-12);
  const Vec3 p{4.0, 1.0, -1.65};
  const Vec3 a = pose.apply(p), b = local.apply(p - anchor);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(AddGaussianNoise, LeavesMaskedPixelsAlone) {
  FeatureMap<double> f(64, 64, 1, true);
  f.set_valid(0, 0, false);
  Rng rng(3);
  add_gaussian_noise(f, 0.1, rng);
  EXPECT_EQ(f.at(0, 0, 0), 0.0);
  double ss = 0;
  for (double v : f.data()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / (64 * 64 - 1)), 0.1, 0.01);
}

// ---- invariants -----------------------------------------------------------------

TEST(SynthInvariants, WarpedGroundMatchesSatellite) {
  const CanvasSpec canvas = CanvasSpec::centered(256, 0.2);
  const CameraIntrinsics k = make_intrinsics(1024, 256, std::numbers::pi / 2);
  Rng rng(17);
  for (std::uint64_t seed = 100; seed < 103; ++seed) {
    const Scene scene = make_scene(seed, 409.6, 2048);
    const Vec3 c{rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0};
    const RigidPose pose = make_pose(c, rng.uniform(0, 2 * std::numbers::pi), rng.uniform(-0.05, 0.15));
    const auto ground = render_ground(scene, k, pose, canvas.camera_height);
    const auto warped = gvp_warp(ground, k, reanchor(pose, c), canvas);
    const auto sat = render_satellite(scene, canvas, c[0], c[1]);
    const auto a = testing::agreement(warped, sat);
    EXPECT_GT(a.count, 1000u);
    EXPECT_LT(a.mae, 0.05);
    EXPECT_GT(a.corr, 0.98);
  }
}

TEST(SynthInvariants, RendersScheduleIndependent) {
  const Scene scene = make_scene(8, 102.4, 512);
  const CameraIntrinsics k = make_intrinsics(256, 64, std::numbers::pi / 2);
  FeatureMap<double> s1, s4, g1, g4;
  {
    testing::ThreadsGuard g(1);
    s1 = render_satellite(scene, CanvasSpec::centered(64, 0.2), 1, 2);
    g1 = render_ground(scene, k, make_pose({0, 0, 0}, 0.3, 0.1), 1.65);
  }
  {
    testing::ThreadsGuard g(4);
    s4 = render_satellite(scene, CanvasSpec::centered(64, 0.2), 1, 2);
    g4 = render_ground(scene, k, make_pose({0, 0, 0}, 0.3, 0.1), 1.65);
  }
  EXPECT_EQ(s1, s4);
  EXPECT_EQ(g1, g4);
}

}  // namespace
}  // namespace cvl
