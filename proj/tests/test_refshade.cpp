#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "voxrender/refshade.hpp"
#include "voxrender/rng.hpp"
#include "voxrender/voxel_grid.hpp"

using namespace voxrender;

namespace {

VoxelGrid sphere_grid(std::size_t n, double radius, double smooth = 0.0) {
  VoxelGrid g(n, n, n, 1);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t h = 0; h < n; ++h)
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t d = 0; d < n; ++d) {
        const double r = std::sqrt((h - c) * (h - c) + (w - c) * (w - c) + (d - c) * (d - c));
        if (smooth <= 0.0)
          g.at(h, w, d) = r <= radius ? 1.0f : 0.0f;
        else
          g.at(h, w, d) = static_cast<float>(1.0 / (1.0 + std::exp((r - radius) / smooth)));
      }
  return g;
}

// axis-aligned box [h0,h1) x [w0,w1) x [d0,d1)
void add_box(VoxelGrid& g, std::size_t h0, std::size_t h1, std::size_t w0, std::size_t w1,
             std::size_t d0, std::size_t d1, float v = 1.0f) {
  for (std::size_t h = h0; h < h1; ++h)
    for (std::size_t w = w0; w < w1; ++w)
      for (std::size_t d = d0; d < d1; ++d) g.at(h, w, d) = v;
}

}  // namespace

TEST(Normals, SphereNormalsMatchAnalyticRadial) {
  const std::size_t n = 32;
  const double radius = 10.0;
  VoxelGrid g = sphere_grid(n, radius);
  VoxelGrid normals = estimate_normals(g);
  const double c = (n - 1.0) / 2.0;
  std::vector<double> errors;
  for (std::size_t h = 0; h < n; ++h)
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t d = 0; d < n; ++d) {
        const double r = std::sqrt((h - c) * (h - c) + (w - c) * (w - c) + (d - c) * (d - c));
        if (std::abs(r - radius) > 1.0) continue;  // surface shell only
        const double ex = (w - c) / r, ey = (h - c) / r, ez = (d - c) / r;
        const double dot = normals.at(h, w, d, 0) * ex + normals.at(h, w, d, 1) * ey +
                           normals.at(h, w, d, 2) * ez;
        errors.push_back(std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / kPi);
      }
  ASSERT_GT(errors.size(), 100u);
  std::sort(errors.begin(), errors.end());
  const double p95 = errors[static_cast<std::size_t>(0.95 * errors.size())];
  EXPECT_LT(p95, 10.0);
}

TEST(Normals, HalfSpaceSlabGivesExactFaceNormal) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 0, 16, 0, 16, 8, 16);  // occupied for d >= 8
  VoxelGrid normals = estimate_normals(g);
  // away from grid edges the normal must be exactly -z (gradient points +d)
  for (std::size_t h = 5; h < 11; ++h)
    for (std::size_t w = 5; w < 11; ++w) {
      EXPECT_NEAR(normals.at(h, w, 8, 0), 0.0, 1e-6);
      EXPECT_NEAR(normals.at(h, w, 8, 1), 0.0, 1e-6);
      EXPECT_NEAR(normals.at(h, w, 8, 2), -1.0, 1e-6);
    }
}

TEST(Normals, UniformGridGetsSentinel) {
  VoxelGrid g(8, 8, 8, 1);
  for (auto& v : g.data()) v = 0.7f;
  VoxelGrid normals = estimate_normals(g);
  // interior voxels have zero gradient -> sentinel (0,0,1)
  EXPECT_FLOAT_EQ(normals.at(4, 4, 4, 0), 0.0f);
  EXPECT_FLOAT_EQ(normals.at(4, 4, 4, 1), 0.0f);
  EXPECT_FLOAT_EQ(normals.at(4, 4, 4, 2), 1.0f);
}

TEST(Normals, MultiChannelGridRejected) {
  VoxelGrid g(4, 4, 4, 2);
  EXPECT_THROW(estimate_normals(g), std::invalid_argument);
}

TEST(March, SingleVoxelHitDepth) {
  VoxelGrid g(9, 9, 9, 1);
  g.at(4, 4, 5) = 1.0f;
  SurfaceMaps maps = march_visibility(g, 0.5);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      if (maps.hit(i, j)) {
        ++hits;
        EXPECT_EQ(i, 4u);
        EXPECT_EQ(j, 4u);
        EXPECT_NEAR(maps.depth[i * 9 + j], 5.0, 0.5 + 1e-9);
      }
  EXPECT_EQ(hits, 1u);
}

TEST(March, EmptyGridAllMiss) {
  VoxelGrid g(8, 8, 8, 1);
  SurfaceMaps maps = march_visibility(g, 0.5);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_FALSE(maps.hit(i, j));
      EXPECT_TRUE(std::isinf(maps.depth[i * 8 + j]));
    }
}

TEST(March, NearCubeWinsAtOverlap) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 2, 8, 2, 8, 3, 6);    // near cube (small d)
  add_box(g, 4, 12, 4, 12, 10, 14);  // far cube, overlapping in (i,j)
  SurfaceMaps maps = march_visibility(g, 0.5);

  // brute force over all depth samples at overlap pixels: nearest crossing wins
  for (std::size_t i = 4; i < 8; ++i)
    for (std::size_t j = 4; j < 8; ++j) {
      ASSERT_TRUE(maps.hit(i, j));
      double first = -1.0;
      for (double t = 0.0; t <= 15.0; t += 0.25)
        if (trilinear_sample(g, i, j, t) >= 0.5) {
          first = t;
          break;
        }
      EXPECT_NEAR(maps.depth[i * 16 + j], first, 0.5);
      EXPECT_LT(maps.depth[i * 16 + j], 6.0);  // near cube, not far cube
    }
}

TEST(March, DepthOrderingPropertyOnDisjointObjects) {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    VoxelGrid g(12, 12, 12, 1);
    const std::size_t dNear = 1 + rng.next() % 4;
    const std::size_t dFar = 7 + rng.next() % 4;
    add_box(g, 2, 9, 2, 9, dNear, dNear + 2);
    add_box(g, 2, 9, 2, 9, dFar, dFar + 2);
    SurfaceMaps maps = march_visibility(g, 0.5);
    for (std::size_t i = 3; i < 8; ++i)
      for (std::size_t j = 3; j < 8; ++j) {
        ASSERT_TRUE(maps.hit(i, j));
        EXPECT_LT(maps.depth[i * 12 + j], static_cast<double>(dNear) + 1.5);
      }
  }
}

TEST(Phong, AlignedNormalGivesOne) {
  VoxelGrid g(8, 8, 8, 1);
  add_box(g, 0, 8, 0, 8, 4, 8);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light;
  light.direction = {0, 0, -1};  // along the surface normal of the near face
  light.ambient = 0.0;
  ImageBuffer img = shade_phong(maps, light);
  EXPECT_NEAR(img.at(4, 4), 1.0, 1e-5);
}

TEST(Phong, PerpendicularLightLeavesAmbient) {
  VoxelGrid g(8, 8, 8, 1);
  add_box(g, 0, 8, 0, 8, 4, 8);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light;
  light.direction = {1, 0, 0};
  light.ambient = 0.2;
  ImageBuffer img = shade_phong(maps, light);
  EXPECT_NEAR(img.at(4, 4), 0.2, 1e-5);
}

TEST(Phong, NegativeLambertClampsToZero) {
  VoxelGrid g(8, 8, 8, 1);
  add_box(g, 0, 8, 0, 8, 4, 8);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light;
  light.direction = {0, 0, 1};  // opposite the normal: l.n = -1
  light.ambient = 0.3;
  ImageBuffer img = shade_phong(maps, light);
  EXPECT_FLOAT_EQ(img.at(4, 4), 0.0f);
}

TEST(Phong, NonUnitLightRejected) {
  VoxelGrid g(4, 4, 4, 1);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light;
  light.direction = {0, 2, 0};
  EXPECT_THROW(shade_phong(maps, light), std::invalid_argument);
}

TEST(Phong, MonotoneInAmbient) {
  VoxelGrid g = sphere_grid(16, 5.0);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec a = LightSpec::from_angles(40, 50, 0.1);
  LightSpec b = a;
  b.ambient = 0.4;
  ImageBuffer ia = shade_phong(maps, a), ib = shade_phong(maps, b);
  for (std::size_t i = 0; i < ia.size(); ++i) EXPECT_LE(ia.data()[i], ib.data()[i] + 1e-7f);
}

TEST(ComposeAlbedo, IdentityAndAnnihilator) {
  Rng rng(3);
  ImageBuffer shading(6, 6, 1);
  for (auto& v : shading.data()) v = static_cast<float>(rng.uniform());
  ImageBuffer ones(6, 6, 3);
  ones.fill(1.0f);
  ImageBuffer composed = compose_albedo(ones, shading);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(composed.at(i, j, c), shading.at(i, j));

  ImageBuffer zero(6, 6, 1);
  ImageBuffer dark = compose_albedo(ones, zero);
  for (float v : dark.data()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(ComposeAlbedo, MatchesScalarLoopOracle) {
  Rng rng(4);
  ImageBuffer albedo(5, 7, 3), shading(5, 7, 1);
  for (auto& v : albedo.data()) v = static_cast<float>(rng.uniform());
  for (auto& v : shading.data()) v = static_cast<float>(rng.uniform());
  ImageBuffer out = compose_albedo(albedo, shading);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_FLOAT_EQ(out.at(i, j, c), albedo.at(i, j, c) * shading.at(i, j));
}

TEST(ComposeAlbedo, DimMismatchThrows) {
  ImageBuffer a(4, 4, 3), s(5, 4, 1);
  EXPECT_THROW(compose_albedo(a, s), std::invalid_argument);
}

TEST(Contour, SphereGivesClosedOutline) {
  VoxelGrid g = sphere_grid(24, 8.0);
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer img = shade_contour(maps);
  // every mask-boundary pixel must be drawn
  std::size_t contour_pixels = 0;
  for (std::size_t i = 1; i < 23; ++i)
    for (std::size_t j = 1; j < 23; ++j) {
      bool boundary = maps.hit(i, j) && (!maps.hit(i - 1, j) || !maps.hit(i + 1, j) ||
                                         !maps.hit(i, j - 1) || !maps.hit(i, j + 1));
      if (boundary) {
        EXPECT_FLOAT_EQ(img.at(i, j), 0.0f);
        ++contour_pixels;
      }
    }
  EXPECT_GT(contour_pixels, 20u);
  EXPECT_FLOAT_EQ(img.at(0, 0), 1.0f);  // white background
}

TEST(Contour, FlatSquareInteriorIsClean) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 4, 12, 4, 12, 8, 12);
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer img = shade_contour(maps);
  for (std::size_t i = 7; i < 10; ++i)
    for (std::size_t j = 7; j < 10; ++j) EXPECT_FLOAT_EQ(img.at(i, j), 1.0f);
}

TEST(Contour, DepthDiscontinuityBetweenAbuttingCubes) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 2, 14, 2, 8, 4, 8);    // near slab on the left
  add_box(g, 2, 14, 8, 14, 10, 14);  // far slab on the right, abutting at w=8
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer img = shade_contour(maps, 2.0, 30.0);
  // contour along the shared edge (depth jump of ~6 voxels)
  for (std::size_t i = 5; i < 11; ++i) EXPECT_FLOAT_EQ(img.at(i, 8), 0.0f);
  // but not inside either slab
  EXPECT_FLOAT_EQ(img.at(8, 5), 1.0f);
  EXPECT_FLOAT_EQ(img.at(8, 11), 1.0f);
}

TEST(Toon, QuantizerBandsOnFlatPlane) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 0, 16, 0, 16, 8, 16);  // full-frame slab: no contours
  SurfaceMaps maps = march_visibility(g, 0.5);
  // pick a light so Phong is exactly 0.7: l.n = 0.5 with ambient 0.2
  LightSpec light;
  light.direction = {std::sqrt(3.0) / 2.0, 0.0, -0.5};
  light.ambient = 0.2;
  ImageBuffer phong = shade_phong(maps, light);
  EXPECT_NEAR(phong.at(8, 8), 0.7, 1e-5);
  ImageBuffer toon = shade_toon(maps, light, 2);
  EXPECT_FLOAT_EQ(toon.at(8, 8), 1.0f);
}

TEST(Toon, ConvergesToPhongForManyLevels) {
  VoxelGrid g(16, 16, 16, 1);
  add_box(g, 0, 16, 0, 16, 8, 16);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light = LightSpec::from_angles(30, 40, 0.1);
  ImageBuffer phong = shade_phong(maps, light);
  const std::size_t levels = 64;
  ImageBuffer toon = shade_toon(maps, light, levels);
  float sup = 0.0f;
  for (std::size_t i = 0; i < toon.size(); ++i)
    sup = std::max(sup, std::abs(toon.data()[i] - phong.data()[i]));
  EXPECT_LE(sup, 1.0f / levels + 1e-6f);
}

TEST(Toon, EmptyGridIsBlank) {
  VoxelGrid g(8, 8, 8, 1);
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer toon = shade_toon(maps, LightSpec::from_angles(0, 45), 3);
  for (float v : toon.data()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Toon, RejectsFewerThanTwoLevels) {
  VoxelGrid g(4, 4, 4, 1);
  SurfaceMaps maps = march_visibility(g, 0.5);
  EXPECT_THROW(shade_toon(maps, LightSpec{}, 1), std::invalid_argument);
}

TEST(Ao, OpenPlateIsUnoccluded) {
  VoxelGrid g(24, 24, 24, 1);
  add_box(g, 0, 24, 0, 24, 12, 16);
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer ao = shade_ao(g, maps, 64, 20);
  for (std::size_t i = 8; i < 16; ++i)
    for (std::size_t j = 8; j < 16; ++j) EXPECT_GE(ao.at(i, j), 0.95f);
}

TEST(Ao, DeepCavityIsDark) {
  VoxelGrid g(24, 24, 24, 1);
  add_box(g, 0, 24, 0, 24, 4, 22);       // thick solid
  add_box(g, 9, 15, 9, 15, 4, 20, 0.0f);  // carve a deep square shaft from the near side
  SurfaceMaps maps = march_visibility(g, 0.5);
  ASSERT_TRUE(maps.hit(12, 12));
  EXPECT_GT(maps.depth[12 * 24 + 12], 15.0);  // bottom of the shaft
  ImageBuffer ao = shade_ao(g, maps, 64, 24);
  EXPECT_LE(ao.at(12, 12), 0.2f);
}

TEST(Ao, DeterministicPerSeed) {
  VoxelGrid g = sphere_grid(16, 5.0);
  SurfaceMaps maps = march_visibility(g, 0.5);
  ImageBuffer a = shade_ao(g, maps, 1, 10, 7);
  ImageBuffer b = shade_ao(g, maps, 1, 10, 7);
  EXPECT_EQ(a.data(), b.data());
}

TEST(Silhouette, MatchesPerColumnMax) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    VoxelGrid g(6, 7, 8, 1);
    for (auto& v : g.data()) v = static_cast<float>(rng.uniform());
    ImageBuffer s = silhouette(g);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        float best = 0.0f;
        for (std::size_t d = 0; d < 8; ++d) best = std::max(best, g.at(i, j, d));
        EXPECT_FLOAT_EQ(s.at(i, j), best);
      }
  }
}

TEST(Silhouette, EmptyGridIsZeroAndOccupiedColumnIsOne) {
  VoxelGrid g(8, 8, 8, 1);
  ImageBuffer s0 = silhouette(g);
  for (float v : s0.data()) EXPECT_FLOAT_EQ(v, 0.0f);
  g.at(3, 5, 7) = 1.0f;
  ImageBuffer s1 = silhouette(g);
  EXPECT_FLOAT_EQ(s1.at(3, 5), 1.0f);
}

TEST(Silhouette, DominatesVisibilityMask) {
  VoxelGrid g = sphere_grid(16, 5.0, 0.5);
  ImageBuffer s = silhouette(g);
  for (double threshold : {0.3, 0.5, 0.7}) {
    SurfaceMaps maps = march_visibility(g, threshold);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        if (maps.hit(i, j)) EXPECT_GE(s.at(i, j), static_cast<float>(threshold));
  }
}

TEST(Shaders, OutputsStayInUnitRange) {
  VoxelGrid g = sphere_grid(16, 5.0, 0.4);
  SurfaceMaps maps = march_visibility(g, 0.5);
  LightSpec light = LightSpec::from_angles(25, 60, 0.3, 1.4);
  for (const ImageBuffer& img :
       {shade_phong(maps, light), shade_toon(maps, light, 4), shade_contour(maps),
        shade_ao(g, maps, 8, 8), silhouette(g)}) {
    for (float v : img.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(March, SupersampleDoublesImageDims) {
  VoxelGrid g = sphere_grid(16, 5.0);
  SurfaceMaps maps = march_visibility(g, 0.5, 2);
  EXPECT_EQ(maps.height, 32u);
  EXPECT_EQ(maps.width, 32u);
  EXPECT_GT(shade_phong(maps, LightSpec::from_angles(0, 60)).mean(), 0.0);
}
