// Classical reference renderers: visibility ray marching over occupancy
// grids, normal estimation, and the Phong / toon / contour / ambient
// occlusion / silhouette shaders that produce training targets.
//
// Geometry convention: the grid is assumed to be in camera space (already
// posed by rigid_transform). The camera sits on the low-d side; rays travel
// toward increasing d, so a pixel's depth is the d-coordinate of its first
// occupancy crossing and smaller depth means nearer. Pixel (i,j) of an image
// with supersample factor s looks down the column through grid coordinates
// (h, w) = ((i+0.5)/s - 0.5, (j+0.5)/s - 0.5).
//
// Normals live in the (x, y, z) = (w, h, d) frame and are encoded to RGB as
// (n+1)/2. Shaded and AO images use a black background, contour images a
// white one.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "voxrender/image.hpp"
#include "voxrender/parallel.hpp"
#include "voxrender/rng.hpp"
#include "voxrender/voxel_grid.hpp"

namespace voxrender {

struct LightSpec {
  std::array<double, 3> direction{0.0, 1.0, 0.0};  // unit, points toward the light
  double ambient = 0.2;
  double intensity = 1.0;
  std::array<double, 3> color{1.0, 1.0, 1.0};

  void check_unit() const {
    const double n2 = direction[0] * direction[0] + direction[1] * direction[1] +
                      direction[2] * direction[2];
    check_arg(std::abs(std::sqrt(n2) - 1.0) < 1e-6, "LightSpec: direction must be unit length");
  }

  static LightSpec from_angles(double azimuth_deg, double elevation_deg, double ambient = 0.2,
                               double intensity = 1.0) {
    const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
    LightSpec l;
    l.direction = {std::cos(el) * std::sin(az), std::sin(el), -std::cos(el) * std::cos(az)};
    l.ambient = ambient;
    l.intensity = intensity;
    return l;
  }
};

struct SurfaceMaps {
  std::size_t height = 0, width = 0;
  std::vector<float> depth;  // +inf on miss
  ImageBuffer normal;        // RGB-encoded unit normals
  ImageBuffer mask;          // 1 = hit
  ImageBuffer albedo;        // sampled from texture channels, else white

  bool hit(std::size_t i, std::size_t j) const { return mask.at(i, j) > 0.5f; }
};

namespace shade_detail {

constexpr float kSentinelNormalZ = 1.0f;  // zero-gradient voxels encode (0,0,1)

inline VoxelGrid gaussian_blur(const VoxelGrid& g, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += k[i + radius];
  }
  for (auto& v : k) v /= norm;

  const long H = static_cast<long>(g.height()), W = static_cast<long>(g.width()),
             D = static_cast<long>(g.depth());
  VoxelGrid a = g, b(g.height(), g.width(), g.depth(), 1);
  // three separable passes with replicate padding, so a constant grid stays
  // constant (zero gradient everywhere)
  auto pass = [&](const VoxelGrid& src, VoxelGrid& dst, int axis) {
    for (long h = 0; h < H; ++h)
      for (long w = 0; w < W; ++w)
        for (long d = 0; d < D; ++d) {
          double acc = 0.0;
          for (int o = -radius; o <= radius; ++o) {
            long hh = std::clamp(h + (axis == 0 ? o : 0), 0L, H - 1);
            long ww = std::clamp(w + (axis == 1 ? o : 0), 0L, W - 1);
            long dd = std::clamp(d + (axis == 2 ? o : 0), 0L, D - 1);
            acc += k[o + radius] * src.at(hh, ww, dd);
          }
          dst.at(h, w, d) = static_cast<float>(acc);
        }
  };
  pass(a, b, 0);
  pass(b, a, 1);
  pass(a, b, 2);
  return b;
}

}  // namespace shade_detail

/// Outward unit normals n = -grad(rho)/|grad(rho)| of the Gaussian-smoothed
/// occupancy, by central differences. Returns a 3-channel grid in (x,y,z)
/// order; zero-gradient voxels get the sentinel normal (0,0,1).
inline VoxelGrid estimate_normals(const VoxelGrid& grid, double sigma = 1.0) {
  check_arg(grid.channels() == 1, "estimate_normals: expected a single-channel occupancy grid");
  VoxelGrid rho = shade_detail::gaussian_blur(grid, sigma);
  const long H = static_cast<long>(grid.height()), W = static_cast<long>(grid.width()),
             D = static_cast<long>(grid.depth());
  VoxelGrid normals(grid.height(), grid.width(), grid.depth(), 3);
  auto sample = [&](long h, long w, long d) -> double {
    return rho.at(std::clamp(h, 0L, H - 1), std::clamp(w, 0L, W - 1), std::clamp(d, 0L, D - 1));
  };
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long d = 0; d < D; ++d) {
        const double gy = 0.5 * (sample(h + 1, w, d) - sample(h - 1, w, d));
        const double gx = 0.5 * (sample(h, w + 1, d) - sample(h, w - 1, d));
        const double gz = 0.5 * (sample(h, w, d + 1) - sample(h, w, d - 1));
        const double len = std::sqrt(gx * gx + gy * gy + gz * gz);
        if (len < 1e-12) {
          normals.at(h, w, d, 0) = 0.0f;
          normals.at(h, w, d, 1) = 0.0f;
          normals.at(h, w, d, 2) = shade_detail::kSentinelNormalZ;
        } else {
          normals.at(h, w, d, 0) = static_cast<float>(-gx / len);
          normals.at(h, w, d, 1) = static_cast<float>(-gy / len);
          normals.at(h, w, d, 2) = static_cast<float>(-gz / len);
        }
      }
  return normals;
}

/// Front-to-back visibility march. `supersample` rays per voxel along each
/// image axis give an image of (s*H) x (s*W). Multi-channel grids march on
/// channel 0 and sample channels 1..3 as albedo at the hit point.
inline SurfaceMaps march_visibility(const VoxelGrid& grid, double threshold = 0.5,
                                    std::size_t supersample = 1) {
  check_arg(threshold > 0.0 && threshold < 1.0, "march_visibility: threshold must be in (0,1)");
  VoxelGrid occ(grid.height(), grid.width(), grid.depth(), 1);
  if (grid.channels() == 1) {
    occ.data() = grid.data();
  } else {
    for (std::size_t h = 0; h < grid.height(); ++h)
      for (std::size_t w = 0; w < grid.width(); ++w)
        for (std::size_t d = 0; d < grid.depth(); ++d)
          occ.at(h, w, d) = grid.at(h, w, d, 0);
  }
  VoxelGrid normals = estimate_normals(occ);

  const std::size_t H = grid.height() * supersample;
  const std::size_t W = grid.width() * supersample;
  SurfaceMaps maps;
  maps.height = H;
  maps.width = W;
  maps.depth.assign(H * W, std::numeric_limits<float>::infinity());
  maps.normal = ImageBuffer(H, W, 3);
  maps.mask = ImageBuffer(H, W, 1);
  maps.albedo = ImageBuffer(H, W, 3);
  maps.albedo.fill(1.0f);
  // background normal encodes the sentinel
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      maps.normal.at(i, j, 0) = 0.5f;
      maps.normal.at(i, j, 1) = 0.5f;
      maps.normal.at(i, j, 2) = 1.0f;
    }

  const double D = static_cast<double>(grid.depth());
  const double step = 0.5;
  parallel_for(H, [&](std::size_t i) {
    const double gh = (static_cast<double>(i) + 0.5) / static_cast<double>(supersample) - 0.5;
    for (std::size_t j = 0; j < W; ++j) {
      const double gw = (static_cast<double>(j) + 0.5) / static_cast<double>(supersample) - 0.5;
      double hit = -1.0;
      for (double t = 0.0; t <= D - 1.0 + 1e-9; t += step) {
        if (trilinear_sample(occ, gh, gw, t) >= threshold) {
          // one bisection step against the previous (below-threshold) sample;
          // keep the confirmed-occupied endpoint
          if (t == 0.0) {
            hit = 0.0;
          } else {
            const double mid = t - 0.5 * step;
            hit = trilinear_sample(occ, gh, gw, mid) >= threshold ? mid : t;
          }
          break;
        }
      }
      if (hit < 0.0) continue;
      maps.depth[i * W + j] = static_cast<float>(hit);
      maps.mask.at(i, j) = 1.0f;
      double nx = trilinear_sample(normals, gh, gw, hit, 0);
      double ny = trilinear_sample(normals, gh, gw, hit, 1);
      double nz = trilinear_sample(normals, gh, gw, hit, 2);
      const double len = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (len < 1e-9) {
        nx = 0.0;
        ny = 0.0;
        nz = 1.0;
      } else {
        nx /= len;
        ny /= len;
        nz /= len;
      }
      maps.normal.at(i, j, 0) = static_cast<float>((nx + 1.0) / 2.0);
      maps.normal.at(i, j, 1) = static_cast<float>((ny + 1.0) / 2.0);
      maps.normal.at(i, j, 2) = static_cast<float>((nz + 1.0) / 2.0);
      if (grid.channels() >= 4)
        for (std::size_t c = 0; c < 3; ++c)
          maps.albedo.at(i, j, c) =
              static_cast<float>(std::clamp(trilinear_sample(grid, gh, gw, hit, 1 + c), 0.0, 1.0));
    }
  });
  return maps;
}

/// Diffuse shading S = clamp(intensity * max(0, l.n + a)); misses stay 0.
inline ImageBuffer shade_phong(const SurfaceMaps& maps, const LightSpec& light) {
  light.check_unit();
  ImageBuffer out(maps.height, maps.width, 1);
  for (std::size_t i = 0; i < maps.height; ++i)
    for (std::size_t j = 0; j < maps.width; ++j) {
      if (!maps.hit(i, j)) continue;
      const double nx = maps.normal.at(i, j, 0) * 2.0 - 1.0;
      const double ny = maps.normal.at(i, j, 1) * 2.0 - 1.0;
      const double nz = maps.normal.at(i, j, 2) * 2.0 - 1.0;
      const double lam = light.direction[0] * nx + light.direction[1] * ny +
                         light.direction[2] * nz + light.ambient;
      out.at(i, j) = static_cast<float>(std::clamp(light.intensity * std::max(0.0, lam), 0.0, 1.0));
    }
  return out;
}

/// I = A (.) S, with grayscale shading broadcast over RGB albedo.
inline ImageBuffer compose_albedo(const ImageBuffer& albedo, const ImageBuffer& shading) {
  check_arg(albedo.height() == shading.height() && albedo.width() == shading.width(),
            "compose_albedo: spatial dims must match");
  check_arg(shading.channels() == 1 || shading.channels() == albedo.channels(),
            "compose_albedo: shading must be grayscale or match albedo channels");
  ImageBuffer out(albedo.height(), albedo.width(), albedo.channels());
  for (std::size_t i = 0; i < albedo.height(); ++i)
    for (std::size_t j = 0; j < albedo.width(); ++j)
      for (std::size_t c = 0; c < albedo.channels(); ++c) {
        const float s = shading.channels() == 1 ? shading.at(i, j) : shading.at(i, j, c);
        out.at(i, j, c) = std::clamp(albedo.at(i, j, c) * s, 0.0f, 1.0f);
      }
  return out;
}

/// Edge image: 0 on contours, 1 elsewhere (white background). A pixel is a
/// contour when it is on the mask boundary, or when its 3x3 neighborhood has
/// a depth discontinuity > depth_jump voxels or a normal swing > normal_angle.
inline ImageBuffer shade_contour(const SurfaceMaps& maps, double depth_jump = 2.0,
                                 double normal_angle_deg = 30.0) {
  ImageBuffer out(maps.height, maps.width, 1);
  out.fill(1.0f);
  const double cos_thresh = std::cos(deg2rad(normal_angle_deg));
  const long H = static_cast<long>(maps.height), W = static_cast<long>(maps.width);
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j) {
      if (!maps.hit(i, j)) continue;
      bool edge = false;
      const double d0 = maps.depth[i * W + j];
      const double nx0 = maps.normal.at(i, j, 0) * 2.0 - 1.0;
      const double ny0 = maps.normal.at(i, j, 1) * 2.0 - 1.0;
      const double nz0 = maps.normal.at(i, j, 2) * 2.0 - 1.0;
      for (long di = -1; di <= 1 && !edge; ++di)
        for (long dj = -1; dj <= 1 && !edge; ++dj) {
          if (di == 0 && dj == 0) continue;
          const long ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= H || jj >= W) continue;
          if (!maps.hit(ii, jj)) {
            edge = true;  // mask boundary
            continue;
          }
          if (std::abs(maps.depth[ii * W + jj] - d0) > depth_jump) {
            edge = true;
            continue;
          }
          const double nx = maps.normal.at(ii, jj, 0) * 2.0 - 1.0;
          const double ny = maps.normal.at(ii, jj, 1) * 2.0 - 1.0;
          const double nz = maps.normal.at(ii, jj, 2) * 2.0 - 1.0;
          if (nx0 * nx + ny0 * ny + nz0 * nz < cos_thresh) edge = true;
        }
      if (edge) out.at(i, j) = 0.0f;
    }
  return out;
}

/// Cartoon shading: Phong quantized to `levels` uniform bands, composited
/// over contour edges drawn black. Background is black.
inline ImageBuffer shade_toon(const SurfaceMaps& maps, const LightSpec& light, std::size_t levels,
                              double depth_jump = 2.0, double normal_angle_deg = 30.0) {
  check_arg(levels >= 2, "shade_toon: levels must be >= 2");
  ImageBuffer phong = shade_phong(maps, light);
  ImageBuffer edges = shade_contour(maps, depth_jump, normal_angle_deg);
  ImageBuffer out(maps.height, maps.width, 1);
  const double L = static_cast<double>(levels);
  for (std::size_t i = 0; i < maps.height; ++i)
    for (std::size_t j = 0; j < maps.width; ++j) {
      if (!maps.hit(i, j)) continue;
      if (edges.at(i, j) < 0.5f) continue;  // edge stays black
      const double band = std::min(std::floor(phong.at(i, j) * L), L - 1.0);
      out.at(i, j) = static_cast<float>((band + 1.0) / L);
    }
  return out;
}

/// Ambient occlusion by cosine-weighted hemisphere marching: per hit pixel,
/// the unoccluded fraction of n_rays rays around the surface normal. Ray
/// directions come from a Hammersley sequence with a per-pixel seeded
/// Cranley-Patterson rotation, so output is deterministic given the seed.
inline ImageBuffer shade_ao(const VoxelGrid& grid, const SurfaceMaps& maps, std::size_t n_rays,
                            std::size_t max_steps, std::uint64_t seed = 0,
                            double threshold = 0.5) {
  check_arg(n_rays >= 1, "shade_ao: n_rays must be >= 1");
  VoxelGrid occ(grid.height(), grid.width(), grid.depth(), 1);
  if (grid.channels() == 1) {
    occ.data() = grid.data();
  } else {
    for (std::size_t h = 0; h < grid.height(); ++h)
      for (std::size_t w = 0; w < grid.width(); ++w)
        for (std::size_t d = 0; d < grid.depth(); ++d)
          occ.at(h, w, d) = grid.at(h, w, d, 0);
  }
  const std::size_t ss = maps.height / grid.height();
  ImageBuffer out(maps.height, maps.width, 1);
  parallel_for(maps.height, [&](std::size_t i) {
    for (std::size_t j = 0; j < maps.width; ++j) {
      if (!maps.hit(i, j)) continue;
      const double gh = (static_cast<double>(i) + 0.5) / static_cast<double>(ss) - 0.5;
      const double gw = (static_cast<double>(j) + 0.5) / static_cast<double>(ss) - 0.5;
      const double gd = maps.depth[i * maps.width + j];
      double nx = maps.normal.at(i, j, 0) * 2.0 - 1.0;
      double ny = maps.normal.at(i, j, 1) * 2.0 - 1.0;
      double nz = maps.normal.at(i, j, 2) * 2.0 - 1.0;
      // tangent frame around n
      double tx, ty, tz;
      if (std::abs(nz) < 0.9) {
        tx = -ny;
        ty = nx;
        tz = 0.0;
      } else {
        tx = 0.0;
        ty = -nz;
        tz = ny;
      }
      double tl = std::sqrt(tx * tx + ty * ty + tz * tz);
      tx /= tl;
      ty /= tl;
      tz /= tl;
      const double bx = ny * tz - nz * ty;
      const double by = nz * tx - nx * tz;
      const double bz = nx * ty - ny * tx;

      Rng px_rng = Rng(seed).stream("ao", (i << 20) ^ j);
      const double rot = px_rng.uniform();
      std::size_t occluded = 0;
      for (std::size_t r = 0; r < n_rays; ++r) {
        const double u1 = (static_cast<double>(r) + 0.5) / static_cast<double>(n_rays);
        // radical inverse base 2
        std::uint32_t bits = static_cast<std::uint32_t>(r);
        bits = (bits << 16) | (bits >> 16);
        bits = ((bits & 0x55555555u) << 1) | ((bits & 0xAAAAAAAAu) >> 1);
        bits = ((bits & 0x33333333u) << 2) | ((bits & 0xCCCCCCCCu) >> 2);
        bits = ((bits & 0x0F0F0F0Fu) << 4) | ((bits & 0xF0F0F0F0u) >> 4);
        bits = ((bits & 0x00FF00FFu) << 8) | ((bits & 0xFF00FF00u) >> 8);
        double u2 = static_cast<double>(bits) * 0x1.0p-32 + rot;
        u2 -= std::floor(u2);
        const double rad = std::sqrt(u1);
        const double phi = 2.0 * kPi * u2;
        const double lx = rad * std::cos(phi), ly = rad * std::sin(phi),
                     lz = std::sqrt(std::max(0.0, 1.0 - u1));
        const double dx = lx * tx + ly * bx + lz * nx;
        const double dy = lx * ty + ly * by + lz * ny;
        const double dz = lx * tz + ly * bz + lz * nz;
        // start clear of the surface shell
        double ph = gh + 2.0 * ny + dy;
        double pw = gw + 2.0 * nx + dx;
        double pd = gd + 2.0 * nz + dz;
        for (std::size_t s = 0; s < max_steps; ++s) {
          if (trilinear_sample(occ, ph, pw, pd) >= threshold) {
            ++occluded;
            break;
          }
          ph += dy;
          pw += dx;
          pd += dz;
        }
      }
      out.at(i, j) =
          static_cast<float>(1.0 - static_cast<double>(occluded) / static_cast<double>(n_rays));
    }
  });
  return out;
}

/// Per-pixel max of occupancy along depth; the degenerate projection.
inline ImageBuffer silhouette(const VoxelGrid& grid, std::size_t supersample = 1) {
  check_arg(grid.channels() == 1, "silhouette: expected a single-channel grid");
  const std::size_t H = grid.height() * supersample, W = grid.width() * supersample;
  ImageBuffer out(H, W, 1);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      float best = 0.0f;
      if (supersample == 1) {
        for (std::size_t d = 0; d < grid.depth(); ++d) best = std::max(best, grid.at(i, j, d));
      } else {
        const double gh = (static_cast<double>(i) + 0.5) / static_cast<double>(supersample) - 0.5;
        const double gw = (static_cast<double>(j) + 0.5) / static_cast<double>(supersample) - 0.5;
        for (std::size_t d = 0; d < grid.depth(); ++d)
          best = std::max(best, static_cast<float>(trilinear_sample(grid, gh, gw, d)));
      }
      out.at(i, j) = best;
    }
  return out;
}

}  // namespace voxrender
