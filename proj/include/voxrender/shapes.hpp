// Procedural shape generation: signed-distance primitives (spheres, boxes,
// tori, cylinders) composed by union/difference and sampled to occupancy
// grids with a soft edge. Replaces external mesh datasets.
//
// Coordinates are unit-cube positions ([0,1]^3 spans the grid, so one scene
// unit equals the grid extent). Recipes keep content within 0.30 units of
// the center so that the closest camera radius (largest scale factor) never
// pushes content outside the grid.
#pragma once

#include <cmath>
#include <vector>

#include "voxrender/rng.hpp"
#include "voxrender/voxel_grid.hpp"

namespace voxrender {

enum class PrimitiveKind { Sphere, Box, Torus, Cylinder };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  std::array<double, 3> center{0.5, 0.5, 0.5};  // (x, y, z) unit coords
  std::array<double, 3> size{0.25, 0.25, 0.25};  // kind-specific, see sdf()
  std::array<double, 3> euler_deg{0, 0, 0};      // applied z, then y, then x
  bool subtract = false;

  double sdf(double x, double y, double z) const {
    // move into the primitive's local frame
    double px = x - center[0], py = y - center[1], pz = z - center[2];
    const auto rot = [](double& a, double& b, double angle_deg) {
      const double c = std::cos(deg2rad(angle_deg)), s = std::sin(deg2rad(angle_deg));
      const double na = c * a + s * b, nb = -s * a + c * b;
      a = na;
      b = nb;
    };
    rot(px, py, euler_deg[2]);  // about z
    rot(pz, px, euler_deg[1]);  // about y
    rot(py, pz, euler_deg[0]);  // about x
    switch (kind) {
      case PrimitiveKind::Sphere:
        return std::sqrt(px * px + py * py + pz * pz) - size[0];
      case PrimitiveKind::Box: {
        const double qx = std::abs(px) - size[0];
        const double qy = std::abs(py) - size[1];
        const double qz = std::abs(pz) - size[2];
        const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
        return std::sqrt(ox * ox + oy * oy + oz * oz) +
               std::min(std::max({qx, qy, qz}), 0.0);
      }
      case PrimitiveKind::Torus: {  // ring around the y axis: size = (R, r, -)
        const double q = std::sqrt(px * px + pz * pz) - size[0];
        return std::sqrt(q * q + py * py) - size[1];
      }
      case PrimitiveKind::Cylinder: {  // y axis: size = (radius, half-height, -)
        const double dr = std::sqrt(px * px + pz * pz) - size[0];
        const double dh = std::abs(py) - size[1];
        const double orx = std::max(dr, 0.0), ory = std::max(dh, 0.0);
        return std::min(std::max(dr, dh), 0.0) + std::sqrt(orx * orx + ory * ory);
      }
    }
    return 1e9;
  }
};

struct ShapeRecipe {
  std::vector<Primitive> primitives;
  std::size_t resolution = 32;
  double noise = 0.0;           // flip probability per voxel
  double edge_softness = 0.75;  // in voxels; 0 gives hard binary occupancy
  std::uint64_t seed = 0;

  bool valid() const {
    return resolution >= 8 && noise >= 0.0 && noise <= 1.0 && !primitives.empty();
  }
};

/// Flips each voxel (v -> 1-v) with probability p; the recipe's noise model.
inline void apply_flip_noise(VoxelGrid& grid, double p, Rng rng) {
  for (auto& v : grid.data())
    if (rng.uniform() < p) v = 1.0f - v;
}

/// Adds clamped uniform noise in [0, amplitude]; occupied voxels stay above
/// a 0.5 threshold and empty ones below it, matching an "added noise"
/// corruption of amplitude 0.5 on near-binary grids.
inline void apply_additive_noise(VoxelGrid& grid, double amplitude, Rng rng) {
  for (auto& v : grid.data())
    v = std::clamp(v + static_cast<float>(rng.uniform(0.0, amplitude)), 0.0f, 1.0f);
}

inline VoxelGrid generate_shape(const ShapeRecipe& recipe) {
  check_arg(recipe.valid(), "generate_shape: invalid recipe");
  const std::size_t n = recipe.resolution;
  VoxelGrid grid(n, n, n, 1);
  const double soft = recipe.edge_softness / static_cast<double>(n);  // to unit coords
  for (std::size_t h = 0; h < n; ++h)
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t d = 0; d < n; ++d) {
        const double x = (static_cast<double>(w) + 0.5) / n;
        const double y = (static_cast<double>(h) + 0.5) / n;
        const double z = (static_cast<double>(d) + 0.5) / n;
        double sd = 1e9;
        for (const auto& prim : recipe.primitives)
          if (!prim.subtract) sd = std::min(sd, prim.sdf(x, y, z));
        for (const auto& prim : recipe.primitives)
          if (prim.subtract) sd = std::max(sd, -prim.sdf(x, y, z));
        float occ;
        if (recipe.edge_softness <= 0.0)
          occ = sd <= 0.0 ? 1.0f : 0.0f;
        else
          occ = static_cast<float>(std::clamp(0.5 - sd / (2.0 * soft), 0.0, 1.0));
        grid.at(h, w, d) = occ;
      }
  if (recipe.noise > 0.0) apply_flip_noise(grid, recipe.noise, Rng(recipe.seed).stream("noise"));
  return grid;
}

/// Family A: boxes and spheres with optional union partner and subtraction.
inline ShapeRecipe random_recipe_boxes_spheres(std::size_t resolution, Rng& rng) {
  ShapeRecipe recipe;
  recipe.resolution = resolution;
  Primitive main;
  main.kind = rng.uniform() < 0.5 ? PrimitiveKind::Sphere : PrimitiveKind::Box;
  main.center = {0.5 + rng.uniform(-0.04, 0.04), 0.5 + rng.uniform(-0.04, 0.04),
                 0.5 + rng.uniform(-0.04, 0.04)};
  if (main.kind == PrimitiveKind::Sphere) {
    main.size = {rng.uniform(0.14, 0.22), 0, 0};
  } else {
    main.size = {rng.uniform(0.10, 0.20), rng.uniform(0.10, 0.20), rng.uniform(0.10, 0.20)};
    main.euler_deg = {rng.uniform(0, 90), rng.uniform(0, 90), rng.uniform(0, 90)};
  }
  recipe.primitives.push_back(main);
  if (rng.uniform() < 0.7) {
    Primitive side;
    side.kind = rng.uniform() < 0.5 ? PrimitiveKind::Sphere : PrimitiveKind::Box;
    const double offset = rng.uniform(0.08, 0.16);
    const double angle = rng.uniform(0, 2 * kPi);
    side.center = {main.center[0] + offset * std::cos(angle),
                   main.center[1] + rng.uniform(-0.10, 0.10),
                   main.center[2] + offset * std::sin(angle)};
    if (side.kind == PrimitiveKind::Sphere)
      side.size = {rng.uniform(0.06, 0.12), 0, 0};
    else
      side.size = {rng.uniform(0.05, 0.11), rng.uniform(0.05, 0.11), rng.uniform(0.05, 0.11)};
    recipe.primitives.push_back(side);
  }
  if (rng.uniform() < 0.4) {
    Primitive bite;
    bite.kind = PrimitiveKind::Sphere;
    bite.subtract = true;
    const double angle = rng.uniform(0, 2 * kPi);
    bite.center = {main.center[0] + 0.15 * std::cos(angle), main.center[1] + rng.uniform(-0.1, 0.1),
                   main.center[2] + 0.15 * std::sin(angle)};
    bite.size = {rng.uniform(0.06, 0.11), 0, 0};
    recipe.primitives.push_back(bite);
  }
  return recipe;
}

/// Family B: tori (optionally paired with a cylinder core).
inline ShapeRecipe random_recipe_tori(std::size_t resolution, Rng& rng) {
  ShapeRecipe recipe;
  recipe.resolution = resolution;
  Primitive torus;
  torus.kind = PrimitiveKind::Torus;
  torus.center = {0.5, 0.5 + rng.uniform(-0.03, 0.03), 0.5};
  torus.size = {rng.uniform(0.14, 0.20), rng.uniform(0.045, 0.08), 0};
  torus.euler_deg = {rng.uniform(0, 180), rng.uniform(0, 180), 0};
  recipe.primitives.push_back(torus);
  if (rng.uniform() < 0.5) {
    Primitive core;
    core.kind = PrimitiveKind::Cylinder;
    core.center = torus.center;
    core.size = {rng.uniform(0.03, 0.06), rng.uniform(0.10, 0.18), 0};
    core.euler_deg = torus.euler_deg;
    recipe.primitives.push_back(core);
  }
  return recipe;
}

enum class ShapeFamily { BoxesSpheres, Tori, Mixed };

/// Deterministic batch of procedural shapes.
inline std::vector<ShapeRecipe> gen_shape_recipes(ShapeFamily family, std::size_t n,
                                                  std::size_t resolution, std::uint64_t seed) {
  check_arg(n >= 1, "gen_shape_recipes: n must be >= 1");
  check_arg(resolution >= 8, "gen_shape_recipes: resolution must be >= 8");
  std::vector<ShapeRecipe> recipes;
  recipes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng(seed).stream("shape", i);
    ShapeFamily f = family;
    if (family == ShapeFamily::Mixed)
      f = rng.uniform() < 0.5 ? ShapeFamily::BoxesSpheres : ShapeFamily::Tori;
    ShapeRecipe recipe = f == ShapeFamily::BoxesSpheres
                             ? random_recipe_boxes_spheres(resolution, rng)
                             : random_recipe_tori(resolution, rng);
    recipe.seed = seed ^ (i * 0x9e3779b97f4a7c15ULL);
    recipes.push_back(std::move(recipe));
  }
  return recipes;
}

inline std::vector<VoxelGrid> gen_shapes(ShapeFamily family, std::size_t n,
                                         std::size_t resolution, std::uint64_t seed) {
  std::vector<VoxelGrid> grids;
  for (const auto& recipe : gen_shape_recipes(family, n, resolution, seed))
    grids.push_back(generate_shape(recipe));
  return grids;
}

/// 2x box-filter downsampling (all dims must be even).
inline VoxelGrid downsample_box(const VoxelGrid& grid) {
  check_arg(grid.height() % 2 == 0 && grid.width() % 2 == 0 && grid.depth() % 2 == 0,
            "downsample_box: dims must be even");
  VoxelGrid out(grid.height() / 2, grid.width() / 2, grid.depth() / 2, grid.channels());
  for (std::size_t h = 0; h < out.height(); ++h)
    for (std::size_t w = 0; w < out.width(); ++w)
      for (std::size_t d = 0; d < out.depth(); ++d)
        for (std::size_t c = 0; c < out.channels(); ++c) {
          double acc = 0.0;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw)
              for (int dd = 0; dd < 2; ++dd)
                acc += grid.at(2 * h + dh, 2 * w + dw, 2 * d + dd, c);
          out.at(h, w, d, c) = static_cast<float>(acc / 8.0);
        }
  return out;
}

}  // namespace voxrender
