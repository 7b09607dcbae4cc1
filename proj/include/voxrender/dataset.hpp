// Dataset generation: view sampling in the reference ranges (elevation
// [10,170], azimuth [0,359], radius [3,6.3]) and per-style reference renders
// written as lossless PFM targets with PNG previews, indexed by a JSON
// manifest.
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "voxrender/image.hpp"
#include "voxrender/parallel.hpp"
#include "voxrender/refshade.hpp"
#include "voxrender/rendernet.hpp"
#include "voxrender/shapes.hpp"
#include "voxrender/voxel_grid.hpp"

namespace voxrender {

inline const std::vector<std::string>& known_styles() {
  static const std::vector<std::string> styles{"phong",      "contour", "toon", "ao",
                                               "silhouette", "normal",  "albedo"};
  return styles;
}

struct DatasetSample {
  std::size_t shape_index = 0;
  Pose pose;
  LightAngles light;
  std::map<std::string, std::string> targets;  // style -> pfm path (manifest-relative)
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t resolution = 32;
  std::size_t supersample = 2;  // image dims = supersample * grid dims
  std::vector<std::string> styles;
  PoseRange azimuth{0.0, 359.0};
  PoseRange elevation{10.0, 170.0};
  double radius_min = kRadiusMin;
  double radius_max = kRadiusMax;
  std::vector<std::string> shape_files;
  std::vector<DatasetSample> samples;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["resolution"] = resolution;
    j["supersample"] = supersample;
    j["styles"] = styles;
    j["azimuth"] = {azimuth.lo, azimuth.hi};
    j["elevation"] = {elevation.lo, elevation.hi};
    j["radius"] = {radius_min, radius_max};
    j["shapes"] = shape_files;
    auto& arr = j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
      nlohmann::json sj;
      sj["shape"] = s.shape_index;
      sj["pose"] = {{"azimuth_deg", s.pose.azimuth_deg},
                    {"elevation_deg", s.pose.elevation_deg},
                    {"radius", s.pose.radius}};
      sj["light"] = {{"azimuth_deg", s.light.azimuth_deg},
                     {"elevation_deg", s.light.elevation_deg},
                     {"ambient", s.light.ambient},
                     {"intensity", s.light.intensity}};
      sj["targets"] = s.targets;
      arr.push_back(std::move(sj));
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.resolution = j.at("resolution").get<std::size_t>();
    m.supersample = j.at("supersample").get<std::size_t>();
    m.styles = j.at("styles").get<std::vector<std::string>>();
    m.azimuth = {j.at("azimuth")[0].get<double>(), j.at("azimuth")[1].get<double>()};
    m.elevation = {j.at("elevation")[0].get<double>(), j.at("elevation")[1].get<double>()};
    m.radius_min = j.at("radius")[0].get<double>();
    m.radius_max = j.at("radius")[1].get<double>();
    m.shape_files = j.at("shapes").get<std::vector<std::string>>();
    for (const auto& sj : j.at("samples")) {
      DatasetSample s;
      s.shape_index = sj.at("shape").get<std::size_t>();
      s.pose = Pose{sj.at("pose").at("azimuth_deg").get<double>(),
                    sj.at("pose").at("elevation_deg").get<double>(),
                    sj.at("pose").at("radius").get<double>()};
      s.light = LightAngles{sj.at("light").at("azimuth_deg").get<double>(),
                            sj.at("light").at("elevation_deg").get<double>(),
                            sj.at("light").at("ambient").get<double>(),
                            sj.at("light").at("intensity").get<double>()};
      s.targets = sj.at("targets").get<std::map<std::string, std::string>>();
      m.samples.push_back(std::move(s));
    }
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw format_error("DatasetManifest::save: cannot open " + path.string());
    f << to_json().dump(2) << "\n";
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw format_error("DatasetManifest::load: cannot open " + path.string());
    nlohmann::json j;
    f >> j;
    return from_json(j);
  }
};

/// Renders one style from camera-space maps and grid.
inline ImageBuffer render_style(const std::string& style, const VoxelGrid& camera_grid,
                                const SurfaceMaps& maps, const LightSpec& light,
                                std::size_t supersample, std::uint64_t ao_seed = 0) {
  if (style == "phong") return shade_phong(maps, light);
  if (style == "contour") return shade_contour(maps);
  if (style == "toon") return shade_toon(maps, light, 4);
  if (style == "ao") return shade_ao(camera_grid, maps, 16, 12, ao_seed);
  if (style == "silhouette") return silhouette(camera_grid, supersample);
  if (style == "normal") return maps.normal;
  if (style == "albedo") return compose_albedo(maps.albedo, maps.mask);
  throw std::invalid_argument("render_style: unknown style " + style);
}

struct GenDatasetOptions {
  std::size_t supersample = 2;
  PoseRange azimuth{0.0, 359.0};
  PoseRange elevation{10.0, 170.0};
  double radius_min = kRadiusMin;
  double radius_max = kRadiusMax;
  double light_elevation_min = 20.0;
  double light_elevation_max = 75.0;
  double visibility_threshold = 0.5;
  bool write_png = true;
};

/// Renders n_views per shape into out_dir and writes manifest.json.
/// Deterministic per seed: every pose/light/AO stream derives from
/// (seed, shape, view) independent of evaluation order.
inline DatasetManifest gen_dataset(const std::vector<VoxelGrid>& shapes,
                                   const std::filesystem::path& out_dir,
                                   const std::vector<std::string>& styles, std::size_t n_views,
                                   std::uint64_t seed, const GenDatasetOptions& opt = {}) {
  check_arg(!shapes.empty(), "gen_dataset: no shapes");
  check_arg(n_views >= 1, "gen_dataset: n_views must be >= 1");
  for (const auto& s : styles)
    check_arg(std::find(known_styles().begin(), known_styles().end(), s) != known_styles().end(),
              "gen_dataset: unknown style " + s);

  std::filesystem::create_directories(out_dir / "shapes");
  std::filesystem::create_directories(out_dir / "targets");

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.resolution = shapes[0].height();
  manifest.supersample = opt.supersample;
  manifest.styles = styles;
  manifest.azimuth = opt.azimuth;
  manifest.elevation = opt.elevation;
  manifest.radius_min = opt.radius_min;
  manifest.radius_max = opt.radius_max;

  char name[64];
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    std::snprintf(name, sizeof(name), "shapes/shape_%04zu.vxg", i);
    save_grid(shapes[i], out_dir / name);
    manifest.shape_files.emplace_back(name);
  }

  manifest.samples.resize(shapes.size() * n_views);
  parallel_for(shapes.size() * n_views, [&](std::size_t idx) {
    const std::size_t si = idx / n_views;
    const std::size_t vi = idx % n_views;
    Rng rng = Rng(seed).stream("view", idx);
    DatasetSample sample;
    sample.shape_index = si;
    sample.pose = Pose{rng.uniform(opt.azimuth.lo, opt.azimuth.hi),
                       rng.uniform(opt.elevation.lo, opt.elevation.hi),
                       rng.uniform(opt.radius_min, opt.radius_max)};
    sample.light = LightAngles{rng.uniform(0.0, 360.0),
                               rng.uniform(opt.light_elevation_min, opt.light_elevation_max), 0.2,
                               1.0};
    const VoxelGrid cam = rigid_transform(shapes[si], sample.pose);
    const SurfaceMaps maps = march_visibility(cam, opt.visibility_threshold, opt.supersample);
    const LightSpec light = sample.light.to_spec();
    for (const auto& style : styles) {
      ImageBuffer img = render_style(style, cam, maps, light, opt.supersample,
                                     Rng(seed).stream("ao", idx).next());
      char tname[96];
      std::snprintf(tname, sizeof(tname), "targets/s%04zu_v%03zu_%s.pfm", si, vi, style.c_str());
      save_pfm(img, out_dir / tname);
      if (opt.write_png) {
        std::string png(tname);
        png.replace(png.size() - 4, 4, ".png");
        save_png(img, out_dir / png);
      }
      sample.targets[style] = tname;
    }
    manifest.samples[idx] = std::move(sample);
  });

  manifest.save(out_dir / "manifest.json");
  return manifest;
}

/// Loads the (camera grid, target, light) training tuples for one style.
inline std::vector<TrainSample> load_train_samples(const DatasetManifest& manifest,
                                                   const std::filesystem::path& dir,
                                                   const std::string& style) {
  std::vector<VoxelGrid> shapes;
  shapes.reserve(manifest.shape_files.size());
  for (const auto& f : manifest.shape_files) shapes.push_back(load_grid(dir / f));
  std::vector<TrainSample> out(manifest.samples.size());
  parallel_for(manifest.samples.size(), [&](std::size_t i) {
    const auto& s = manifest.samples[i];
    check_arg(s.targets.count(style), "load_train_samples: style missing from manifest");
    TrainSample t;
    t.camera_grid = rigid_transform(shapes[s.shape_index], s.pose);
    t.target = load_pfm(dir / s.targets.at(style));
    t.light = s.light;
    out[i] = std::move(t);
  });
  return out;
}

}  // namespace voxrender
