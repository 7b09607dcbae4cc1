// JSON serialization of network and reconstruction configurations.
//
// A config file holds one or more of the blocks below, e.g.
//   {
//     "rendernet": { "scale": 0.25, "input_dims": [32,32,32], ... },
//     "shape_ae":  { "scale": 0.125, "latent": 64, ... },
//     "recon":     { "alpha": 5.0, "beta": 1.0, ... }
//   }
// Every field is optional and defaults to the desk-scale configuration.
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "voxrender/invrender.hpp"
#include "voxrender/priors.hpp"
#include "voxrender/rendernet.hpp"

namespace voxrender {

inline nlohmann::json to_json(const RenderNetSpec& spec) {
  nlohmann::json j;
  j["scale"] = spec.scale;
  j["input_channels"] = spec.input_channels;
  j["input_dims"] = spec.input_dims;
  auto enc = nlohmann::json::array();
  for (const auto& l : spec.enc3d)
    enc.push_back({{"channels", l.channels},
                   {"kernel", l.kernel},
                   {"stride_hw", l.stride_hw},
                   {"stride_d", l.stride_d}});
  j["enc3d"] = enc;
  j["n_res3d"] = spec.n_res3d;
  j["projection_channels"] = spec.projection_channels;
  j["n_res2d_pre"] = spec.n_res2d_pre;
  j["mid_conv"] = {{"channels", spec.mid_conv.channels}, {"kernel", spec.mid_conv.kernel}};
  j["n_res2d_post"] = spec.n_res2d_post;
  auto up = nlohmann::json::array();
  for (const auto& l : spec.upconv)
    up.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  j["upconv"] = up;
  auto br = nlohmann::json::array();
  for (const auto& b : spec.branches) br.push_back({{"name", b.name}, {"channels", b.channels}});
  j["branches"] = br;
  j["dropout_p"] = spec.dropout_p;
  return j;
}

inline RenderNetSpec rendernet_spec_from_json(const nlohmann::json& j) {
  RenderNetSpec spec = desk_rendernet_spec();
  spec.scale = j.value("scale", spec.scale);
  spec.input_channels = j.value("input_channels", spec.input_channels);
  if (j.contains("input_dims"))
    for (int i = 0; i < 3; ++i) spec.input_dims[i] = j["input_dims"][i].get<std::size_t>();
  if (j.contains("enc3d")) {
    spec.enc3d.clear();
    for (const auto& l : j["enc3d"])
      spec.enc3d.push_back({l.at("channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                            l.value("stride_hw", std::size_t(1)),
                            l.value("stride_d", std::size_t(1))});
  }
  spec.n_res3d = j.value("n_res3d", spec.n_res3d);
  spec.projection_channels = j.value("projection_channels", spec.projection_channels);
  spec.n_res2d_pre = j.value("n_res2d_pre", spec.n_res2d_pre);
  if (j.contains("mid_conv")) {
    spec.mid_conv.channels = j["mid_conv"].value("channels", spec.mid_conv.channels);
    spec.mid_conv.kernel = j["mid_conv"].value("kernel", spec.mid_conv.kernel);
  }
  spec.n_res2d_post = j.value("n_res2d_post", spec.n_res2d_post);
  if (j.contains("upconv")) {
    spec.upconv.clear();
    for (const auto& l : j["upconv"])
      spec.upconv.push_back({l.at("channels").get<std::size_t>(),
                             l.at("kernel").get<std::size_t>(),
                             l.value("stride", std::size_t(1))});
  }
  if (j.contains("branches")) {
    spec.branches.clear();
    for (const auto& b : j["branches"])
      spec.branches.push_back({b.at("name").get<std::string>(),
                               b.at("channels").get<std::size_t>()});
  }
  spec.dropout_p = j.value("dropout_p", spec.dropout_p);
  spec.check_shapes();
  return spec;
}

inline nlohmann::json to_json(const ShapeAeSpec& spec) {
  nlohmann::json j;
  j["scale"] = spec.scale;
  j["latent"] = spec.latent;
  j["input_dims"] = spec.input_dims;
  auto enc = nlohmann::json::array();
  for (const auto& l : spec.enc)
    enc.push_back({{"channels", l.channels},
                   {"kernel", l.kernel},
                   {"stride_hw", l.stride_hw},
                   {"stride_d", l.stride_d}});
  j["enc"] = enc;
  auto dec = nlohmann::json::array();
  for (const auto& l : spec.dec)
    dec.push_back({{"channels", l.channels},
                   {"kernel", l.kernel},
                   {"stride_hw", l.stride_hw},
                   {"stride_d", l.stride_d}});
  j["dec"] = dec;
  return j;
}

inline ShapeAeSpec shape_ae_spec_from_json(const nlohmann::json& j) {
  ShapeAeSpec spec = desk_shape_ae_spec();
  spec.scale = j.value("scale", spec.scale);
  spec.latent = j.value("latent", spec.latent);
  if (j.contains("input_dims"))
    for (int i = 0; i < 3; ++i) spec.input_dims[i] = j["input_dims"][i].get<std::size_t>();
  auto parse_convs = [](const nlohmann::json& arr) {
    std::vector<Conv3dDef> out;
    for (const auto& l : arr)
      out.push_back({l.at("channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                     l.value("stride_hw", std::size_t(1)), l.value("stride_d", std::size_t(1))});
    return out;
  };
  if (j.contains("enc")) spec.enc = parse_convs(j["enc"]);
  if (j.contains("dec")) spec.dec = parse_convs(j["dec"]);
  return spec;
}

inline nlohmann::json to_json(const ReconstructionConfig& cfg) {
  nlohmann::json j;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["azimuth"] = {cfg.azimuth.lo, cfg.azimuth.hi};
  j["elevation"] = {cfg.elevation.lo, cfg.elevation.hi};
  j["grid_points"] = cfg.grid_points;
  j["n_restarts"] = cfg.n_restarts;
  j["reinit_every"] = cfg.reinit_every;
  j["max_steps"] = cfg.max_steps;
  j["learning_rate"] = cfg.learning_rate;
  j["lr_scale_latent"] = cfg.lr_scale_latent;
  j["lr_scale_radius"] = cfg.lr_scale_radius;
  j["lr_scale_light"] = cfg.lr_scale_light;
  j["init_radius"] = cfg.init_radius;
  return j;
}

inline ReconstructionConfig recon_config_from_json(const nlohmann::json& j) {
  ReconstructionConfig cfg;
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.beta = j.value("beta", cfg.beta);
  if (j.contains("azimuth")) cfg.azimuth = {j["azimuth"][0], j["azimuth"][1]};
  if (j.contains("elevation")) cfg.elevation = {j["elevation"][0], j["elevation"][1]};
  cfg.grid_points = j.value("grid_points", cfg.grid_points);
  cfg.n_restarts = j.value("n_restarts", cfg.n_restarts);
  cfg.reinit_every = j.value("reinit_every", cfg.reinit_every);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.lr_scale_latent = j.value("lr_scale_latent", cfg.lr_scale_latent);
  cfg.lr_scale_radius = j.value("lr_scale_radius", cfg.lr_scale_radius);
  cfg.lr_scale_light = j.value("lr_scale_light", cfg.lr_scale_light);
  cfg.init_radius = j.value("init_radius", cfg.init_radius);
  return cfg;
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw format_error("load_json_file: cannot open " + path.string());
  nlohmann::json j;
  f >> j;
  return j;
}

inline void save_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw format_error("save_json_file: cannot open " + path.string());
  f << j.dump(2) << "\n";
}

}  // namespace voxrender
