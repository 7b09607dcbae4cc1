// voxrender command-line tool: procedural dataset generation, reference
// rendering, training, inference, reconstruction, evaluation and gradient
// checking.
//
// Exit codes: 0 success, 2 unreadable config/checkpoint/input, 1 any other
// failure (including gradient checks above tolerance).
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "voxrender/config.hpp"
#include "voxrender/dataset.hpp"
#include "voxrender/gradcheck.hpp"
#include "voxrender/invrender.hpp"
#include "voxrender/priors.hpp"
#include "voxrender/rendernet.hpp"
#include "voxrender/shapes.hpp"

using namespace voxrender;
namespace fs = std::filesystem;

namespace {

struct CliError {
  int code;
  std::string message;
};

ShapeFamily parse_family(const std::string& name) {
  if (name == "a" || name == "boxes-spheres") return ShapeFamily::BoxesSpheres;
  if (name == "b" || name == "tori") return ShapeFamily::Tori;
  if (name == "mixed") return ShapeFamily::Mixed;
  throw CliError{1, "unknown shape family: " + name};
}

nlohmann::json read_config(const std::string& path) {
  try {
    return load_json_file(path);
  } catch (const std::exception& e) {
    throw CliError{2, std::string("cannot read config: ") + e.what()};
  }
}

ParamStore<float> read_checkpoint(const std::string& path) {
  try {
    return ParamStore<float>::load(path);
  } catch (const std::exception& e) {
    throw CliError{2, std::string("cannot read checkpoint: ") + e.what()};
  }
}

VoxelGrid read_grid(const std::string& path) {
  try {
    return load_grid(path);
  } catch (const std::exception& e) {
    throw CliError{2, std::string("cannot read grid: ") + e.what()};
  }
}

RenderNetSpec spec_from_config(const nlohmann::json& cfg) {
  return cfg.contains("rendernet") ? rendernet_spec_from_json(cfg["rendernet"])
                                   : desk_rendernet_spec();
}

bool spec_uses_shade_head(const RenderNetSpec& spec) {
  bool has_normal = false, has_albedo = false;
  for (const auto& b : spec.branches) {
    has_normal = has_normal || b.name == "normal";
    has_albedo = has_albedo || b.name == "albedo";
  }
  return has_normal && has_albedo;
}

// ---------------------------------------------------------------------------
// gradcheck: the registered differentiable-op suite
// ---------------------------------------------------------------------------

struct GradCheckRow {
  std::string name;
  double max_rel_error;
  double tol_multiplier;  // 1 for elementwise ops, 10 for composite graphs
};

template <class T>
std::vector<GradCheckRow> run_gradcheck_suite(std::size_t probes, std::uint64_t seed) {
  std::vector<GradCheckRow> results;
  Rng rng(seed);
  auto rand_tensor = [&rng](Shape shape, double lo, double hi, double avoid_kink = 0.0) {
    std::vector<T> data(product(shape));
    for (auto& v : data) {
      double u = rng.uniform(lo, hi);
      if (avoid_kink > 0.0 && std::abs(u) < avoid_kink) u = u < 0 ? -avoid_kink : avoid_kink;
      v = static_cast<T>(u);
    }
    return Tensor<T>::from_data(std::move(shape), std::move(data), true);
  };
  auto record = [&](const std::string& name, const GradCheckReport& r, double mult = 1.0) {
    results.push_back({name, r.max_rel_error, mult});
  };

  {
    auto x = rand_tensor({6, 6, 2}, -1, 1, 1e-2);
    auto slope = Tensor<T>::from_data({2}, {T(0.25), T(0.4)}, true);
    record("prelu", grad_check<T>([&] { return mean(prelu(x, slope)); }, {x, slope},
                                  static_cast<T>(1e-5), probes, rng.stream("p1")));
    record("sigmoid", grad_check<T>([&] { return mean(mul(sigmoid(x), sigmoid(x))); }, {x},
                                    static_cast<T>(1e-5), probes, rng.stream("p2")));
    record("elu", grad_check<T>([&] { return mean(mul(elu(x), elu(x))); }, {x},
                                static_cast<T>(1e-5), probes, rng.stream("p3")));
    record("relu_clamp", grad_check<T>([&] { return mean(clamp_max(relu(x), T(1))); }, {x},
                                       static_cast<T>(1e-5), probes, rng.stream("p4")));
  }
  {
    auto x = rand_tensor({5, 4, 3, 2}, -1, 1);
    auto w = rand_tensor({3, 3, 2, 2, 3}, -1, 1);
    auto b = rand_tensor({3}, -1, 1);
    record("conv3d", grad_check<T>(
                         [&] {
                           auto y = conv3d(x, w, b, 2, 1);
                           return mean(mul(y, y));
                         },
                         {x, w, b}, static_cast<T>(1e-5), probes, rng.stream("c3")));
    auto wt = rand_tensor({2, 2, 2, 3, 2}, -1, 1);
    auto bt = rand_tensor({3}, -1, 1);
    record("conv3d_transpose", grad_check<T>(
                                   [&] {
                                     auto y = conv3d_transpose(x, wt, bt, 2);
                                     return mean(mul(y, y));
                                   },
                                   {x, wt, bt}, static_cast<T>(1e-5), probes, rng.stream("c3t")));
  }
  {
    auto x = rand_tensor({6, 5, 2}, -1, 1);
    auto w = rand_tensor({3, 3, 2, 3}, -1, 1);
    auto b = rand_tensor({3}, -1, 1);
    record("conv2d", grad_check<T>(
                         [&] {
                           auto y = conv2d(x, w, b, 2);
                           return mean(mul(y, y));
                         },
                         {x, w, b}, static_cast<T>(1e-5), probes, rng.stream("c2")));
    auto wt = rand_tensor({4, 4, 3, 2}, -1, 1);
    auto bt = rand_tensor({3}, -1, 1);
    record("conv2d_transpose", grad_check<T>(
                                   [&] {
                                     auto y = conv2d_transpose(x, wt, bt, 2);
                                     return mean(mul(y, y));
                                   },
                                   {x, wt, bt}, static_cast<T>(1e-5), probes, rng.stream("c2t")));
  }
  {
    auto x = rand_tensor({9}, -1, 1);
    auto w = rand_tensor({4, 9}, -1, 1);
    auto b = rand_tensor({4}, -1, 1);
    record("fully_connected",
           grad_check<T>(
               [&] {
                 auto y = fully_connected(x, w, b);
                 return mean(mul(y, y));
               },
               {x, w, b}, static_cast<T>(1e-6), probes, rng.stream("fc")));
    record("dropout", grad_check<T>(
                          [&] { return mean(dropout(x, 0.4, true, Rng(7))); }, {x},
                          static_cast<T>(1e-6), probes, rng.stream("do")));
  }
  {
    auto p = rand_tensor({12}, 0.05, 0.95);
    auto t = rand_tensor({12}, 0.0, 1.0);
    t.node()->requires_grad = false;
    record("mse", grad_check<T>([&] { return mse_loss(p, t); }, {p}, static_cast<T>(1e-6), probes,
                                rng.stream("mse")));
    record("bce", grad_check<T>([&] { return bce_loss(p, t); }, {p}, static_cast<T>(1e-6), probes,
                                rng.stream("bce")));
  }
  {
    auto feats = rand_tensor({4, 4, 3, 2}, -1, 1);
    auto w = rand_tensor({1, 1, 6, 2}, -1, 1);
    auto b = rand_tensor({2}, -1, 1);
    auto slope = Tensor<T>::from_data({2}, {T(0.25), T(0.25)}, true);
    record("projection_unit",
           grad_check<T>(
               [&] {
                 auto y = project(feats, w, b, slope);
                 return mean(mul(y, y));
               },
               {feats, w, b, slope}, static_cast<T>(1e-5), probes, rng.stream("proj")));
  }
  {
    auto normal = rand_tensor({5, 5, 3}, 0.15, 0.85);
    auto albedo = rand_tensor({5, 5, 1}, 0.1, 1.0);
    auto light = Tensor<T>::from_data({4}, {T(30), T(50), T(0.2), T(0.9)}, true);
    auto target = rand_tensor({5, 5, 1}, 0, 1);
    target.node()->requires_grad = false;
    record("shade_compose",
           grad_check<T>([&] { return mse_loss(shade_compose(normal, albedo, light), target); },
                         {normal, albedo, light}, static_cast<T>(1e-5), probes,
                         rng.stream("shade")));
  }
  {
    // smooth blob for the resampling op
    const std::size_t n = 10;
    std::vector<T> gv(n * n * n);
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t w = 0; w < n; ++w)
        for (std::size_t d = 0; d < n; ++d) {
          const double c = (n - 1.0) / 2.0;
          const double r =
              std::sqrt((h - c) * (h - c) + (w - c) * (w - c) + 0.7 * (d - c) * (d - c));
          gv[(h * n + w) * n + d] = static_cast<T>(1.0 / (1.0 + std::exp(r - n / 4.0)));
        }
    auto grid = Tensor<T>::from_data({n, n, n, 1}, gv, true);
    auto pose = Tensor<T>::from_data({3}, {T(25), T(40), T(4.3)}, true);
    record("rigid_transform",
           grad_check<T>(
               [&] {
                 auto y = rigid_transform_op(grid, pose);
                 return mean(mul(y, y));
               },
               {grid, pose}, static_cast<T>(1e-4), probes, rng.stream("rt")));
  }
  {
    std::vector<std::vector<double>> latents(12, std::vector<double>(6));
    Rng lrng(3);
    for (auto& z : latents)
      for (auto& v : z) v = lrng.normal(0, 1);
    static LatentStats stats;  // must outlive the graphs below
    stats = latent_stats(latents);
    auto z = rand_tensor({6}, -1, 1);
    record("mahalanobis", grad_check<T>([&] { return mahalanobis_op(z, stats); }, {z},
                                        static_cast<T>(1e-6), probes, rng.stream("mh")));
  }

  // composite graphs
  {
    RenderNetSpec spec;
    spec.scale = 1.0;
    spec.input_dims = {8, 8, 8};
    spec.enc3d = {{4, 3, 2, 2}, {8, 3, 2, 1}};
    spec.n_res3d = 1;
    spec.n_res2d_pre = 1;
    spec.mid_conv = {8, 3, 1};
    spec.n_res2d_post = 0;
    spec.upconv = {{8, 3, 1}, {8, 4, 2}, {4, 4, 2}, {0, 3, 1}};
    spec.branches = {{"normal", 3}, {"albedo", 1}};
    spec.dropout_p = 0.0;
    auto ps = build_rendernet<T>(spec, 21);
    std::vector<T> gv(8 * 8 * 8);
    for (std::size_t i = 0; i < gv.size(); ++i)
      gv[i] = static_cast<T>(0.5 + 0.4 * std::sin(0.37 * static_cast<double>(i)));
    auto grid = Tensor<T>::from_data({8, 8, 8, 1}, gv, true);
    auto pose = Tensor<T>::from_data({3}, {T(30), T(60), T(kRadiusRef)}, true);
    auto light = Tensor<T>::from_data({4}, {T(20), T(55), T(0.2), T(1)}, true);
    auto target = rand_tensor({8, 8, 1}, 0, 1);
    target.node()->requires_grad = false;
    std::vector<Tensor<T>> inputs{grid, pose, light};
    for (const char* name : {"enc3d.0.w", "res3d.0.conv1.w", "project.w", "mid.w",
                             "branch.normal.2.w", "branch.albedo.3.w"})
      inputs.push_back(ps.get(name));
    record("rendernet_end_to_end",
           grad_check<T>(
               [&] {
                 auto cam = rigid_transform_op(grid, pose);
                 auto branches = rendernet_cnn(ps, spec, cam);
                 auto image = shade_compose(branches.at("normal"), branches.at("albedo"), light);
                 return bce_loss(image, target);
               },
               inputs, static_cast<T>(1e-4), probes, rng.stream("e2e")),
           10.0);
  }
  {
    ShapeAeSpec spec;
    spec.scale = 0.125;
    spec.latent = 10;
    spec.input_dims = {16, 16, 16};
    auto ps = build_shape_ae<T>(spec, 31);
    auto z = rand_tensor({spec.latent}, -1, 1);
    std::vector<Tensor<T>> inputs{z, ps.get("fc_dec.w"), ps.get("dec.1.w")};
    record("shape_ae_decode", grad_check<T>(
                                  [&] {
                                    auto v = shape_decode(ps, spec, z);
                                    return mean(mul(v, v));
                                  },
                                  inputs, static_cast<T>(1e-4), probes, rng.stream("ae")),
           10.0);
  }
  {
    // full reconstruction loss: gradients w.r.t. shape latent, pose, texture
    // latent and lighting through decoder + transform + renderer + shading
    RenderNetSpec rspec;
    rspec.scale = 1.0;
    rspec.input_dims = {16, 16, 16};
    rspec.input_channels = 5;
    rspec.enc3d = {{4, 3, 2, 2}, {8, 3, 2, 1}};
    rspec.n_res3d = 1;
    rspec.n_res2d_pre = 1;
    rspec.mid_conv = {8, 3, 1};
    rspec.n_res2d_post = 0;
    rspec.upconv = {{8, 3, 1}, {8, 4, 2}, {4, 4, 2}, {0, 3, 1}};
    rspec.branches = {{"normal", 3}, {"albedo", 1}};
    rspec.dropout_p = 0.0;
    auto renderer = build_rendernet<T>(rspec, 41);
    ShapeAeSpec sspec;
    sspec.scale = 0.125;
    sspec.latent = 10;
    sspec.input_dims = {16, 16, 16};
    auto shape_ae = build_shape_ae<T>(sspec, 43);
    TextureDecoderSpec tspec;
    tspec.latent = 6;
    tspec.base = 8;
    auto tex = build_texture_decoder<T>(tspec, 45);
    for (auto& [name, e] : renderer.entries()) e.value.node()->requires_grad = false;
    for (auto& [name, e] : shape_ae.entries()) e.value.node()->requires_grad = false;
    for (auto& [name, e] : tex.entries()) e.value.node()->requires_grad = false;

    std::vector<std::vector<double>> latents(12, std::vector<double>(sspec.latent));
    Rng lrng(5);
    for (auto& z : latents)
      for (auto& v : z) v = lrng.normal(0, 1);
    static LatentStats recon_stats;
    recon_stats = latent_stats(latents);

    ReconModel<T> model;
    model.renderer = &renderer;
    model.renderer_spec = &rspec;
    model.shape_prior = &shape_ae;
    model.shape_spec = &sspec;
    model.texture_prior = &tex;
    model.texture_spec = &tspec;
    model.stats = &recon_stats;
    model.shade_head = true;

    ReconVars<T> vars;
    vars.z = rand_tensor({sspec.latent}, -1, 1);
    vars.phi = rand_tensor({tspec.latent}, -1, 1);
    vars.pose_angles = Tensor<T>::from_data({2}, {T(40), T(75)}, true);
    vars.radius = Tensor<T>::from_data({1}, {T(kRadiusRef)}, true);
    vars.light = Tensor<T>::from_data({4}, {T(15), T(60), T(0.2), T(1)}, true);
    auto observed = rand_tensor({16, 16, 1}, 0, 1);
    observed.node()->requires_grad = false;
    ReconstructionConfig cfg;
    record("recon_loss",
           grad_check<T>([&] { return recon_loss(model, observed, vars, cfg); },
                         {vars.z, vars.pose_angles, vars.radius, vars.phi, vars.light},
                         static_cast<T>(1e-5), probes, rng.stream("recon")),
           10.0);
  }
  return results;
}

// ---------------------------------------------------------------------------

int cmd_gen_shapes(const std::string& out, std::size_t n, const std::string& family_name,
                   std::size_t resolution, std::uint64_t seed, double noise) {
  const ShapeFamily family = parse_family(family_name);
  fs::create_directories(out);
  auto recipes = gen_shape_recipes(family, n, resolution, seed);
  char name[64];
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    recipes[i].noise = noise;
    VoxelGrid g = generate_shape(recipes[i]);
    std::snprintf(name, sizeof(name), "shape_%04zu.vxg", i);
    save_grid(g, fs::path(out) / name);
  }
  std::printf("wrote %zu shapes to %s\n", recipes.size(), out.c_str());
  return 0;
}

int cmd_gen_dataset(const std::string& shapes_dir, const std::string& out,
                    std::vector<std::string> styles, std::size_t views, std::uint64_t seed,
                    std::size_t supersample) {
  std::vector<VoxelGrid> shapes;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(shapes_dir))
    if (entry.path().extension() == ".vxg") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) shapes.push_back(read_grid(f.string()));
  if (shapes.empty()) throw CliError{2, "no .vxg shapes found in " + shapes_dir};
  if (styles.empty()) styles = {"phong"};
  GenDatasetOptions opt;
  opt.supersample = supersample;
  DatasetManifest m = gen_dataset(shapes, out, styles, views, seed, opt);
  std::printf("wrote %zu samples to %s\n", m.samples.size(), out.c_str());
  return 0;
}

int cmd_render_ref(const std::string& grid_path, const std::string& style, double az, double el,
                   double radius, double light_az, double light_el, double ambient,
                   const std::string& out, std::size_t supersample) {
  VoxelGrid world = read_grid(grid_path);
  VoxelGrid cam = rigid_transform(world, Pose{az, el, radius});
  SurfaceMaps maps = march_visibility(cam, 0.5, supersample);
  LightAngles light{light_az, light_el, ambient, 1.0};
  ImageBuffer img = render_style(style, cam, maps, light.to_spec(), supersample);
  save_png(img, out);
  fs::path pfm = fs::path(out).replace_extension(".pfm");
  save_pfm(img, pfm);
  std::printf("wrote %s and %s\n", out.c_str(), pfm.string().c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& style, const std::string& kind, std::size_t steps,
              std::size_t batch, double lr, std::uint64_t seed, const std::string& out) {
  nlohmann::json cfg = config_path.empty() ? nlohmann::json::object() : read_config(config_path);
  fs::create_directories(out);
  AdamConfig adam;
  adam.learning_rate = lr;
  TrainSchedule sched;
  sched.steps = steps;
  sched.batch = batch;

  if (kind == "shape-ae") {
    ShapeAeSpec spec = cfg.contains("shape_ae") ? shape_ae_spec_from_json(cfg["shape_ae"])
                                                : desk_shape_ae_spec();
    auto ps = build_shape_ae<float>(spec, seed);
    std::vector<VoxelGrid> shapes;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_dir))
      if (entry.path().extension() == ".vxg") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) shapes.push_back(read_grid(f.string()));
    if (shapes.empty()) throw CliError{2, "no .vxg shapes found in " + data_dir};
    std::vector<TrainLogEntry> log;
    if (steps > 0) log = train_shape_ae(ps, spec, shapes, adam, sched, seed);
    ps.save(fs::path(out) / "shape_ae.vckp");
    write_train_log_csv(log, fs::path(out) / "train_log.csv");
    std::printf("wrote %s\n", (fs::path(out) / "shape_ae.vckp").string().c_str());
    return 0;
  }

  RenderNetSpec spec = spec_from_config(cfg);
  auto ps = build_rendernet<float>(spec, seed);
  DatasetManifest manifest = [&] {
    try {
      return DatasetManifest::load(fs::path(data_dir) / "manifest.json");
    } catch (const std::exception& e) {
      throw CliError{2, std::string("cannot read dataset manifest: ") + e.what()};
    }
  }();
  auto samples = load_train_samples(manifest, data_dir, style);
  sched.shade_head = spec_uses_shade_head(spec);
  const LossKind loss = (style == "normal" || style == "albedo") && !sched.shade_head
                            ? LossKind::Mse
                            : LossKind::Bce;
  std::vector<TrainLogEntry> log;
  if (steps > 0) log = train_rendernet(ps, spec, samples, loss, adam, sched, seed);
  ps.save(fs::path(out) / "rendernet.vckp");
  write_train_log_csv(log, fs::path(out) / "train_log.csv");
  save_json_file(nlohmann::json{{"rendernet", to_json(spec)}}, fs::path(out) / "config.json");
  std::printf("wrote %s\n", (fs::path(out) / "rendernet.vckp").string().c_str());
  return 0;
}

int cmd_render(const std::string& config_path, const std::string& checkpoint,
               const std::string& grid_path, double az, double el, double radius,
               double light_az, double light_el, double ambient, const std::string& out) {
  nlohmann::json cfg = read_config(config_path);
  RenderNetSpec spec = spec_from_config(cfg);
  auto ps = read_checkpoint(checkpoint);
  RenderInputs inputs;
  inputs.grid = read_grid(grid_path);
  inputs.pose = Pose{az, el, radius};
  inputs.light = LightAngles{light_az, light_el, ambient, 1.0};
  auto images = rendernet_forward(ps, spec, inputs);
  fs::path base(out);
  if (!base.parent_path().empty()) fs::create_directories(base.parent_path());
  for (const auto& [name, img] : images) {
    fs::path p = base;
    p.replace_filename(base.stem().string() + "_" + name + ".png");
    save_png(img, p);
    std::printf("wrote %s\n", p.string().c_str());
  }
  return 0;
}

int cmd_reconstruct(const std::string& config_path, const std::string& renderer_ckpt,
                    const std::string& ae_ckpt, const std::string& image_path,
                    const std::string& out, std::uint64_t seed, bool direct, long steps_override,
                    long restarts_override) {
  nlohmann::json cfg = read_config(config_path);
  RenderNetSpec rspec = spec_from_config(cfg);
  ShapeAeSpec sspec = cfg.contains("shape_ae") ? shape_ae_spec_from_json(cfg["shape_ae"])
                                               : desk_shape_ae_spec();
  auto renderer = read_checkpoint(renderer_ckpt);
  ParamStore<float> shape_ae;
  if (!direct) shape_ae = read_checkpoint(ae_ckpt);

  ImageBuffer observed = [&] {
    try {
      return load_pfm(image_path);
    } catch (const std::exception& e) {
      throw CliError{2, std::string("cannot read image: ") + e.what()};
    }
  }();

  ReconstructionProblem problem;
  problem.observed = observed;
  problem.model.renderer = &renderer;
  problem.model.renderer_spec = &rspec;
  problem.model.shape_spec = &sspec;
  if (!direct) problem.model.shape_prior = &shape_ae;
  problem.model.shade_head = spec_uses_shade_head(rspec);
  if (cfg.contains("recon")) problem.config = recon_config_from_json(cfg["recon"]);
  if (problem.model.shade_head && problem.config.lr_scale_light == 0.0)
    problem.config.lr_scale_light = 0.05;
  if (steps_override >= 0) problem.config.max_steps = static_cast<std::size_t>(steps_override);
  if (restarts_override >= 1)
    problem.config.n_restarts = static_cast<std::size_t>(restarts_override);

  fs::create_directories(out);
  ReconstructionReport report =
      direct ? reconstruct_direct(problem, seed) : reconstruct(problem, seed);
  save_json_file(reconstruction_report_json(report), fs::path(out) / "report.json");
  save_png(report.rendered, fs::path(out) / "reconstruction.png");
  for (std::size_t r = 0; r < report.round_renders.size(); ++r)
    save_png(report.round_renders[r], fs::path(out) / ("round_" + std::to_string(r) + ".png"));
  save_grid(report.reconstruction, fs::path(out) / "reconstruction.vxg");
  std::printf("final loss %.6g pose az %.2f el %.2f -> %s\n", report.best.loss,
              report.best.pose.azimuth_deg, report.best.pose.elevation_deg, out.c_str());
  return 0;
}

int cmd_gradcheck(double tol, const std::string& precision, std::size_t probes,
                  std::uint64_t seed) {
  std::vector<GradCheckRow> results;
  if (precision == "double")
    results = run_gradcheck_suite<double>(probes, seed);
  else if (precision == "single")
    results = run_gradcheck_suite<float>(probes, seed);
  else
    throw CliError{1, "precision must be single or double"};
  bool ok = true;
  for (const auto& row : results) {
    const double budget = tol * row.tol_multiplier;
    const bool pass = row.max_rel_error < budget;
    ok = ok && pass;
    std::printf("%-22s max_rel_error %.3e (tol %.1e)  %s\n", row.name.c_str(),
                row.max_rel_error, budget, pass ? "ok" : "FAIL");
  }
  std::printf("%s (%zu ops, base tol %.1e, %s precision)\n", ok ? "PASS" : "FAIL",
              results.size(), tol, precision.c_str());
  return ok ? 0 : 1;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& data_dir, const std::string& style, const std::string& out_csv) {
  nlohmann::json cfg = read_config(config_path);
  RenderNetSpec spec = spec_from_config(cfg);
  auto ps = read_checkpoint(checkpoint);
  DatasetManifest manifest = [&] {
    try {
      return DatasetManifest::load(fs::path(data_dir) / "manifest.json");
    } catch (const std::exception& e) {
      throw CliError{2, std::string("cannot read dataset manifest: ") + e.what()};
    }
  }();
  const bool shade = spec_uses_shade_head(spec);
  std::vector<VoxelGrid> shapes;
  for (const auto& f : manifest.shape_files)
    shapes.push_back(read_grid((fs::path(data_dir) / f).string()));

  std::string csv = "sample,style,psnr\n";
  double mean_psnr = 0.0;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    if (!s.targets.count(style)) throw CliError{1, "style missing from manifest: " + style};
    ImageBuffer target = load_pfm(fs::path(data_dir) / s.targets.at(style));
    RenderInputs inputs;
    inputs.grid = shapes[s.shape_index];
    inputs.pose = s.pose;
    inputs.light = s.light;
    auto images = rendernet_forward(ps, spec, inputs);
    const ImageBuffer& rendered = shade ? images.at("shaded") : images.at("image");
    const double p = psnr(rendered, target);
    mean_psnr += p;
    csv += std::to_string(i) + "," + style + "," + std::to_string(p) + "\n";
  }
  mean_psnr /= static_cast<double>(manifest.samples.size());
  csv += "mean," + style + "," + std::to_string(mean_psnr) + "\n";
  if (out_csv.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(out_csv);
    f << csv;
    std::printf("wrote %s (mean psnr %.2f)\n", out_csv.c_str(), mean_psnr);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxrender: differentiable voxel renderer toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config, out, style = "phong", precision = "double";
  double tol = 1e-5;

  auto* gen_shapes_cmd = app.add_subcommand("gen-shapes", "generate procedural voxel shapes");
  std::size_t gs_n = 40, gs_res = 32;
  std::string gs_family = "a";
  double gs_noise = 0.0;
  gen_shapes_cmd->add_option("--out", out)->required();
  gen_shapes_cmd->add_option("--n", gs_n);
  gen_shapes_cmd->add_option("--family", gs_family, "a|b|mixed");
  gen_shapes_cmd->add_option("--resolution", gs_res);
  gen_shapes_cmd->add_option("--seed", seed);
  gen_shapes_cmd->add_option("--noise", gs_noise);

  auto* gen_ds_cmd = app.add_subcommand("gen-dataset", "render per-style training targets");
  std::string ds_shapes;
  std::vector<std::string> ds_styles;
  std::size_t ds_views = 12, ds_ss = 2;
  gen_ds_cmd->add_option("--shapes", ds_shapes)->required();
  gen_ds_cmd->add_option("--out", out)->required();
  gen_ds_cmd->add_option("--style", ds_styles, "repeatable");
  gen_ds_cmd->add_option("--views", ds_views);
  gen_ds_cmd->add_option("--supersample", ds_ss);
  gen_ds_cmd->add_option("--seed", seed);

  auto* ref_cmd = app.add_subcommand("render-ref", "classical reference render of a grid");
  std::string rr_grid;
  double rr_az = 0, rr_el = 60, rr_radius = kRadiusRef, rr_laz = 30, rr_lel = 55, rr_amb = 0.2;
  std::size_t rr_ss = 2;
  ref_cmd->add_option("--grid", rr_grid)->required();
  ref_cmd->add_option("--style", style);
  ref_cmd->add_option("--az", rr_az);
  ref_cmd->add_option("--el", rr_el);
  ref_cmd->add_option("--radius", rr_radius);
  ref_cmd->add_option("--light-az", rr_laz);
  ref_cmd->add_option("--light-el", rr_lel);
  ref_cmd->add_option("--ambient", rr_amb);
  ref_cmd->add_option("--supersample", rr_ss);
  ref_cmd->add_option("--out", out)->required();

  auto* train_cmd = app.add_subcommand("train", "train the renderer or the shape autoencoder");
  std::string tr_data, tr_kind = "rendernet";
  std::size_t tr_steps = 2000, tr_batch = 4;
  double tr_lr = 1e-3;
  train_cmd->add_option("--config", config);
  train_cmd->add_option("--data", tr_data)->required();
  train_cmd->add_option("--style", style);
  train_cmd->add_option("--kind", tr_kind, "rendernet|shape-ae");
  train_cmd->add_option("--steps", tr_steps);
  train_cmd->add_option("--batch", tr_batch);
  train_cmd->add_option("--lr", tr_lr);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--out", out)->required();

  auto* render_cmd = app.add_subcommand("render", "render a grid with a trained checkpoint");
  std::string rd_ckpt, rd_grid;
  double rd_az = 0, rd_el = 60, rd_radius = kRadiusRef, rd_laz = 30, rd_lel = 55, rd_amb = 0.2;
  render_cmd->add_option("--config", config)->required();
  render_cmd->add_option("--checkpoint", rd_ckpt)->required();
  render_cmd->add_option("--grid", rd_grid)->required();
  render_cmd->add_option("--az", rd_az);
  render_cmd->add_option("--el", rd_el);
  render_cmd->add_option("--radius", rd_radius);
  render_cmd->add_option("--light-az", rd_laz);
  render_cmd->add_option("--light-el", rd_lel);
  render_cmd->add_option("--ambient", rd_amb);
  render_cmd->add_option("--out", out)->required();

  auto* rec_cmd = app.add_subcommand("reconstruct", "invert a trained renderer on one image");
  std::string rc_renderer, rc_ae, rc_image;
  bool rc_direct = false;
  long rc_steps = -1, rc_restarts = -1;
  rec_cmd->add_option("--config", config)->required();
  rec_cmd->add_option("--renderer-checkpoint", rc_renderer)->required();
  rec_cmd->add_option("--ae-checkpoint", rc_ae);
  rec_cmd->add_option("--image", rc_image)->required();
  rec_cmd->add_option("--out", out)->required();
  rec_cmd->add_option("--seed", seed);
  rec_cmd->add_option("--steps", rc_steps);
  rec_cmd->add_option("--restarts", rc_restarts);
  rec_cmd->add_flag("--direct", rc_direct, "optimize raw voxels (no shape prior)");

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of registered ops");
  std::size_t gc_probes = 20;
  gc_cmd->add_option("--tol", tol);
  gc_cmd->add_option("--precision", precision, "single|double");
  gc_cmd->add_option("--probes", gc_probes);
  gc_cmd->add_option("--seed", seed);

  auto* eval_cmd = app.add_subcommand("eval", "PSNR table of a checkpoint against a dataset");
  std::string ev_ckpt, ev_data, ev_out;
  eval_cmd->add_option("--config", config)->required();
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--data", ev_data)->required();
  eval_cmd->add_option("--style", style);
  eval_cmd->add_option("--out", ev_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_shapes_cmd->parsed())
      return cmd_gen_shapes(out, gs_n, gs_family, gs_res, seed, gs_noise);
    if (gen_ds_cmd->parsed())
      return cmd_gen_dataset(ds_shapes, out, ds_styles, ds_views, seed, ds_ss);
    if (ref_cmd->parsed())
      return cmd_render_ref(rr_grid, style, rr_az, rr_el, rr_radius, rr_laz, rr_lel, rr_amb, out,
                            rr_ss);
    if (train_cmd->parsed())
      return cmd_train(config, tr_data, style, tr_kind, tr_steps, tr_batch, tr_lr, seed, out);
    if (render_cmd->parsed())
      return cmd_render(config, rd_ckpt, rd_grid, rd_az, rd_el, rd_radius, rd_laz, rd_lel, rd_amb,
                        out);
    if (rec_cmd->parsed())
      return cmd_reconstruct(config, rc_renderer, rc_ae, rc_image, out, seed, rc_direct, rc_steps,
                             rc_restarts);
    if (gc_cmd->parsed()) return cmd_gradcheck(tol, precision, gc_probes, seed);
    if (eval_cmd->parsed()) return cmd_eval(config, ev_ckpt, ev_data, style, ev_out);
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
