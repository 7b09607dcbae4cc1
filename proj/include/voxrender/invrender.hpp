// Image-based reconstruction: MAP optimization of shape latent, pose,
// texture latent and lighting against a trained renderer, with pose-grid
// initialization, multi-restart and periodic re-initialization from the
// incumbent best candidate.
//
// The optimized loss is
//   alpha * ||observed - render(g(z), pose, h(phi), light)||^2
//     + beta * (z - mu)^T Sigma^{-1} (z - mu)
// with the Mahalanobis term present only when latent statistics are supplied
// (otherwise a plain pixel MSE). reconstruct_direct optimizes raw voxel
// values clamped to [0,1] instead of the shape latent.
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "voxrender/parallel.hpp"
#include "voxrender/priors.hpp"
#include "voxrender/rendernet.hpp"

namespace voxrender {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

constexpr double kPsnrSentinel = 99.0;  // reported for identical images

inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  check_arg(a.height() == b.height() && a.width() == b.width() && a.channels() == b.channels(),
            "psnr: image dims must match");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

inline double iou(const VoxelGrid& a, const VoxelGrid& b, double threshold = 0.5) {
  check_arg(a.size() == b.size(), "iou: grid dims must match");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool va = a.data()[i] >= threshold;
    const bool vb = b.data()[i] >= threshold;
    inter += va && vb;
    uni += va || vb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Pose grid
// ---------------------------------------------------------------------------

/// Level 0: an inclusive n x n grid over the ranges. Level k >= 1: a 3x3
/// window centered on `center` with spacing halved per level (clamped to the
/// ranges); the center pose is always one of the nodes.
inline std::vector<Pose> pose_grid(PoseRange azimuth, PoseRange elevation, std::size_t level,
                                   const Pose& center = Pose{}, std::size_t points_per_axis = 5,
                                   double radius = kRadiusRef) {
  check_arg(azimuth.hi > azimuth.lo && elevation.hi > elevation.lo,
            "pose_grid: degenerate range");
  check_arg(points_per_axis >= 2, "pose_grid: need at least 2 points per axis");
  std::vector<Pose> out;
  if (level == 0) {
    const double saz = (azimuth.hi - azimuth.lo) / static_cast<double>(points_per_axis - 1);
    const double sel = (elevation.hi - elevation.lo) / static_cast<double>(points_per_axis - 1);
    for (std::size_t i = 0; i < points_per_axis; ++i)
      for (std::size_t j = 0; j < points_per_axis; ++j)
        out.push_back(Pose{azimuth.lo + saz * i, elevation.lo + sel * j, radius});
    return out;
  }
  const double saz = (azimuth.hi - azimuth.lo) / static_cast<double>(points_per_axis - 1) /
                     std::pow(2.0, static_cast<double>(level));
  const double sel = (elevation.hi - elevation.lo) / static_cast<double>(points_per_axis - 1) /
                     std::pow(2.0, static_cast<double>(level));
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) {
      Pose p = center;
      p.azimuth_deg = std::clamp(center.azimuth_deg + saz * i, azimuth.lo, azimuth.hi);
      p.elevation_deg = std::clamp(center.elevation_deg + sel * j, elevation.lo, elevation.hi);
      out.push_back(p);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Problem statement
// ---------------------------------------------------------------------------

struct ReconstructionConfig {
  double alpha = 5.0;
  double beta = 1.0;
  PoseRange azimuth{0.0, 180.0};
  PoseRange elevation{0.0, 180.0};
  std::size_t grid_points = 5;
  std::size_t n_restarts = 5;
  std::size_t reinit_every = 200;
  std::size_t max_steps = 1800;
  double learning_rate = 0.5;    // base Adam rate; per-variable scales below
  double lr_scale_latent = 0.06;
  double lr_scale_radius = 0.0;  // 0 freezes the radius
  double lr_scale_light = 0.0;   // >0 only for the shading-composed renderer
  double init_radius = kRadiusRef;
  LightAngles init_light{0.0, 90.0, 0.2, 1.0};  // overhead
  double reinit_sigma_latent = 0.1;
  double reinit_sigma_pose_deg = 5.0;
  double convergence_rel = 1e-5;  // relative improvement per 100 steps
};

/// Everything fixed during optimization, typed on the scalar so the loss can
/// be gradient-checked in double precision.
template <class T>
struct ReconModel {
  ParamStore<T>* renderer = nullptr;
  const RenderNetSpec* renderer_spec = nullptr;
  ParamStore<T>* shape_prior = nullptr;  // decoder g
  const ShapeAeSpec* shape_spec = nullptr;
  ParamStore<T>* texture_prior = nullptr;  // decoder h, optional
  const TextureDecoderSpec* texture_spec = nullptr;
  const LatentStats* stats = nullptr;  // optional (mu, Sigma)
  bool shade_head = false;             // compose normal+albedo branches with light
};

template <class T>
struct ReconVars {
  Tensor<T> z;             // shape latent
  Tensor<T> phi;           // texture latent (undefined when no texture prior)
  Tensor<T> pose_angles;   // [az, el] degrees
  Tensor<T> radius;        // [1]
  Tensor<T> light;         // [az, el, ambient, intensity]
};

/// Differentiable reconstruction loss (Mahalanobis-regularized pixel MSE).
template <class T>
Tensor<T> recon_loss(ReconModel<T>& model, const Tensor<T>& observed, ReconVars<T>& vars,
                     const ReconstructionConfig& cfg) {
  Tensor<T> volume = shape_decode(*model.shape_prior, *model.shape_spec, vars.z);
  if (model.texture_prior != nullptr) {
    check_arg(vars.phi.defined(), "recon_loss: texture latent missing");
    Tensor<T> tex = texture_decode(*model.texture_prior, *model.texture_spec, vars.phi);
    volume = concat(volume, tex, 3);
  }
  Tensor<T> pose = concat(vars.pose_angles, vars.radius, 0);
  Tensor<T> cam = rigid_transform_op(volume, pose);
  auto branches = rendernet_cnn(*model.renderer, *model.renderer_spec, cam);
  Tensor<T> image;
  if (model.shade_head)
    image = shade_compose(branches.at("normal"), branches.at("albedo"), vars.light);
  else
    image = branches.at("image");
  Tensor<T> data = mse_loss(image, observed);
  if (model.stats != nullptr) {
    Tensor<T> prior = mahalanobis_op(vars.z, *model.stats);
    return add(scale(data, static_cast<T>(cfg.alpha)), scale(prior, static_cast<T>(cfg.beta)));
  }
  return data;
}

/// Raw-voxel variant (no shape prior): voxels enter through a clamped leaf.
template <class T>
Tensor<T> recon_loss_direct(ReconModel<T>& model, const Tensor<T>& observed,
                            const Tensor<T>& voxels, ReconVars<T>& vars) {
  Tensor<T> pose = concat(vars.pose_angles, vars.radius, 0);
  Tensor<T> cam = rigid_transform_op(voxels, pose);
  auto branches = rendernet_cnn(*model.renderer, *model.renderer_spec, cam);
  Tensor<T> image = model.shade_head
                        ? shade_compose(branches.at("normal"), branches.at("albedo"), vars.light)
                        : branches.at("image");
  return mse_loss(image, observed);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct Candidate {
  std::vector<float> z;
  std::vector<float> phi;
  Pose pose;
  LightAngles light;
  double loss = std::numeric_limits<double>::infinity();
  bool alive = true;
};

struct ReconstructionReport {
  Candidate best;
  VoxelGrid reconstruction;                  // decoded (or direct) volume, canonical pose
  ImageBuffer rendered;                      // best candidate's render
  std::vector<double> best_loss_per_round;   // monotone non-increasing
  std::vector<ImageBuffer> round_renders;    // best render after each round
  std::size_t steps_run = 0;
  std::size_t dropped_candidates = 0;
};

namespace invrender_detail {

struct CandidateState {
  ParamStore<float> vars;  // entries: z, phi?, pose_angles, radius, light
  double loss = std::numeric_limits<double>::infinity();
  bool alive = true;
  bool converged = false;
  bool direct = false;
  std::size_t volume_size = 0;
};

inline ReconVars<float> vars_view(CandidateState& c) {
  ReconVars<float> v;
  if (!c.direct) v.z = c.vars.get("z");
  if (c.vars.has("phi")) v.phi = c.vars.get("phi");
  v.pose_angles = c.vars.get("pose_angles");
  v.radius = c.vars.get("radius");
  v.light = c.vars.get("light");
  return v;
}

inline CandidateState make_state(const ReconstructionConfig& cfg, std::size_t latent_dim,
                                 std::size_t texture_latent_dim, const Pose& pose,
                                 bool direct, std::size_t volume_size,
                                 const std::vector<float>* z_init) {
  CandidateState st;
  st.direct = direct;
  st.volume_size = volume_size;
  if (direct) {
    st.vars.add("z", Tensor<float>::from_data({volume_size}, std::vector<float>(volume_size, 0.5f),
                                              true));
    st.vars.entries().at("z").lr_scale = cfg.lr_scale_latent;
  } else {
    std::vector<float> z0(latent_dim, 0.0f);
    if (z_init != nullptr) z0 = *z_init;
    st.vars.add("z", Tensor<float>::from_data({latent_dim}, std::move(z0), true));
    st.vars.entries().at("z").lr_scale = cfg.lr_scale_latent;
  }
  if (texture_latent_dim > 0) {
    st.vars.add("phi", Tensor<float>::from_data({texture_latent_dim},
                                                std::vector<float>(texture_latent_dim, 0.0f),
                                                true));
    st.vars.entries().at("phi").lr_scale = cfg.lr_scale_latent;
  }
  st.vars.add("pose_angles",
              Tensor<float>::from_data({2},
                                       {static_cast<float>(pose.azimuth_deg),
                                        static_cast<float>(pose.elevation_deg)},
                                       true));
  st.vars.add("radius",
              Tensor<float>::from_data({1}, {static_cast<float>(pose.radius)}, true));
  st.vars.entries().at("radius").lr_scale = cfg.lr_scale_radius;
  st.vars.add("light", light_tensor<float>(cfg.init_light, true));
  st.vars.entries().at("light").lr_scale = cfg.lr_scale_light;
  return st;
}

inline Pose state_pose(const CandidateState& st) {
  const auto& a = st.vars.get("pose_angles").value();
  return Pose{a[0], a[1], st.vars.get("radius").value()[0]};
}

}  // namespace invrender_detail

struct ReconstructionProblem {
  ImageBuffer observed;
  ReconModel<float> model;
  ReconstructionConfig config;
};

namespace invrender_detail {

/// Shared driver for the prior-based and direct paths.
inline ReconstructionReport run_reconstruction(ReconstructionProblem& problem, std::uint64_t seed,
                                               bool direct) {
  auto& model = problem.model;
  const auto& cfg = problem.config;
  check_arg(model.renderer != nullptr && model.renderer_spec != nullptr,
            "reconstruct: renderer missing");
  check_arg(direct || (model.shape_prior != nullptr && model.shape_spec != nullptr),
            "reconstruct: shape prior missing");
  check_arg(cfg.n_restarts >= 1, "reconstruct: n_restarts must be >= 1");

  Rng root(seed);
  auto observed_t = tensor_from_image<float>(problem.observed);
  const std::size_t latent_dim = direct ? 0 : model.shape_spec->latent;
  const std::size_t tex_dim =
      (!direct && model.texture_prior != nullptr) ? model.texture_spec->latent : 0;
  std::size_t volume_size = 0;
  if (direct) {
    const auto& dims = model.renderer_spec->input_dims;
    volume_size = dims[0] * dims[1] * dims[2];
  }
  std::vector<float> z_init;
  if (!direct && model.stats != nullptr) {
    z_init.resize(latent_dim);
    for (std::size_t i = 0; i < latent_dim; ++i)
      z_init[i] = static_cast<float>(model.stats->mean[i]);
  }
  const std::vector<float>* z0 = z_init.empty() ? nullptr : &z_init;

  auto eval_state = [&](CandidateState& st) -> double {
    auto vars = vars_view(st);
    Tensor<float> loss;
    if (direct) {
      auto voxels = reshape(st.vars.get("z"),
                            {model.renderer_spec->input_dims[0],
                             model.renderer_spec->input_dims[1],
                             model.renderer_spec->input_dims[2], std::size_t(1)});
      loss = recon_loss_direct(model, observed_t, voxels, vars);
    } else {
      loss = recon_loss(model, observed_t, vars, cfg);
    }
    return static_cast<double>(loss.item());
  };

  // Level-0 pose grid: score every node, keep the best n_restarts as seeds.
  auto grid0 = pose_grid(cfg.azimuth, cfg.elevation, 0, Pose{}, cfg.grid_points, cfg.init_radius);
  std::vector<double> grid_losses(grid0.size());
  parallel_for(grid0.size(), [&](std::size_t i) {
    CandidateState probe =
        make_state(cfg, latent_dim, tex_dim, grid0[i], direct, volume_size, z0);
    grid_losses[i] = eval_state(probe);
  });
  std::vector<std::size_t> order(grid0.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return grid_losses[a] < grid_losses[b]; });

  std::vector<CandidateState> states;
  for (std::size_t c = 0; c < cfg.n_restarts; ++c) {
    const Pose p = grid0[order[c % order.size()]];
    states.push_back(make_state(cfg, latent_dim, tex_dim, p, direct, volume_size, z0));
    states.back().loss = grid_losses[order[c % order.size()]];
  }

  ReconstructionReport report;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;

  // global best snapshot keeps the reported per-round loss non-increasing
  std::map<std::string, std::vector<float>> best_values;
  double best_loss = std::numeric_limits<double>::infinity();
  auto snapshot = [&](const CandidateState& st) {
    best_values.clear();
    for (const auto& [name, e] : st.vars.entries()) best_values[name] = e.value.value();
    best_loss = st.loss;
  };

  std::size_t steps_done = 0;
  std::size_t level = 0;

  auto best_index = [&]() {
    std::size_t best = states.size();
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].alive && (best == states.size() || states[i].loss < states[best].loss))
        best = i;
    check_arg(best < states.size(), "reconstruct: all candidates dropped (non-finite losses)");
    return best;
  };

  auto render_best = [&](CandidateState& st) {
    auto vars = vars_view(st);
    Tensor<float> image;
    Tensor<float> volume;
    if (direct) {
      volume = reshape(st.vars.get("z"),
                       {model.renderer_spec->input_dims[0], model.renderer_spec->input_dims[1],
                        model.renderer_spec->input_dims[2], std::size_t(1)});
    } else {
      volume = shape_decode(*model.shape_prior, *model.shape_spec, vars.z);
      if (model.texture_prior != nullptr)
        volume = concat(volume, texture_decode(*model.texture_prior, *model.texture_spec, vars.phi),
                        3);
    }
    auto cam = rigid_transform_op(volume, concat(vars.pose_angles, vars.radius, 0));
    auto branches = rendernet_cnn(*model.renderer, *model.renderer_spec, cam);
    image = model.shade_head
                ? shade_compose(branches.at("normal"), branches.at("albedo"), vars.light)
                : branches.at("image");
    return image_from_tensor(image);
  };

  snapshot(states[best_index()]);  // max_steps = 0 returns the best grid seed

  while (steps_done < cfg.max_steps) {
    const std::size_t round_steps = std::min(cfg.reinit_every, cfg.max_steps - steps_done);
    parallel_for(states.size(), [&](std::size_t ci) {
      auto& st = states[ci];
      if (!st.alive) return;
      double window_start_loss = st.loss;
      for (std::size_t s = 0; s < round_steps; ++s) {
        st.vars.zero_grads();
        auto vars = vars_view(st);
        Tensor<float> loss;
        if (direct) {
          auto voxels = reshape(st.vars.get("z"),
                                {model.renderer_spec->input_dims[0],
                                 model.renderer_spec->input_dims[1],
                                 model.renderer_spec->input_dims[2], std::size_t(1)});
          loss = recon_loss_direct(model, observed_t, voxels, vars);
        } else {
          loss = recon_loss(model, observed_t, vars, cfg);
        }
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) {
          st.alive = false;
          return;
        }
        backward(loss);
        st.vars.adam_step(adam);
        if (direct)
          for (auto& v : st.vars.get("z").value()) v = std::clamp(v, 0.0f, 1.0f);
        st.loss = lv;
        if ((s + 1) % 100 == 0) {
          const double rel = (window_start_loss - st.loss) / std::max(window_start_loss, 1e-12);
          if (rel >= 0.0 && rel < cfg.convergence_rel) {
            st.converged = true;
            return;
          }
          window_start_loss = st.loss;
        }
      }
    });
    steps_done += round_steps;

    const std::size_t bi = best_index();
    if (states[bi].loss < best_loss) snapshot(states[bi]);
    report.best_loss_per_round.push_back(best_loss);
    report.round_renders.push_back(render_best(states[bi]));

    bool all_converged = true;
    for (const auto& st : states) all_converged = all_converged && (!st.alive || st.converged);
    if (steps_done >= cfg.max_steps || all_converged) break;

    // Re-initialize everyone from the incumbent best; candidate 0 keeps it
    // exactly so the reported best loss is non-increasing across rounds. The
    // pose grid subdivides around the best pose and seeds the others.
    ++level;
    CandidateState best = make_state(cfg, latent_dim, tex_dim, Pose{}, direct, volume_size, z0);
    for (auto& [name, e] : best.vars.entries()) e.value.value() = best_values.at(name);
    best.loss = best_loss;
    const Pose best_pose = state_pose(best);
    auto subgrid =
        pose_grid(cfg.azimuth, cfg.elevation, level, best_pose, cfg.grid_points, cfg.init_radius);
    std::vector<CandidateState> next;
    next.reserve(states.size());
    for (std::size_t c = 0; c < cfg.n_restarts; ++c) {
      CandidateState st = make_state(cfg, latent_dim, tex_dim, best_pose, direct, volume_size, z0);
      // copy incumbent values
      for (auto& [name, e] : st.vars.entries()) {
        e.value.value() = best.vars.get(name).value();
        e.value.zero_grad();
      }
      if (c > 0) {
        Rng jitter = root.stream("reinit", level * 1000 + c);
        const Pose node = subgrid[jitter.next() % subgrid.size()];
        auto& angles = st.vars.get("pose_angles").value();
        angles[0] = static_cast<float>(node.azimuth_deg +
                                       jitter.normal(0.0, cfg.reinit_sigma_pose_deg));
        angles[1] = static_cast<float>(node.elevation_deg +
                                       jitter.normal(0.0, cfg.reinit_sigma_pose_deg));
        for (auto& v : st.vars.get("z").value())
          v += static_cast<float>(jitter.normal(0.0, cfg.reinit_sigma_latent));
        if (st.vars.has("phi"))
          for (auto& v : st.vars.get("phi").value())
            v += static_cast<float>(jitter.normal(0.0, cfg.reinit_sigma_latent));
      }
      st.loss = best.loss;
      next.push_back(std::move(st));
    }
    states = std::move(next);
  }

  {
    const std::size_t bi = best_index();
    if (states[bi].loss < best_loss) snapshot(states[bi]);
  }
  CandidateState best = make_state(cfg, latent_dim, tex_dim, Pose{}, direct, volume_size, z0);
  for (auto& [name, e] : best.vars.entries()) e.value.value() = best_values.at(name);
  best.loss = best_loss;
  report.steps_run = steps_done;
  for (const auto& st : states) report.dropped_candidates += st.alive ? 0 : 1;
  report.best.z = best.vars.get("z").value();
  if (best.vars.has("phi")) report.best.phi = best.vars.get("phi").value();
  report.best.pose = state_pose(best);
  const auto& lv = best.vars.get("light").value();
  report.best.light = LightAngles{lv[0], lv[1], lv[2], lv[3]};
  report.best.loss = best.loss;
  report.rendered = render_best(best);
  if (direct) {
    const auto& dims = model.renderer_spec->input_dims;
    VoxelGrid g(dims[0], dims[1], dims[2], 1);
    g.data() = best.vars.get("z").value();
    report.reconstruction = std::move(g);
  } else {
    auto volume = shape_decode(*model.shape_prior, *model.shape_spec,
                               Tensor<float>::from_data({latent_dim}, best.vars.get("z").value(),
                                                        false));
    report.reconstruction = grid_from_tensor(volume);
  }
  return report;
}

}  // namespace invrender_detail

/// MAP reconstruction through the shape (and optional texture) prior.
inline ReconstructionReport reconstruct(ReconstructionProblem& problem, std::uint64_t seed) {
  return invrender_detail::run_reconstruction(problem, seed, /*direct=*/false);
}

/// Prior-free variant optimizing raw voxel occupancy in [0,1].
inline ReconstructionReport reconstruct_direct(ReconstructionProblem& problem,
                                               std::uint64_t seed) {
  return invrender_detail::run_reconstruction(problem, seed, /*direct=*/true);
}

inline nlohmann::json reconstruction_report_json(const ReconstructionReport& report,
                                                 std::optional<double> psnr_vs_truth = {},
                                                 std::optional<double> iou_vs_truth = {}) {
  nlohmann::json j;
  j["loss"] = report.best.loss;
  j["steps"] = report.steps_run;
  j["dropped_candidates"] = report.dropped_candidates;
  j["pose"] = {{"azimuth_deg", report.best.pose.azimuth_deg},
               {"elevation_deg", report.best.pose.elevation_deg},
               {"radius", report.best.pose.radius}};
  j["light"] = {{"azimuth_deg", report.best.light.azimuth_deg},
                {"elevation_deg", report.best.light.elevation_deg},
                {"ambient", report.best.light.ambient},
                {"intensity", report.best.light.intensity}};
  j["round_losses"] = report.best_loss_per_round;
  j["latent"] = report.best.z;
  if (!report.best.phi.empty()) j["texture_latent"] = report.best.phi;
  if (psnr_vs_truth) j["psnr"] = *psnr_vs_truth;
  if (iou_vs_truth) j["iou"] = *iou_vs_truth;
  return j;
}

}  // namespace voxrender
