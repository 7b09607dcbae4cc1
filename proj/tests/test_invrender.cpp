#include <gtest/gtest.h>

#include <cmath>

#include "voxrender/gradcheck.hpp"
#include "voxrender/invrender.hpp"

using namespace voxrender;

namespace {

VoxelGrid ellipsoid(std::size_t n, double rx, double ry, double rz) {
  VoxelGrid g(n, n, n, 1);
  const double c = (n - 1.0) / 2.0;
  for (std::size_t h = 0; h < n; ++h)
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t d = 0; d < n; ++d) {
        const double v = (h - c) * (h - c) / (ry * ry) + (w - c) * (w - c) / (rx * rx) +
                         (d - c) * (d - c) / (rz * rz);
        g.at(h, w, d) = v <= 1.0 ? 1.0f : 0.0f;
      }
  return g;
}

RenderNetSpec micro_renderer_spec() {
  RenderNetSpec spec;
  spec.scale = 1.0;
  spec.input_dims = {16, 16, 16};
  spec.enc3d = {{4, 3, 2, 2}, {8, 3, 2, 1}};
  spec.n_res3d = 1;
  spec.n_res2d_pre = 1;
  spec.mid_conv = {8, 3, 1};
  spec.n_res2d_post = 0;
  spec.upconv = {{8, 3, 1}, {8, 4, 2}, {4, 4, 2}, {4, 4, 2}, {0, 3, 1}};
  spec.dropout_p = 0.0;
  return spec;
}

ShapeAeSpec micro_ae_spec() {
  ShapeAeSpec spec;
  spec.scale = 0.125;
  spec.latent = 12;
  spec.input_dims = {16, 16, 16};
  return spec;
}

// Briefly trained micro renderer + autoencoder over two ellipsoids; enough
// structure for pose/shape signals without real training cost.
struct Fixture {
  RenderNetSpec rspec = micro_renderer_spec();
  ShapeAeSpec sspec = micro_ae_spec();
  ParamStore<float> renderer;
  ParamStore<float> shape_ae;
  std::vector<VoxelGrid> shapes;

  Fixture() {
    shapes.push_back(ellipsoid(16, 5.0, 3.0, 3.0));
    shapes.push_back(ellipsoid(16, 3.0, 5.5, 2.5));
    renderer = build_rendernet<float>(rspec, 7);
    shape_ae = build_shape_ae<float>(sspec, 9);

    std::vector<TrainSample> rdata;
    Rng rng(3);
    for (const auto& shape : shapes)
      for (int v = 0; v < 4; ++v) {
        Pose pose{rng.uniform(0, 180), rng.uniform(0, 180), kRadiusRef};
        VoxelGrid cam = rigid_transform(shape, pose);
        rdata.push_back({cam, silhouette(cam, 2), LightAngles{}});
      }
    TrainSchedule sched;
    sched.steps = 220;
    sched.batch = 2;
    sched.fraction_start = 1.0;
    sched.fraction_end = 1.0;
    AdamConfig adam;
    adam.learning_rate = 2e-3;
    train_rendernet(renderer, rspec, rdata, LossKind::Bce, adam, sched, 11);

    TrainSchedule ae_sched;
    ae_sched.steps = 250;
    ae_sched.batch = 2;
    AdamConfig ae_adam;
    ae_adam.learning_rate = 2e-3;
    train_shape_ae(shape_ae, sspec, shapes, ae_adam, ae_sched, 13);
  }

  ReconModel<float> model() {
    ReconModel<float> m;
    m.renderer = &renderer;
    m.renderer_spec = &rspec;
    m.shape_prior = &shape_ae;
    m.shape_spec = &sspec;
    return m;
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST(Metrics, PsnrBasics) {
  ImageBuffer a(4, 4, 1), b(4, 4, 1);
  a.fill(0.5f);
  b.fill(0.5f);
  EXPECT_DOUBLE_EQ(psnr(a, b), kPsnrSentinel);
  b.fill(0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);  // uniform 0.1 difference
  ImageBuffer c(5, 4, 1);
  EXPECT_THROW(psnr(a, c), std::invalid_argument);
}

TEST(Metrics, IouBasics) {
  VoxelGrid g = ellipsoid(8, 3, 3, 3);
  EXPECT_DOUBLE_EQ(iou(g, g), 1.0);
  VoxelGrid empty(8, 8, 8, 1);
  EXPECT_DOUBLE_EQ(iou(g, empty), 0.0);
  VoxelGrid left(8, 8, 8, 1), right(8, 8, 8, 1);
  left.at(1, 1, 1) = 1.0f;
  right.at(6, 6, 6) = 1.0f;
  EXPECT_DOUBLE_EQ(iou(left, right), 0.0);
}

TEST(PoseGrid, LevelZeroCoversRangesInclusive) {
  auto grid = pose_grid({0, 180}, {0, 180}, 0);
  EXPECT_EQ(grid.size(), 25u);
  bool corner00 = false, corner1 = false;
  for (const auto& p : grid) {
    corner00 = corner00 || (p.azimuth_deg == 0.0 && p.elevation_deg == 0.0);
    corner1 = corner1 || (p.azimuth_deg == 180.0 && p.elevation_deg == 180.0);
  }
  EXPECT_TRUE(corner00);
  EXPECT_TRUE(corner1);
  // chairs configuration spans the full azimuth circle
  auto chairs = pose_grid({0, 360}, {0, 180}, 0);
  double max_az = 0;
  for (const auto& p : chairs) max_az = std::max(max_az, p.azimuth_deg);
  EXPECT_DOUBLE_EQ(max_az, 360.0);
}

TEST(PoseGrid, RefinementHalvesSpacingAndKeepsCenter) {
  Pose best{67.0, 110.0, kRadiusRef};
  auto level1 = pose_grid({0, 180}, {0, 180}, 1, best);
  EXPECT_EQ(level1.size(), 9u);
  bool has_center = false;
  double spacing = 0;
  for (const auto& p : level1) {
    if (p.azimuth_deg == best.azimuth_deg && p.elevation_deg == best.elevation_deg)
      has_center = true;
    spacing = std::max(spacing, std::abs(p.azimuth_deg - best.azimuth_deg));
  }
  EXPECT_TRUE(has_center);
  EXPECT_NEAR(spacing, 45.0 / 2.0, 1e-9);
  EXPECT_THROW(pose_grid({10, 10}, {0, 180}, 0), std::invalid_argument);
}

TEST(ReconLoss, ExactRenderGivesZeroLoss) {
  auto& f = fixture();
  auto model = f.model();

  ReconVars<float> vars;
  Rng rng(5);
  std::vector<float> zv(f.sspec.latent);
  for (auto& v : zv) v = static_cast<float>(rng.uniform(-1, 1));
  vars.z = Tensor<float>::from_data({f.sspec.latent}, zv, false);
  vars.pose_angles = Tensor<float>::from_data({2}, {40.0f, 70.0f}, false);
  vars.radius = Tensor<float>::from_data({1}, {static_cast<float>(kRadiusRef)}, false);
  vars.light = light_tensor<float>(LightAngles{});

  // render the candidate itself and use it as the observation
  auto volume = shape_decode(f.shape_ae, f.sspec, vars.z);
  auto cam = rigid_transform_op(volume, concat(vars.pose_angles, vars.radius, 0));
  auto image = rendernet_cnn(f.renderer, f.rspec, cam).at("image");
  auto observed = image_from_tensor(image);

  ReconstructionConfig cfg;
  auto loss = recon_loss(model, tensor_from_image<float>(observed), vars, cfg);
  EXPECT_LT(loss.item(), 1e-9);
}

TEST(ReconLoss, PriorTermVanishesAtMean) {
  auto& f = fixture();
  Rng rng(6);
  std::vector<std::vector<double>> latents(8, std::vector<double>(f.sspec.latent));
  for (auto& z : latents)
    for (auto& v : z) v = rng.normal(0, 1);
  LatentStats stats = latent_stats(latents);
  std::vector<double> mu(stats.mean);
  EXPECT_NEAR(stats.mahalanobis_sq(mu), 0.0, 1e-12);
}

TEST(ReconLoss, GradientsMatchFiniteDifferencesInDouble) {
  auto& f = fixture();
  auto renderer_d = f.renderer.cast<double>();
  auto shape_d = f.shape_ae.cast<double>();
  // freeze model parameters; only the reconstruction variables get gradients
  for (auto& [name, e] : renderer_d.entries()) e.value.node()->requires_grad = false;
  for (auto& [name, e] : shape_d.entries()) e.value.node()->requires_grad = false;

  Rng rng(7);
  std::vector<std::vector<double>> latents(14, std::vector<double>(f.sspec.latent));
  for (auto& z : latents)
    for (auto& v : z) v = rng.normal(0, 1);
  LatentStats stats = latent_stats(latents);

  ReconModel<double> model;
  model.renderer = &renderer_d;
  model.renderer_spec = &f.rspec;
  model.shape_prior = &shape_d;
  model.shape_spec = &f.sspec;
  model.stats = &stats;

  ReconVars<double> vars;
  std::vector<double> zv(f.sspec.latent);
  for (auto& v : zv) v = rng.uniform(-1, 1);
  vars.z = Tensor<double>::from_data({f.sspec.latent}, zv, true);
  vars.pose_angles = Tensor<double>::from_data({2}, {52.0, 101.0}, true);
  vars.radius = Tensor<double>::from_data({1}, {kRadiusRef}, true);
  vars.light = Tensor<double>::from_data({4}, {10.0, 70.0, 0.2, 1.0}, true);

  ImageBuffer observed(32, 32, 1);
  Rng orng(9);
  for (auto& v : observed.data()) v = static_cast<float>(orng.uniform());
  auto observed_t = tensor_from_image<double>(observed);

  ReconstructionConfig cfg;
  auto r = grad_check<double>(
      [&] { return recon_loss(model, observed_t, vars, cfg); },
      {vars.z, vars.pose_angles, vars.radius}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Reconstruct, ZeroStepsReturnsBestGridCandidate) {
  auto& f = fixture();
  VoxelGrid cam = rigid_transform(f.shapes[0], Pose{45, 90, kRadiusRef});
  ReconstructionProblem problem;
  problem.observed = silhouette(cam, 2);
  problem.model = f.model();
  problem.config.max_steps = 0;
  problem.config.n_restarts = 3;
  auto report = reconstruct(problem, 1);
  EXPECT_EQ(report.steps_run, 0u);
  // pose must be a level-0 grid node: multiples of 45 degrees
  EXPECT_NEAR(std::fmod(report.best.pose.azimuth_deg, 45.0), 0.0, 1e-9);
  EXPECT_NEAR(std::fmod(report.best.pose.elevation_deg, 45.0), 0.0, 1e-9);
  // latent unmodified (zero init without stats)
  for (float v : report.best.z) EXPECT_EQ(v, 0.0f);
}

TEST(Reconstruct, SelfReconstructionFindsPoseNearTruth) {
  auto& f = fixture();
  // ground truth: a latent the AE can realize, a pose near a grid node
  auto z_true_t = shape_encode(f.shape_ae, f.sspec, tensor_from_grid<float>(f.shapes[0]));
  std::vector<float> z_true = z_true_t.value();
  const Pose pose_true{49.0, 92.0, kRadiusRef};

  auto volume = shape_decode(f.shape_ae, f.sspec,
                             Tensor<float>::from_data({f.sspec.latent}, z_true, false));
  auto cam = rigid_transform_op(volume, tensor_from_pose<float>(pose_true));
  ImageBuffer observed = image_from_tensor(rendernet_cnn(f.renderer, f.rspec, cam).at("image"));

  // z initialized at the truth via the latent-stats mean
  std::vector<std::vector<double>> init{std::vector<double>(z_true.begin(), z_true.end())};
  LatentStats stats = latent_stats(init);

  ReconstructionProblem problem;
  problem.observed = observed;
  problem.model = f.model();
  problem.model.stats = &stats;
  problem.config.alpha = 1.0;
  problem.config.beta = 0.0;
  problem.config.n_restarts = 3;
  problem.config.reinit_every = 60;
  problem.config.max_steps = 180;
  auto report = reconstruct(problem, 4);

  // monotone best loss across rounds
  for (std::size_t i = 1; i < report.best_loss_per_round.size(); ++i)
    EXPECT_LE(report.best_loss_per_round[i], report.best_loss_per_round[i - 1] + 1e-12);
  ASSERT_GE(report.best_loss_per_round.size(), 1u);
  // final loss no worse than the grid initialization
  EXPECT_LE(report.best.loss, report.best_loss_per_round.front() + 1e-12);
  // pose error within half the level-0 grid spacing (45/2 deg)
  EXPECT_LE(std::abs(report.best.pose.azimuth_deg - pose_true.azimuth_deg), 22.5);
  EXPECT_LE(std::abs(report.best.pose.elevation_deg - pose_true.elevation_deg), 22.5);
}

TEST(Reconstruct, LargeBetaPinsLatentToMean) {
  auto& f = fixture();
  Rng rng(10);
  std::vector<std::vector<double>> latents(6, std::vector<double>(f.sspec.latent));
  for (auto& z : latents)
    for (auto& v : z) v = rng.normal(0.5, 0.3);
  LatentStats stats = latent_stats(latents);

  VoxelGrid cam = rigid_transform(f.shapes[1], Pose{90, 45, kRadiusRef});
  ImageBuffer observed = silhouette(cam, 2);

  auto run = [&](double beta) {
    ReconstructionProblem problem;
    problem.observed = observed;
    problem.model = f.model();
    problem.model.stats = &stats;
    problem.config.alpha = 1.0;
    problem.config.beta = beta;
    problem.config.n_restarts = 2;
    problem.config.reinit_every = 50;
    problem.config.max_steps = 100;
    auto report = reconstruct(problem, 3);
    double dist = 0.0;
    for (std::size_t i = 0; i < report.best.z.size(); ++i) {
      const double d = report.best.z[i] - stats.mean[i];
      dist += d * d;
    }
    return std::sqrt(dist);
  };
  const double far_dist = run(0.0);
  const double pinned_dist = run(1e6);
  EXPECT_LT(pinned_dist, far_dist);
  EXPECT_LT(pinned_dist, 0.05);
}

TEST(ReconstructDirect, ClampsVoxelsAndIsDeterministic) {
  auto& f = fixture();
  VoxelGrid cam = rigid_transform(f.shapes[0], Pose{30, 60, kRadiusRef});
  ImageBuffer observed = silhouette(cam, 2);

  auto run = [&] {
    ReconstructionProblem problem;
    problem.observed = observed;
    problem.model = f.model();
    problem.config.n_restarts = 2;
    problem.config.reinit_every = 30;
    problem.config.max_steps = 60;
    problem.config.lr_scale_latent = 0.2;
    return reconstruct_direct(problem, 21);
  };
  auto a = run();
  for (float v : a.reconstruction.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  auto b = run();
  EXPECT_EQ(a.best.loss, b.best.loss);
  EXPECT_EQ(a.reconstruction.data(), b.reconstruction.data());
  EXPECT_EQ(a.best.pose.azimuth_deg, b.best.pose.azimuth_deg);
}

TEST(Report, JsonCarriesPoseAndLosses) {
  ReconstructionReport report;
  report.best.pose = Pose{10, 20, 4.0};
  report.best.z = {0.5f, -0.25f};
  report.best.loss = 0.125;
  report.best_loss_per_round = {0.5, 0.25, 0.125};
  report.steps_run = 600;
  auto j = reconstruction_report_json(report, 24.0, 0.7);
  EXPECT_DOUBLE_EQ(j["pose"]["azimuth_deg"].get<double>(), 10.0);
  EXPECT_EQ(j["round_losses"].size(), 3u);
  EXPECT_DOUBLE_EQ(j["psnr"].get<double>(), 24.0);
  EXPECT_DOUBLE_EQ(j["iou"].get<double>(), 0.7);
}
