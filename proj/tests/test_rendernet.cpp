#include <gtest/gtest.h>

#include <cmath>

#include "voxrender/gradcheck.hpp"
#include "voxrender/rendernet.hpp"
#include "voxrender/rng.hpp"

using namespace voxrender;

namespace {

VoxelGrid random_binary_grid(Rng& rng, std::size_t n) {
  VoxelGrid g(n, n, n, 1);
  for (auto& v : g.data()) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
  return g;
}

VoxelGrid smooth_blob_grid(std::size_t n, double r) {
  VoxelGrid g(n, n, n, 1);
  const double c = (n - 1.0) / 2.0;
  for (std::size_t h = 0; h < n; ++h)
    for (std::size_t w = 0; w < n; ++w)
      for (std::size_t d = 0; d < n; ++d) {
        const double dist = std::sqrt((h - c) * (h - c) + (w - c) * (w - c) + (d - c) * (d - c));
        g.at(h, w, d) = static_cast<float>(1.0 / (1.0 + std::exp(2.0 * (dist - r))));
      }
  return g;
}

// micro spec for fast training tests: 8^3 grid -> 8^2 image
RenderNetSpec micro_spec() {
  RenderNetSpec spec;
  spec.scale = 1.0;
  spec.input_dims = {8, 8, 8};
  spec.enc3d = {{4, 3, 2, 2}, {8, 3, 2, 1}};
  spec.n_res3d = 1;
  spec.n_res2d_pre = 1;
  spec.mid_conv = {8, 3, 1};
  spec.n_res2d_post = 0;
  spec.upconv = {{8, 3, 1}, {8, 4, 2}, {4, 4, 2}, {0, 3, 1}};
  spec.branches = {{"image", 1}};
  spec.dropout_p = 0.0;
  return spec;
}

}  // namespace

TEST(Spec, PaperConfigurationLedger) {
  RenderNetSpec spec = paper_rendernet_spec();
  ASSERT_EQ(spec.enc3d.size(), 3u);
  EXPECT_EQ(spec.enc3d[0].channels, 8u);
  EXPECT_EQ(spec.enc3d[1].channels, 16u);
  EXPECT_EQ(spec.enc3d[2].channels, 16u);
  EXPECT_EQ(spec.enc3d[0].kernel, 5u);
  EXPECT_EQ(spec.n_res3d, 10u);
  EXPECT_EQ(spec.n_res2d_pre, 10u);
  EXPECT_EQ(spec.n_res2d_post, 5u);
  EXPECT_EQ(spec.mid_conv.channels, 256u);
  EXPECT_EQ(spec.mid_conv.kernel, 4u);
  // 64^3 input squeezes to W x H x 32 with 16 channels at the projection
  auto proj = spec.check_shapes();
  EXPECT_EQ(proj[0], 16u);
  EXPECT_EQ(proj[1], 16u);
  EXPECT_EQ(proj[2], 32u * 16u);
}

TEST(Spec, DeskConfigurationShapeChecks) {
  RenderNetSpec spec = desk_rendernet_spec();
  auto proj = spec.check_shapes();
  EXPECT_EQ(proj[0], 8u);
  EXPECT_EQ(proj[1], 8u);
  EXPECT_EQ(proj[2], 16u * 4u);
  EXPECT_EQ(spec.output_scale(), 2u);
  auto ps = build_rendernet<float>(spec, 7);
  EXPECT_GT(ps.parameter_count(), 1000u);
}

TEST(Spec, InconsistentChainThrows) {
  RenderNetSpec spec = desk_rendernet_spec();
  spec.upconv = {{128, 4, 1}, {64, 4, 3}, {0, 4, 1}};  // up=3 not divisible by down=4
  EXPECT_THROW(spec.check_shapes(), shape_error);
}

TEST(Build, SameSeedGivesBitwiseIdenticalParameters) {
  RenderNetSpec spec = micro_spec();
  auto a = build_rendernet<float>(spec, 99);
  auto b = build_rendernet<float>(spec, 99);
  ASSERT_EQ(a.entries().size(), b.entries().size());
  for (const auto& [name, e] : a.entries()) EXPECT_EQ(e.value.value(), b.get(name).value());
  auto c = build_rendernet<float>(spec, 100);
  EXPECT_NE(a.get("enc3d.0.w").value(), c.get("enc3d.0.w").value());
}

TEST(Project, HandWeightedUnitReproducesSilhouetteSign) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    VoxelGrid g = random_binary_grid(rng, 8);
    auto x = tensor_from_grid<float>(g);
    auto w = Tensor<float>::from_data({1, 1, 8, 1}, std::vector<float>(8, 1.0f), false);
    auto b = Tensor<float>::from_data({1}, {0.0f}, false);
    auto slope = Tensor<float>::from_data({1}, {0.25f}, false);
    auto out = project(x, w, b, slope);
    ImageBuffer sil = silhouette(g);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const bool any = sil.at(i, j) > 0.0f;
        const bool positive = out.value()[i * 8 + j] > 0.0f;
        ASSERT_EQ(any, positive);
      }
  }
}

TEST(Project, ZeroWeightsGiveConstantImage) {
  VoxelGrid g(6, 6, 6, 1);
  auto x = tensor_from_grid<float>(g);
  auto w = Tensor<float>::from_data({1, 1, 6, 2}, std::vector<float>(12, 0.0f), false);
  auto b = Tensor<float>::from_data({2}, {0.7f, -0.4f}, false);
  auto slope = Tensor<float>::from_data({2}, {0.25f, 0.25f}, false);
  auto out = project(x, w, b, slope);
  for (std::size_t p = 0; p < 36; ++p) {
    EXPECT_FLOAT_EQ(out.value()[p * 2 + 0], 0.7f);
    EXPECT_FLOAT_EQ(out.value()[p * 2 + 1], 0.25f * -0.4f);
  }
}

TEST(Project, MatchesNaivePerPixelDot) {
  Rng rng(12);
  VoxelGrid g(5, 4, 3, 2);
  for (auto& v : g.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto x = tensor_from_grid<double>(g);
  const std::size_t dc = 3 * 2, K = 4;
  std::vector<double> wv(dc * K), bv(K);
  for (auto& v : wv) v = rng.uniform(-1, 1);
  for (auto& v : bv) v = rng.uniform(-1, 1);
  auto w = Tensor<double>::from_data({1, 1, dc, K}, wv, false);
  auto b = Tensor<double>::from_data({K}, bv, false);
  auto slope = Tensor<double>::from_data({K}, std::vector<double>(K, 0.3), false);
  auto out = project(x, w, b, slope);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        double acc = bv[k];
        for (std::size_t d = 0; d < 3; ++d)
          for (std::size_t c = 0; c < 2; ++c)
            acc += wv[(d * 2 + c) * K + k] * g.at(i, j, d, c);  // dc = d*C + c
        const double expected = acc > 0 ? acc : 0.3 * acc;
        EXPECT_NEAR(out.value()[(i * 4 + j) * K + k], expected, 1e-10);
      }
}

TEST(Forward, OutputIsTwiceInputAndFullyConvolutional) {
  RenderNetSpec spec = desk_rendernet_spec();
  auto ps = build_rendernet<float>(spec, 3);
  VoxelGrid g = smooth_blob_grid(32, 8.0);
  auto out = rendernet_cnn(ps, spec, tensor_from_grid<float>(g));
  ASSERT_TRUE(out.count("image"));
  EXPECT_EQ(out.at("image").shape(), (Shape{64, 64, 1}));
  // fully convolutional in H,W: inference on larger spatial dims (depth and
  // channels stay fixed by the projection unit) scales the output
  VoxelGrid big(48, 48, 32, 1);
  for (std::size_t h = 0; h < 48; ++h)
    for (std::size_t w = 0; w < 48; ++w)
      for (std::size_t d = 0; d < 32; ++d) big.at(h, w, d) = g.at(h % 32, w % 32, d);
  auto out2 = rendernet_cnn(ps, spec, tensor_from_grid<float>(big));
  EXPECT_EQ(out2.at("image").shape(), (Shape{96, 96, 1}));
}

TEST(Forward, BranchHeadsAreIndependent) {
  RenderNetSpec spec = micro_spec();
  spec.branches = {{"normal", 3}, {"albedo", 1}};
  auto ps = build_rendernet<float>(spec, 21);
  VoxelGrid g = smooth_blob_grid(8, 2.5);
  auto base = rendernet_cnn(ps, spec, tensor_from_grid<float>(g));
  // perturb a normal-head-only parameter
  ps.get("branch.normal.1.w").value()[0] += 0.5f;
  auto bumped = rendernet_cnn(ps, spec, tensor_from_grid<float>(g));
  EXPECT_EQ(base.at("albedo").value(), bumped.at("albedo").value());
  EXPECT_NE(base.at("normal").value(), bumped.at("normal").value());
}

TEST(Forward, MissingTextureChannelsRejected) {
  RenderNetSpec spec = micro_spec();
  spec.input_channels = 5;
  auto ps = build_rendernet<float>(spec, 4);
  RenderInputs inputs;
  inputs.grid = smooth_blob_grid(8, 2.0);  // only 1 channel
  inputs.pose = Pose{};
  EXPECT_THROW(rendernet_forward(ps, spec, inputs), std::invalid_argument);
}

TEST(ShadeCompose, AllOnesAlbedoEqualsClampedPhongOfPredictedNormals) {
  Rng rng(31);
  const std::size_t H = 6, W = 6;
  std::vector<float> nv(H * W * 3);
  for (auto& v : nv) v = static_cast<float>(rng.uniform(0.1, 0.9));
  auto normal = Tensor<float>::from_data({H, W, 3}, nv, false);
  auto albedo = Tensor<float>::from_data({H, W, 1}, std::vector<float>(H * W, 1.0f), false);
  LightAngles light{40.0, 55.0, 0.2, 1.0};
  auto out = shade_compose(normal, albedo, light_tensor<float>(light));
  const LightSpec ls = light.to_spec();
  for (std::size_t p = 0; p < H * W; ++p) {
    double lam = light.ambient;
    for (int k = 0; k < 3; ++k) lam += ls.direction[k] * (2.0 * nv[p * 3 + k] - 1.0);
    EXPECT_NEAR(out.value()[p], std::clamp(lam, 0.0, 1.0), 1e-6);
  }
}

TEST(ShadeCompose, GradientsMatchFiniteDifferences) {
  Rng rng(32);
  const std::size_t H = 5, W = 4;
  std::vector<double> nv(H * W * 3), av(H * W);
  for (auto& v : nv) v = rng.uniform(0.15, 0.85);
  for (auto& v : av) v = rng.uniform(0.1, 1.0);
  auto normal = Tensor<double>::from_data({H, W, 3}, nv, true);
  auto albedo = Tensor<double>::from_data({H, W, 1}, av, true);
  auto light = Tensor<double>::from_data({4}, {33.0, 48.0, 0.2, 0.9}, true);
  std::vector<double> tv(H * W);
  for (auto& v : tv) v = rng.uniform(0.0, 1.0);
  auto target = Tensor<double>::from_data({H, W, 1}, tv, false);
  auto r = grad_check<double>(
      [&] { return mse_loss(shade_compose(normal, albedo, light), target); },
      {normal, albedo, light}, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(ShadeCompose, FlippedLightSwapsLitSide) {
  // hemisphere of normals bulging toward +z, encoded to RGB
  const std::size_t N = 17;
  std::vector<float> nv(N * N * 3);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double x = (static_cast<double>(j) - 8.0) / 8.0;
      double y = (static_cast<double>(i) - 8.0) / 8.0;
      double r2 = std::min(1.0, x * x + y * y);
      double z = -std::sqrt(1.0 - r2);
      nv[(i * N + j) * 3 + 0] = static_cast<float>((x + 1) / 2);
      nv[(i * N + j) * 3 + 1] = static_cast<float>((y + 1) / 2);
      nv[(i * N + j) * 3 + 2] = static_cast<float>((z + 1) / 2);
    }
  auto normal = Tensor<float>::from_data({N, N, 3}, nv, false);
  auto albedo = Tensor<float>::from_data({N, N, 1}, std::vector<float>(N * N, 1.0f), false);
  auto lit_right = shade_compose(normal, albedo, light_tensor<float>({90.0, 0.0, 0.0, 1.0}));
  auto lit_left = shade_compose(normal, albedo, light_tensor<float>({-90.0, 0.0, 0.0, 1.0}));
  auto brightest_col = [N](const Tensor<float>& img) {
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += img.value()[i * N + j];
      if (s > best_v) {
        best_v = s;
        best = j;
      }
    }
    return best;
  };
  EXPECT_GT(brightest_col(lit_right), 8u);
  EXPECT_LT(brightest_col(lit_left), 8u);
}

TEST(CropPatch, FullFractionIsIdentity) {
  Rng rng(41);
  VoxelGrid g = smooth_blob_grid(16, 5.0);
  ImageBuffer target(32, 32, 1);
  for (auto& v : target.data()) v = static_cast<float>(rng.uniform());
  Rng crop_rng(1);
  PatchPair p = crop_patch(g, target, 1.0, crop_rng, 4, 2);
  EXPECT_EQ(p.grid.data(), g.data());
  EXPECT_EQ(p.image.data(), target.data());
}

TEST(CropPatch, DepthAndChannelsStayIntact) {
  Rng rng(42);
  VoxelGrid g(16, 16, 12, 2);
  for (auto& v : g.data()) v = static_cast<float>(rng.uniform());
  ImageBuffer target(32, 32, 1);
  Rng crop_rng(2);
  PatchPair p = crop_patch(g, target, 0.25, crop_rng, 4, 2);
  EXPECT_EQ(p.grid.depth(), 12u);
  EXPECT_EQ(p.grid.channels(), 2u);
  EXPECT_EQ(p.grid.height(), 4u);
  EXPECT_EQ(p.image.height(), 8u);
  EXPECT_EQ(p.h0 % 4, 0u);
}

TEST(CropPatch, TinyFractionRejected) {
  VoxelGrid g(16, 16, 16, 1);
  ImageBuffer target(32, 32, 1);
  Rng rng(3);
  EXPECT_THROW(crop_patch(g, target, 0.01, rng, 4, 2), std::invalid_argument);
}

TEST(CropPatch, PatchForwardMatchesFullForwardWindow) {
  // low receptive-field spec so the interior window is meaningful:
  // encoder RF 17 voxels, 1x1 projection/mid, kernel-2 up-convolutions
  RenderNetSpec spec;
  spec.scale = 1.0;
  spec.input_dims = {48, 48, 48};
  spec.enc3d = {{4, 5, 2, 2}, {8, 3, 2, 1}, {8, 3, 1, 1}};
  spec.n_res3d = 0;
  spec.n_res2d_pre = 0;
  spec.mid_conv = {16, 1, 1};
  spec.n_res2d_post = 0;
  spec.upconv = {{16, 1, 1}, {8, 2, 2}, {4, 2, 2}, {2, 2, 2}, {0, 1, 1}};
  spec.dropout_p = 0.0;
  auto ps = build_rendernet<float>(spec, 5);

  VoxelGrid g = smooth_blob_grid(48, 14.0);
  auto full = rendernet_cnn(ps, spec, tensor_from_grid<float>(g)).at("image");
  ASSERT_EQ(full.shape(), (Shape{96, 96, 1}));

  ImageBuffer dummy_target(96, 96, 1);
  Rng crop_rng(7);
  PatchPair patch = crop_patch(g, dummy_target, 0.5, crop_rng, 4, 2);
  ASSERT_EQ(patch.grid.height(), 24u);
  auto part = rendernet_cnn(ps, spec, tensor_from_grid<float>(patch.grid)).at("image");
  ASSERT_EQ(part.shape(), (Shape{48, 48, 1}));

  // encoder RF/2 = 9 input voxels -> 11-voxel exclusion covers the whole
  // net's border contamination; compare the interior window
  const std::size_t border_vox = 11;
  const std::size_t b = border_vox * 2;  // image pixels
  double max_diff = 0.0;
  std::size_t compared = 0;
  for (std::size_t i = b; i + b < 48; ++i)
    for (std::size_t j = b; j + b < 48; ++j) {
      const double full_v = full.value()[(patch.h0 * 2 + i) * 96 + (patch.w0 * 2 + j)];
      const double part_v = part.value()[i * 48 + j];
      max_diff = std::max(max_diff, std::abs(full_v - part_v));
      ++compared;
    }
  EXPECT_GT(compared, 0u);
  EXPECT_LT(max_diff, 1e-5);
}

TEST(Train, OverfitsOneSampleTenfold) {
  RenderNetSpec spec = micro_spec();
  auto ps = build_rendernet<float>(spec, 17);
  VoxelGrid world = smooth_blob_grid(8, 2.5);
  VoxelGrid cam = rigid_transform(world, Pose{30, 20, kRadiusRef});
  SurfaceMaps maps = march_visibility(cam, 0.5, 1);
  LightAngles light{20, 60, 0.2, 1.0};
  ImageBuffer target = shade_phong(maps, light.to_spec());

  std::vector<TrainSample> data{{cam, target, light}};
  TrainSchedule sched;
  sched.steps = 500;
  sched.batch = 1;
  sched.fraction_start = 1.0;
  sched.fraction_end = 1.0;
  sched.log_every = 1;
  AdamConfig adam;
  adam.learning_rate = 1e-3;
  auto log = train_rendernet(ps, spec, data, LossKind::Mse, adam, sched, 5);
  ASSERT_GE(log.size(), 2u);
  const double first = log.front().loss;
  const double last = log.back().loss;
  EXPECT_LT(last * 10.0, first);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  RenderNetSpec spec = micro_spec();
  auto ps = build_rendernet<float>(spec, 17);
  auto before = ps.get("enc3d.0.w").value();
  VoxelGrid cam = smooth_blob_grid(8, 2.5);
  ImageBuffer target(8, 8, 1);
  std::vector<TrainSample> data{{cam, target, LightAngles{}}};
  TrainSchedule sched;
  sched.steps = 3;
  sched.batch = 1;
  AdamConfig adam;
  adam.learning_rate = 0.0;
  train_rendernet(ps, spec, data, LossKind::Bce, adam, sched, 5);
  EXPECT_EQ(ps.get("enc3d.0.w").value(), before);
}

TEST(Train, SeededRunsProduceIdenticalLossCurves) {
  RenderNetSpec spec = micro_spec();
  VoxelGrid cam = smooth_blob_grid(8, 2.5);
  ImageBuffer target = silhouette(cam);
  std::vector<TrainSample> data{{cam, target, LightAngles{}}};
  TrainSchedule sched;
  sched.steps = 12;
  sched.batch = 2;
  sched.log_every = 1;
  AdamConfig adam;
  adam.learning_rate = 1e-3;
  auto ps1 = build_rendernet<float>(spec, 8);
  auto log1 = train_rendernet(ps1, spec, data, LossKind::Bce, adam, sched, 99);
  auto ps2 = build_rendernet<float>(spec, 8);
  auto log2 = train_rendernet(ps2, spec, data, LossKind::Bce, adam, sched, 99);
  ASSERT_EQ(log1.size(), log2.size());
  for (std::size_t i = 0; i < log1.size(); ++i) EXPECT_EQ(log1[i].loss, log2[i].loss);
  for (const auto& [name, e] : ps1.entries()) EXPECT_EQ(e.value.value(), ps2.get(name).value());
}

TEST(Baseline, DeskEcShapeChecksFrom16Cubed) {
  BaselineSpec spec = desk_baseline_spec(BaselineKind::EC, 16, 32);
  auto ps = build_baseline<float>(spec, 3);
  VoxelGrid g = smooth_blob_grid(16, 4.0);
  auto cond = baseline_condition<float>(Pose{30, 40, 4.0}, LightAngles{});
  auto img = baseline_forward(ps, spec, tensor_from_grid<float>(g), cond);
  EXPECT_EQ(img.shape(), (Shape{32, 32, 1}));
  for (float v : img.value()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Baseline, LatentIs200AtFullScale) {
  BaselineSpec spec;
  EXPECT_EQ(spec.latent_dim(), 200u);
  BaselineSpec desk = desk_baseline_spec(BaselineKind::EC, 16, 32);
  EXPECT_EQ(desk.latent_dim(), 50u);
}

TEST(Baseline, EcDeepHasStrictlyMoreParameters) {
  BaselineSpec ec = desk_baseline_spec(BaselineKind::EC, 16, 32);
  BaselineSpec deep = desk_baseline_spec(BaselineKind::ECDeep, 16, 32);
  auto ps_ec = build_baseline<float>(ec, 1);
  auto ps_deep = build_baseline<float>(deep, 1);
  EXPECT_GT(ps_deep.parameter_count(), ps_ec.parameter_count());
}
