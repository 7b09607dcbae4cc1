// End-to-end exercises of the command-line surface via subprocesses.
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "voxrender/config.hpp"
#include "voxrender/dataset.hpp"

using namespace voxrender;
namespace fs = std::filesystem;

#ifndef VOXRENDER_CLI
#error "VOXRENDER_CLI must point at the built binary"
#endif

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(VOXRENDER_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "voxrender_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string micro_config_path() {
  static std::string path = [] {
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
    ShapeAeSpec ae;
    ae.scale = 0.125;
    ae.latent = 12;
    ae.input_dims = {16, 16, 16};
    nlohmann::json cfg;
    cfg["rendernet"] = to_json(spec);
    cfg["shape_ae"] = to_json(ae);
    cfg["recon"] = to_json(ReconstructionConfig{});
    fs::path p = work_dir() / "micro_config.json";
    save_json_file(cfg, p);
    return p.string();
  }();
  return path;
}

}  // namespace

TEST(Cli, GenShapesIsDeterministic) {
  auto dir = work_dir();
  ASSERT_EQ(run("gen-shapes --out " + (dir / "shapes_a").string() +
                " --n 3 --family a --resolution 16 --seed 5"),
            0);
  ASSERT_EQ(run("gen-shapes --out " + (dir / "shapes_b").string() +
                " --n 3 --family a --resolution 16 --seed 5"),
            0);
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "shape_%04d.vxg", i);
    std::ifstream fa(dir / "shapes_a" / name, std::ios::binary);
    std::ifstream fb(dir / "shapes_b" / name, std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
  }
}

TEST(Cli, GenDatasetWritesManifest) {
  auto dir = work_dir();
  ASSERT_EQ(run("gen-dataset --shapes " + (dir / "shapes_a").string() + " --out " +
                (dir / "data").string() + " --style silhouette --style phong --views 2 --seed 3"),
            0);
  DatasetManifest m = DatasetManifest::load(dir / "data" / "manifest.json");
  EXPECT_EQ(m.samples.size(), 6u);
  EXPECT_EQ(m.styles.size(), 2u);
}

TEST(Cli, RenderRefWritesImages) {
  auto dir = work_dir();
  ASSERT_EQ(run("render-ref --grid " + (dir / "shapes_a" / "shape_0000.vxg").string() +
                " --style phong --az 40 --el 60 --out " + (dir / "ref.png").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "ref.png"));
  EXPECT_TRUE(fs::exists(dir / "ref.pfm"));
}

TEST(Cli, TrainZeroStepsWritesCheckpoint) {
  auto dir = work_dir();
  ASSERT_EQ(run("train --config " + micro_config_path() + " --data " + (dir / "data").string() +
                " --style silhouette --steps 0 --out " + (dir / "run0").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "run0" / "rendernet.vckp"));
  EXPECT_TRUE(fs::exists(dir / "run0" / "train_log.csv"));
}

TEST(Cli, TrainRenderEvalRoundTrip) {
  auto dir = work_dir();
  ASSERT_EQ(run("train --config " + micro_config_path() + " --data " + (dir / "data").string() +
                " --style silhouette --steps 6 --batch 2 --seed 2 --out " +
                (dir / "run1").string()),
            0);
  ASSERT_EQ(run("render --config " + micro_config_path() + " --checkpoint " +
                (dir / "run1" / "rendernet.vckp").string() + " --grid " +
                (dir / "shapes_a" / "shape_0000.vxg").string() + " --az 30 --el 45 --out " +
                (dir / "render.png").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "render_image.png"));
  ASSERT_EQ(run("eval --config " + micro_config_path() + " --checkpoint " +
                (dir / "run1" / "rendernet.vckp").string() + " --data " +
                (dir / "data").string() + " --style silhouette --out " +
                (dir / "eval.csv").string()),
            0);
  std::ifstream csv(dir / "eval.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "sample,style,psnr");
}

TEST(Cli, ReconstructProducesReport) {
  auto dir = work_dir();
  ASSERT_EQ(run("train --kind shape-ae --config " + micro_config_path() + " --data " +
                (dir / "shapes_a").string() + " --steps 4 --batch 2 --out " +
                (dir / "ae").string()),
            0);
  ASSERT_EQ(run("reconstruct --config " + micro_config_path() + " --renderer-checkpoint " +
                (dir / "run1" / "rendernet.vckp").string() + " --ae-checkpoint " +
                (dir / "ae" / "shape_ae.vckp").string() + " --image " +
                (dir / "ref.pfm").string() + " --out " + (dir / "recon").string() +
                " --steps 4 --restarts 2 --seed 1"),
            0);
  EXPECT_TRUE(fs::exists(dir / "recon" / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "recon" / "reconstruction.png"));
  EXPECT_TRUE(fs::exists(dir / "recon" / "reconstruction.vxg"));
}

TEST(Cli, GradcheckPassesAtSpecTolerance) {
  EXPECT_EQ(run("gradcheck --tol 1e-5 --precision double --probes 10"), 0);
  EXPECT_NE(run("gradcheck --tol 1e-30 --precision double --probes 4"), 0);
}

TEST(Cli, UnreadableInputsExitTwo) {
  auto dir = work_dir();
  EXPECT_EQ(run("render --config /nonexistent.json --checkpoint x --grid y --out " +
                (dir / "x.png").string()),
            2);
  EXPECT_EQ(run("eval --config " + micro_config_path() + " --checkpoint /nonexistent.vckp "
                "--data " + (dir / "data").string()),
            2);
}

TEST(Cli, EvalOfTargetAgainstItselfHitsSentinel) {
  // rendered-by-definition: psnr(img, img) must report the 99 dB sentinel
  ImageBuffer img(8, 8, 1);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(i % 5) / 5.0f;
  EXPECT_DOUBLE_EQ(psnr(img, img), 99.0);
}
