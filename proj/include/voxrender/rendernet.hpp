// RenderNet assembly: 3-D encoder, projection unit, 2-D decoder with
// multi-branch heads, the differentiable shading head, patch training, and
// the EC / EC-Deep encoder-decoder baselines.
//
// Channel counts in the specs are full-scale values; `scale` multiplies them
// (floor at 1), which is the desk-scale knob. At scale 1 with a 64^3 input
// the default spec reproduces the reference architecture exactly: encoder
// channels {8,16,16}, kernels {5,3,3}, spatial strides {2,2,1} with depth
// strides {2,1,1} (so a 64^3 input squeezes to W x H x (32*16) at the
// projection), ten 3-D and ten 2-D residual blocks, a 4x4 convolution with
// 256 channels, five more residual blocks, and up-convolutions with channels
// {128,64,32,16,out}, kernels 4, strides {1,2,2,2,1}.
//
// Branches share everything up to (and including) the last layer before the
// first strided up-convolution; from that layer on, each named head owns its
// weights. Dropout follows every convolution except those inside residual
// blocks and each branch's output layer.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxrender/adam.hpp"
#include "voxrender/image.hpp"
#include "voxrender/nn.hpp"
#include "voxrender/parallel.hpp"
#include "voxrender/refshade.hpp"
#include "voxrender/rng.hpp"
#include "voxrender/tensor.hpp"
#include "voxrender/voxel_ops.hpp"

namespace voxrender {

struct Conv3dDef {
  std::size_t channels = 0;  // full-scale; multiplied by spec.scale
  std::size_t kernel = 3;
  std::size_t stride_hw = 1;
  std::size_t stride_d = 1;
};

struct Conv2dDef {
  std::size_t channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

struct BranchDef {
  std::string name;
  std::size_t channels = 1;  // output channels, not scaled
};

struct LightAngles {
  double azimuth_deg = 0.0;
  double elevation_deg = 60.0;
  double ambient = 0.2;
  double intensity = 1.0;

  LightSpec to_spec() const {
    return LightSpec::from_angles(azimuth_deg, elevation_deg, ambient, intensity);
  }
};

struct RenderNetSpec {
  double scale = 1.0;
  std::size_t input_channels = 1;
  std::array<std::size_t, 3> input_dims{64, 64, 64};
  std::vector<Conv3dDef> enc3d{{8, 5, 2, 2}, {16, 3, 2, 1}, {16, 3, 1, 1}};
  std::size_t n_res3d = 10;
  std::size_t projection_channels = 0;  // 0 = D*C at the projection point
  std::size_t n_res2d_pre = 10;
  Conv2dDef mid_conv{256, 4, 1};
  std::size_t n_res2d_post = 5;
  std::vector<Conv2dDef> upconv{{128, 4, 1}, {64, 4, 2}, {32, 4, 2}, {16, 4, 2}, {0, 4, 1}};
  std::vector<BranchDef> branches{{"image", 1}};
  double dropout_p = 0.5;

  std::size_t scaled(std::size_t base) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(base * scale)));
  }

  std::size_t first_strided_up() const {
    for (std::size_t i = 0; i < upconv.size(); ++i)
      if (upconv[i].stride > 1) return i;
    return upconv.size();
  }

  /// Image dims per grid dims, from the stride ledger.
  std::size_t output_scale() const {
    std::size_t down = 1, up = 1;
    for (const auto& l : enc3d) down *= l.stride_hw;
    for (const auto& l : upconv) up *= l.stride;
    check_shape(up % down == 0, "RenderNetSpec: upconv strides must cover encoder strides");
    return up / down;
  }

  /// Walks the shape ledger; throws shape_error on an inconsistent chain.
  /// Returns (squeezed projection input dims HxWx(D*C)).
  std::array<std::size_t, 3> check_shapes() const {
    check_shape(!enc3d.empty() && !upconv.empty() && !branches.empty(),
                "RenderNetSpec: empty layer chain");
    std::size_t h = input_dims[0], w = input_dims[1], d = input_dims[2];
    for (const auto& l : enc3d) {
      check_shape(l.stride_hw >= 1 && l.stride_d >= 1 && l.channels >= 1,
                  "RenderNetSpec: bad encoder layer");
      h = (h + l.stride_hw - 1) / l.stride_hw;
      w = (w + l.stride_hw - 1) / l.stride_hw;
      d = (d + l.stride_d - 1) / l.stride_d;
    }
    const std::size_t dc = d * scaled(enc3d.back().channels);
    check_shape(dc >= 1, "RenderNetSpec: empty projection input");
    check_shape(upconv.back().stride == 1, "RenderNetSpec: final up-convolution must be stride 1");
    output_scale();
    return {h, w, dc};
  }
};

/// Desk-scale default: 32^3 grids -> 64^2 images at channel multiplier 1/4
/// with residual-block counts {4,4,2}.
inline RenderNetSpec desk_rendernet_spec(std::size_t grid = 32, std::size_t input_channels = 1) {
  RenderNetSpec spec;
  spec.scale = 0.25;
  spec.input_dims = {grid, grid, grid};
  spec.input_channels = input_channels;
  spec.n_res3d = 4;
  spec.n_res2d_pre = 4;
  spec.n_res2d_post = 2;
  spec.dropout_p = 0.1;
  return spec;
}

/// Full-scale reference configuration (kept expressible for fidelity tests).
inline RenderNetSpec paper_rendernet_spec(std::size_t out_channels = 1) {
  RenderNetSpec spec;
  spec.branches = {{"image", out_channels}};
  return spec;
}

namespace rn_detail {

template <class T>
Tensor<T> conv_block3d(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x,
                       const Conv3dDef& def) {
  auto y = conv3d(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), def.stride_hw, def.stride_d);
  return prelu(y, ps.get(prefix + ".slope"));
}

template <class T>
Tensor<T> res_block3d(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
  auto y = conv3d(x, ps.get(prefix + ".conv1.w"), ps.get(prefix + ".conv1.b"), 1, 1);
  y = prelu(y, ps.get(prefix + ".slope"));
  y = conv3d(y, ps.get(prefix + ".conv2.w"), ps.get(prefix + ".conv2.b"), 1, 1);
  return add(x, y);
}

template <class T>
Tensor<T> res_block2d(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
  auto y = conv2d(x, ps.get(prefix + ".conv1.w"), ps.get(prefix + ".conv1.b"), 1);
  y = prelu(y, ps.get(prefix + ".slope"));
  y = conv2d(y, ps.get(prefix + ".conv2.w"), ps.get(prefix + ".conv2.b"), 1);
  return add(x, y);
}

template <class T>
void add_conv3d(ParamStore<T>& ps, const std::string& prefix, std::size_t k, std::size_t cin,
                std::size_t cout, Rng& rng) {
  ps.add(prefix + ".w", he_init<T>({k, k, k, cin, cout}, k * k * k * cin, rng));
  ps.add(prefix + ".b", Tensor<T>::leaf({cout}));
  ps.add(prefix + ".slope", Tensor<T>::from_data({cout}, std::vector<T>(cout, T(0.25)), true));
}

template <class T>
void add_res3d(ParamStore<T>& ps, const std::string& prefix, std::size_t c, Rng& rng) {
  ps.add(prefix + ".conv1.w", he_init<T>({3, 3, 3, c, c}, 27 * c, rng));
  ps.add(prefix + ".conv1.b", Tensor<T>::leaf({c}));
  ps.add(prefix + ".slope", Tensor<T>::from_data({c}, std::vector<T>(c, T(0.25)), true));
  ps.add(prefix + ".conv2.w", he_init<T>({3, 3, 3, c, c}, 27 * c, rng));
  ps.add(prefix + ".conv2.b", Tensor<T>::leaf({c}));
}

template <class T>
void add_conv2d(ParamStore<T>& ps, const std::string& prefix, std::size_t k, std::size_t cin,
                std::size_t cout, Rng& rng, bool transpose = false, bool with_slope = true) {
  if (transpose)
    ps.add(prefix + ".w", he_init<T>({k, k, cout, cin}, k * k * cin, rng));
  else
    ps.add(prefix + ".w", he_init<T>({k, k, cin, cout}, k * k * cin, rng));
  ps.add(prefix + ".b", Tensor<T>::leaf({cout}));
  if (with_slope)
    ps.add(prefix + ".slope", Tensor<T>::from_data({cout}, std::vector<T>(cout, T(0.25)), true));
}

template <class T>
void add_res2d(ParamStore<T>& ps, const std::string& prefix, std::size_t c, Rng& rng) {
  ps.add(prefix + ".conv1.w", he_init<T>({3, 3, c, c}, 9 * c, rng));
  ps.add(prefix + ".conv1.b", Tensor<T>::leaf({c}));
  ps.add(prefix + ".slope", Tensor<T>::from_data({c}, std::vector<T>(c, T(0.25)), true));
  ps.add(prefix + ".conv2.w", he_init<T>({3, 3, c, c}, 9 * c, rng));
  ps.add(prefix + ".conv2.b", Tensor<T>::leaf({c}));
}

}  // namespace rn_detail

/// Creates and He-initializes all RenderNet parameters; deterministic per seed.
template <class T = float>
ParamStore<T> build_rendernet(const RenderNetSpec& spec, std::uint64_t seed) {
  spec.check_shapes();
  ParamStore<T> ps;
  Rng rng = Rng(seed).stream("init");
  std::size_t cin = spec.input_channels;
  for (std::size_t i = 0; i < spec.enc3d.size(); ++i) {
    const auto& l = spec.enc3d[i];
    const std::size_t cout = spec.scaled(l.channels);
    rn_detail::add_conv3d(ps, "enc3d." + std::to_string(i), l.kernel, cin, cout, rng);
    cin = cout;
  }
  for (std::size_t i = 0; i < spec.n_res3d; ++i)
    rn_detail::add_res3d(ps, "res3d." + std::to_string(i), cin, rng);

  const auto proj_in = spec.check_shapes();
  const std::size_t dc = proj_in[2];
  const std::size_t K = spec.projection_channels ? spec.projection_channels : dc;
  rn_detail::add_conv2d(ps, "project", 1, dc, K, rng);

  std::size_t c2 = K;
  for (std::size_t i = 0; i < spec.n_res2d_pre; ++i)
    rn_detail::add_res2d(ps, "res2d_pre." + std::to_string(i), c2, rng);
  {
    const std::size_t cout = spec.scaled(spec.mid_conv.channels);
    rn_detail::add_conv2d(ps, "mid", spec.mid_conv.kernel, c2, cout, rng);
    c2 = cout;
  }
  for (std::size_t i = 0; i < spec.n_res2d_post; ++i)
    rn_detail::add_res2d(ps, "res2d_post." + std::to_string(i), c2, rng);

  const std::size_t split = spec.first_strided_up();
  std::size_t cshared = c2;
  for (std::size_t i = 0; i < split; ++i) {
    const auto& l = spec.upconv[i];
    const std::size_t cout = spec.scaled(l.channels);
    rn_detail::add_conv2d(ps, "up." + std::to_string(i), l.kernel, cshared, cout, rng,
                          l.stride > 1);
    cshared = cout;
  }
  for (const auto& branch : spec.branches) {
    std::size_t cb = cshared;
    for (std::size_t i = split; i < spec.upconv.size(); ++i) {
      const auto& l = spec.upconv[i];
      const bool last = i + 1 == spec.upconv.size();
      const std::size_t cout = last ? branch.channels : spec.scaled(l.channels);
      rn_detail::add_conv2d(ps, "branch." + branch.name + "." + std::to_string(i), l.kernel, cb,
                            cout, rng, l.stride > 1, /*with_slope=*/!last);
      cb = cout;
    }
  }
  return ps;
}

/// Projection unit: squeeze [H,W,D,C] to [H,W,D*C] (dc = d*C + c) and apply
/// a per-pixel affine map over the squeezed axis as a 1x1 convolution,
/// followed by PReLU.
template <class T>
Tensor<T> project(const Tensor<T>& features, const Tensor<T>& weights, const Tensor<T>& bias,
                  const Tensor<T>& slope) {
  check_shape(features.shape().size() == 4, "project: features must be [H,W,D,C]");
  const std::size_t H = features.shape()[0], W = features.shape()[1];
  const std::size_t dc = features.shape()[2] * features.shape()[3];
  auto squeezed = reshape(features, {H, W, dc});
  return prelu(conv2d(squeezed, weights, bias, 1), slope);
}

struct ForwardOptions {
  bool training = false;
  Rng dropout_rng = Rng(0);
  double dropout_p = -1.0;  // <0: take the spec value
};

/// CNN stack on a camera-space feature volume; returns one tensor per branch.
template <class T>
std::map<std::string, Tensor<T>> rendernet_cnn(ParamStore<T>& ps, const RenderNetSpec& spec,
                                               const Tensor<T>& camera_grid,
                                               const ForwardOptions& opts = {}) {
  check_shape(camera_grid.shape().size() == 4 &&
                  camera_grid.shape()[3] == spec.input_channels,
              "rendernet_cnn: input must be [H,W,D,input_channels]");
  const double p = opts.dropout_p >= 0 ? opts.dropout_p : spec.dropout_p;
  Rng rng = opts.dropout_rng;
  auto drop = [&](Tensor<T> x, const std::string& tag) {
    return dropout(x, p, opts.training, rng.stream(tag));
  };

  Tensor<T> x = camera_grid;
  for (std::size_t i = 0; i < spec.enc3d.size(); ++i) {
    x = rn_detail::conv_block3d(ps, "enc3d." + std::to_string(i), x, spec.enc3d[i]);
    x = drop(x, "enc3d." + std::to_string(i));
  }
  for (std::size_t i = 0; i < spec.n_res3d; ++i)
    x = rn_detail::res_block3d(ps, "res3d." + std::to_string(i), x);

  Tensor<T> y = project(x, ps.get("project.w"), ps.get("project.b"), ps.get("project.slope"));
  y = drop(y, "project");

  for (std::size_t i = 0; i < spec.n_res2d_pre; ++i)
    y = rn_detail::res_block2d(ps, "res2d_pre." + std::to_string(i), y);
  y = prelu(conv2d(y, ps.get("mid.w"), ps.get("mid.b"), spec.mid_conv.stride),
            ps.get("mid.slope"));
  y = drop(y, "mid");
  for (std::size_t i = 0; i < spec.n_res2d_post; ++i)
    y = rn_detail::res_block2d(ps, "res2d_post." + std::to_string(i), y);

  const std::size_t split = spec.first_strided_up();
  for (std::size_t i = 0; i < split; ++i) {
    const auto& l = spec.upconv[i];
    const std::string prefix = "up." + std::to_string(i);
    y = l.stride > 1 ? conv2d_transpose(y, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride)
                     : conv2d(y, ps.get(prefix + ".w"), ps.get(prefix + ".b"), 1);
    y = prelu(y, ps.get(prefix + ".slope"));
    y = drop(y, prefix);
  }

  std::map<std::string, Tensor<T>> out;
  for (const auto& branch : spec.branches) {
    Tensor<T> z = y;
    for (std::size_t i = split; i < spec.upconv.size(); ++i) {
      const auto& l = spec.upconv[i];
      const bool last = i + 1 == spec.upconv.size();
      const std::string prefix = "branch." + branch.name + "." + std::to_string(i);
      z = l.stride > 1
              ? conv2d_transpose(z, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride)
              : conv2d(z, ps.get(prefix + ".w"), ps.get(prefix + ".b"), 1);
      if (last) {
        z = sigmoid(z);
      } else {
        z = prelu(z, ps.get(prefix + ".slope"));
        z = drop(z, prefix);
      }
    }
    out.emplace(branch.name, std::move(z));
  }
  return out;
}

/// Differentiable shading head. Decodes normals from RGB (n = 2rgb - 1),
/// lights them with light = [az_deg, el_deg, ambient, intensity] and
/// multiplies into the albedo branch:
///   I_c = albedo_c * color_c * min(1, intensity * max(0, l.n + ambient)).
/// Gradients flow into the normal branch, the albedo branch and the light.
template <class T>
Tensor<T> shade_compose(const Tensor<T>& normal_rgb, const Tensor<T>& albedo,
                        const Tensor<T>& light, std::array<double, 3> color = {1.0, 1.0, 1.0}) {
  check_shape(normal_rgb.shape().size() == 3 && normal_rgb.shape()[2] == 3,
              "shade_compose: normal branch must be [H,W,3]");
  check_shape(albedo.shape().size() == 3 && albedo.shape()[0] == normal_rgb.shape()[0] &&
                  albedo.shape()[1] == normal_rgb.shape()[1],
              "shade_compose: branches must be spatially aligned");
  check_shape(light.size() == 4, "shade_compose: light must be [az, el, ambient, intensity]");

  const std::size_t H = albedo.shape()[0], W = albedo.shape()[1], C = albedo.shape()[2];
  const double az = deg2rad(static_cast<double>(light.value()[0]));
  const double el = deg2rad(static_cast<double>(light.value()[1]));
  const double amb = static_cast<double>(light.value()[2]);
  const double inten = static_cast<double>(light.value()[3]);
  const std::array<double, 3> l{std::cos(el) * std::sin(az), std::sin(el),
                                -std::cos(el) * std::cos(az)};

  std::vector<T> out(H * W * C);
  for (std::size_t pix = 0; pix < H * W; ++pix) {
    double lam = amb;
    for (int k = 0; k < 3; ++k)
      lam += l[k] * (2.0 * static_cast<double>(normal_rgb.value()[pix * 3 + k]) - 1.0);
    const double s = std::min(1.0, inten * std::max(0.0, lam));
    for (std::size_t c = 0; c < C; ++c)
      out[pix * C + c] =
          static_cast<T>(static_cast<double>(albedo.value()[pix * C + c]) * color[c] * s);
  }

  auto nn_ = normal_rgb.node();
  auto an_ = albedo.node();
  auto ln_ = light.node();
  return Tensor<T>::op(
      albedo.shape(), std::move(out), {normal_rgb, albedo, light},
      [nn_, an_, ln_, H, W, C, color](auto& node) {
        const double az = deg2rad(static_cast<double>(ln_->value[0]));
        const double el = deg2rad(static_cast<double>(ln_->value[1]));
        const double amb = static_cast<double>(ln_->value[2]);
        const double inten = static_cast<double>(ln_->value[3]);
        const double k = kPi / 180.0;
        const std::array<double, 3> l{std::cos(el) * std::sin(az), std::sin(el),
                                      -std::cos(el) * std::cos(az)};
        const std::array<double, 3> dl_daz{std::cos(el) * std::cos(az) * k, 0.0,
                                           std::cos(el) * std::sin(az) * k};
        const std::array<double, 3> dl_del{-std::sin(el) * std::sin(az) * k, std::cos(el) * k,
                                           std::sin(el) * std::cos(az) * k};
        if (nn_->requires_grad) nn_->ensure_grad();
        if (an_->requires_grad) an_->ensure_grad();
        if (ln_->requires_grad) ln_->ensure_grad();
        for (std::size_t pix = 0; pix < H * W; ++pix) {
          double lam = amb;
          std::array<double, 3> n;
          for (int j = 0; j < 3; ++j) {
            n[j] = 2.0 * static_cast<double>(nn_->value[pix * 3 + j]) - 1.0;
            lam += l[j] * n[j];
          }
          const double relu_lam = std::max(0.0, lam);
          const double s_raw = inten * relu_lam;
          const double s = std::min(1.0, s_raw);
          const bool active = lam > 0.0 && s_raw < 1.0;
          // accumulate d loss / d s across albedo channels
          double gs = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double go = static_cast<double>(node.grad[pix * C + c]);
            if (go == 0.0) continue;
            const double ac = static_cast<double>(an_->value[pix * C + c]) * color[c];
            if (an_->requires_grad)
              an_->grad[pix * C + c] += static_cast<T>(go * color[c] * s);
            gs += go * ac;
          }
          if (gs == 0.0) continue;
          if (active) {
            const double glam = gs * inten;
            if (nn_->requires_grad)
              for (int j = 0; j < 3; ++j)
                nn_->grad[pix * 3 + j] += static_cast<T>(glam * l[j] * 2.0);
            if (ln_->requires_grad) {
              double daz = 0.0, del = 0.0;
              for (int j = 0; j < 3; ++j) {
                daz += dl_daz[j] * n[j];
                del += dl_del[j] * n[j];
              }
              ln_->grad[0] += static_cast<T>(glam * daz);
              ln_->grad[1] += static_cast<T>(glam * del);
              ln_->grad[2] += static_cast<T>(glam);
            }
          }
          if (ln_->requires_grad && s_raw < 1.0)
            ln_->grad[3] += static_cast<T>(gs * relu_lam);
        }
      });
}

template <class T>
Tensor<T> light_tensor(const LightAngles& light, bool requires_grad = false) {
  return Tensor<T>::from_data({4},
                              {static_cast<T>(light.azimuth_deg),
                               static_cast<T>(light.elevation_deg),
                               static_cast<T>(light.ambient), static_cast<T>(light.intensity)},
                              requires_grad);
}

struct RenderInputs {
  VoxelGrid grid;
  Pose pose;
  LightAngles light;                 // used by shading-composed styles
  const VoxelGrid* texture = nullptr;  // optional, concatenated on channels
};

/// Full inference path: pose transform, CNN, per-branch images. When the
/// spec has "normal"+"albedo" branches a "shaded" composition is added.
template <class T = float>
std::map<std::string, ImageBuffer> rendernet_forward(ParamStore<T>& ps,
                                                     const RenderNetSpec& spec,
                                                     const RenderInputs& inputs) {
  VoxelGrid grid = inputs.grid;
  if (inputs.texture != nullptr) {
    check_arg(inputs.texture->height() == grid.height() &&
                  inputs.texture->width() == grid.width() &&
                  inputs.texture->depth() == grid.depth(),
              "rendernet_forward: texture volume dims must match the grid");
    VoxelGrid merged(grid.height(), grid.width(), grid.depth(),
                     grid.channels() + inputs.texture->channels());
    for (std::size_t h = 0; h < grid.height(); ++h)
      for (std::size_t w = 0; w < grid.width(); ++w)
        for (std::size_t d = 0; d < grid.depth(); ++d) {
          for (std::size_t c = 0; c < grid.channels(); ++c)
            merged.at(h, w, d, c) = grid.at(h, w, d, c);
          for (std::size_t c = 0; c < inputs.texture->channels(); ++c)
            merged.at(h, w, d, grid.channels() + c) = inputs.texture->at(h, w, d, c);
        }
    grid = std::move(merged);
  }
  check_shape(grid.channels() == spec.input_channels,
              "rendernet_forward: spec expects a texture volume on the channel axis");
  auto gt = tensor_from_grid<T>(grid);
  auto pt = tensor_from_pose<T>(inputs.pose);
  auto cam = rigid_transform_op(gt, pt);
  auto branches = rendernet_cnn(ps, spec, cam);
  std::map<std::string, ImageBuffer> out;
  for (auto& [name, t] : branches) out.emplace(name, image_from_tensor(t));
  if (branches.count("normal") && branches.count("albedo")) {
    auto lt = light_tensor<T>(inputs.light);
    out.emplace("shaded",
                image_from_tensor(shade_compose(branches.at("normal"), branches.at("albedo"), lt)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch training
// ---------------------------------------------------------------------------

struct PatchPair {
  VoxelGrid grid;     // [ph, pw, D, C] window, depth and channels intact
  ImageBuffer image;  // aligned target window
  std::map<std::string, ImageBuffer> branch_images;  // aligned branch targets
  std::size_t h0 = 0, w0 = 0;
};

/// Crops an aligned (voxel, image) training pair. Offsets and sizes snap to
/// `lattice` (the encoder's total spatial stride) so the downsampling grids
/// of patch and full passes coincide; the image window follows at
/// image_scale = spec.output_scale().
inline PatchPair crop_patch(const VoxelGrid& grid, const ImageBuffer& target, double fraction,
                            Rng& rng, std::size_t lattice = 4, std::size_t image_scale = 2) {
  check_arg(fraction > 0.0 && fraction <= 1.0, "crop_patch: fraction must be in (0,1]");
  check_arg(grid.height() * fraction >= 1.0 && grid.width() * fraction >= 1.0,
            "crop_patch: fraction yields an empty patch");
  check_arg(target.height() == grid.height() * image_scale &&
                target.width() == grid.width() * image_scale,
            "crop_patch: target dims must equal grid dims times image_scale");
  auto snap = [&](double v) {
    std::size_t s = static_cast<std::size_t>(std::llround(v / lattice)) * lattice;
    return std::max(lattice, s);
  };
  const std::size_t ph = std::min(grid.height(), snap(grid.height() * fraction));
  const std::size_t pw = std::min(grid.width(), snap(grid.width() * fraction));
  const std::size_t hmax = (grid.height() - ph) / lattice;
  const std::size_t wmax = (grid.width() - pw) / lattice;
  const std::size_t h0 = lattice * (hmax ? rng.next() % (hmax + 1) : 0);
  const std::size_t w0 = lattice * (wmax ? rng.next() % (wmax + 1) : 0);

  PatchPair out;
  out.h0 = h0;
  out.w0 = w0;
  out.grid = VoxelGrid(ph, pw, grid.depth(), grid.channels());
  for (std::size_t h = 0; h < ph; ++h)
    for (std::size_t w = 0; w < pw; ++w)
      for (std::size_t d = 0; d < grid.depth(); ++d)
        for (std::size_t c = 0; c < grid.channels(); ++c)
          out.grid.at(h, w, d, c) = grid.at(h0 + h, w0 + w, d, c);
  out.image = ImageBuffer(ph * image_scale, pw * image_scale, target.channels());
  for (std::size_t i = 0; i < out.image.height(); ++i)
    for (std::size_t j = 0; j < out.image.width(); ++j)
      for (std::size_t c = 0; c < target.channels(); ++c)
        out.image.at(i, j, c) = target.at(h0 * image_scale + i, w0 * image_scale + j, c);
  return out;
}

enum class LossKind { Bce, Mse };

struct TrainSample {
  VoxelGrid camera_grid;  // already posed (world grid through rigid_transform)
  ImageBuffer target;
  LightAngles light;
  // optional per-branch supervision (normal map / albedo) alongside the
  // composed-image loss; keyed by branch name
  std::map<std::string, ImageBuffer> branch_targets;
};

struct TrainSchedule {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  double fraction_start = 0.125;  // patch schedule 1/8 -> 1/2
  double fraction_end = 0.5;
  std::size_t checkpoint_every = 0;  // steps; 0 disables
  std::filesystem::path checkpoint_dir;
  bool shade_head = false;  // compose normal+albedo branches with the light
  std::size_t log_every = 25;
};

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

template <class T>
Tensor<T> style_loss(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  return kind == LossKind::Bce ? bce_loss(pred, target) : mse_loss(pred, target);
}

/// Builds the per-sample training graph and returns the loss. Branch targets
/// (when present in the patch) add direct supervision on the named heads:
/// MSE for RGB branches, BCE for grayscale ones.
template <class T>
Tensor<T> sample_loss(ParamStore<T>& ps, const RenderNetSpec& spec, const PatchPair& patch,
                      const LightAngles& light, LossKind kind, bool shade_head,
                      const ForwardOptions& opts) {
  auto gt = tensor_from_grid<T>(patch.grid);
  auto branches = rendernet_cnn(ps, spec, gt, opts);
  Tensor<T> image;
  if (shade_head) {
    auto lt = light_tensor<T>(light);
    image = shade_compose(branches.at("normal"), branches.at("albedo"), lt);
  } else {
    image = branches.at("image");
  }
  auto target = tensor_from_image<T>(patch.image);
  check_shape(image.shape() == target.shape(), "sample_loss: output/target shape mismatch");
  Tensor<T> loss = style_loss(kind, image, target);
  for (const auto& [name, img] : patch.branch_images) {
    auto bt = tensor_from_image<T>(img);
    const auto& branch = branches.at(name);
    check_shape(branch.shape() == bt.shape(), "sample_loss: branch target shape mismatch");
    loss = add(loss, style_loss(img.channels() == 3 ? LossKind::Mse : LossKind::Bce, branch, bt));
  }
  return loss;
}

/// Patch-based Adam training. Per-sample graphs run on cloned parameter
/// tensors (so batch members can evaluate concurrently) and gradients reduce
/// in sample order; given a seed the loss curve is bit-reproducible.
inline std::vector<TrainLogEntry> train_rendernet(ParamStore<float>& ps,
                                                  const RenderNetSpec& spec,
                                                  const std::vector<TrainSample>& dataset,
                                                  LossKind kind, const AdamConfig& adam,
                                                  const TrainSchedule& schedule,
                                                  std::uint64_t seed) {
  check_arg(!dataset.empty(), "train_rendernet: empty dataset");
  const std::size_t image_scale = spec.output_scale();
  std::size_t lattice = 1;
  for (const auto& l : spec.enc3d) lattice *= l.stride_hw;

  Rng root(seed);
  std::vector<TrainLogEntry> log;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t B = std::max<std::size_t>(1, schedule.batch);

  for (std::size_t step = 0; step < schedule.steps; ++step) {
    const double f = schedule.steps <= 1
                         ? schedule.fraction_end
                         : schedule.fraction_start +
                               (schedule.fraction_end - schedule.fraction_start) *
                                   (static_cast<double>(step) / (schedule.steps - 1));
    Rng pick = root.stream("batch", step);
    std::vector<std::size_t> idx(B);
    for (auto& i : idx) i = pick.next() % dataset.size();

    std::vector<ParamStore<float>> clones;
    clones.reserve(B);
    for (std::size_t b = 0; b < B; ++b) clones.push_back(ps.template cast<float>());
    std::vector<double> losses(B, 0.0);
    parallel_for(B, [&](std::size_t b) {
      Rng crop_rng = root.stream("crop", step * B + b);
      PatchPair patch = crop_patch(dataset[idx[b]].camera_grid, dataset[idx[b]].target, f,
                                   crop_rng, lattice, image_scale);
      for (const auto& [name, img] : dataset[idx[b]].branch_targets) {
        ImageBuffer window(patch.image.height(), patch.image.width(), img.channels());
        for (std::size_t i = 0; i < window.height(); ++i)
          for (std::size_t j = 0; j < window.width(); ++j)
            for (std::size_t c = 0; c < img.channels(); ++c)
              window.at(i, j, c) =
                  img.at(patch.h0 * image_scale + i, patch.w0 * image_scale + j, c);
        patch.branch_images.emplace(name, std::move(window));
      }
      ForwardOptions opts;
      opts.training = true;
      opts.dropout_rng = root.stream("dropout", step * B + b);
      auto loss = sample_loss(clones[b], spec, patch, dataset[idx[b]].light, kind,
                              schedule.shade_head, opts);
      backward(loss);
      losses[b] = static_cast<double>(loss.item());
    });

    double step_loss = 0.0;
    for (double l : losses) step_loss += l;
    step_loss /= static_cast<double>(B);
    if (!std::isfinite(step_loss))
      throw std::runtime_error("train_rendernet: non-finite loss at step " +
                               std::to_string(step));

    ps.zero_grads();
    const float inv_b = 1.0f / static_cast<float>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (auto& [name, e] : clones[b].entries()) {
        auto& dst = ps.get(name).grad();
        const auto& src = e.value.grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv_b;
      }
    ps.adam_step(adam);

    if (step % schedule.log_every == 0 || step + 1 == schedule.steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back({step, step_loss, secs});
    }
    if (schedule.checkpoint_every && !schedule.checkpoint_dir.empty() &&
        (step + 1) % schedule.checkpoint_every == 0)
      ps.save(schedule.checkpoint_dir / ("ckpt_step_" + std::to_string(step + 1) + ".vckp"));
  }
  return log;
}

inline void write_train_log_csv(const std::vector<TrainLogEntry>& log,
                                const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw format_error("write_train_log_csv: cannot open " + path.string());
  f << "step,loss,wall_time\n";
  for (const auto& e : log) f << e.step << "," << e.loss << "," << e.seconds << "\n";
}

// ---------------------------------------------------------------------------
// EC / EC-Deep baselines (canonical-pose input, pose and light conditioning
// through the latent bottleneck)
// ---------------------------------------------------------------------------

enum class BaselineKind { EC, ECDeep };

struct BaselineSpec {
  BaselineKind kind = BaselineKind::EC;
  double scale = 1.0;
  std::size_t input_channels = 1;
  std::array<std::size_t, 3> input_dims{64, 64, 64};
  std::vector<Conv3dDef> enc{{64, 4, 2, 2}, {128, 4, 2, 2}, {256, 4, 2, 2}, {512, 4, 2, 2}};
  std::size_t latent = 200;      // full-scale latent length
  std::size_t cond_dim = 10;     // pose/light conditioning vector
  std::size_t cond_embed = 512;  // EC-Deep embeds pose and light separately
  std::size_t fc_mid = 1024;
  std::size_t reshape_hw = 8;
  std::size_t reshape_ch = 512;
  std::vector<Conv2dDef> dec{{512, 4, 2}, {512, 4, 1}, {256, 4, 2}, {256, 4, 1},
                             {128, 4, 2}, {128, 4, 1}, {64, 4, 2},  {64, 4, 1},
                             {32, 4, 2},  {32, 4, 1},  {16, 4, 2},  {1, 4, 1}};
  double dropout_p = 0.5;

  std::size_t scaled(std::size_t base) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(base * scale)));
  }
  std::size_t latent_dim() const { return scaled(latent); }
};

/// Desk-scale baseline reaching out_image^2 from reshape 4x4.
inline BaselineSpec desk_baseline_spec(BaselineKind kind, std::size_t grid = 32,
                                       std::size_t out_image = 64) {
  BaselineSpec spec;
  spec.kind = kind;
  spec.scale = 0.25;
  spec.input_dims = {grid, grid, grid};
  spec.reshape_hw = 4;
  spec.dropout_p = 0.1;
  spec.dec.clear();
  std::size_t ups = 0;
  for (std::size_t s = spec.reshape_hw; s < out_image; s *= 2) ++ups;
  check_arg(ups >= 1 && spec.reshape_hw << ups == out_image,
            "desk_baseline_spec: out_image must be reshape_hw * 2^k");
  std::size_t ch = 512;
  for (std::size_t i = 0; i < ups; ++i) {
    spec.dec.push_back({ch, 4, 2});
    if (i + 1 < ups) spec.dec.push_back({ch, 4, 1});
    ch = std::max<std::size_t>(16, ch / 2);
  }
  spec.dec.push_back({1, 4, 1});
  return spec;
}

template <class T = float>
ParamStore<T> build_baseline(const BaselineSpec& spec, std::uint64_t seed) {
  ParamStore<T> ps;
  Rng rng = Rng(seed).stream("init");
  std::size_t cin = spec.input_channels;
  std::size_t h = spec.input_dims[0], w = spec.input_dims[1], d = spec.input_dims[2];
  for (std::size_t i = 0; i < spec.enc.size(); ++i) {
    const auto& l = spec.enc[i];
    const std::size_t cout = spec.scaled(l.channels);
    rn_detail::add_conv3d(ps, "enc." + std::to_string(i), l.kernel, cin, cout, rng);
    cin = cout;
    h = (h + l.stride_hw - 1) / l.stride_hw;
    w = (w + l.stride_hw - 1) / l.stride_hw;
    d = (d + l.stride_d - 1) / l.stride_d;
  }
  const std::size_t enc_flat = h * w * d * cin;
  const std::size_t latent = spec.latent_dim();
  ps.add("fc_latent.w", he_init<T>({latent, enc_flat}, enc_flat, rng));
  ps.add("fc_latent.b", Tensor<T>::leaf({latent}));

  std::size_t cond = spec.cond_dim;
  if (spec.kind == BaselineKind::ECDeep) {
    const std::size_t emb = spec.scaled(spec.cond_embed);
    // pose (5 entries) and light (5 entries) are embedded separately
    ps.add("embed_pose.w", he_init<T>({emb, 5}, 5, rng));
    ps.add("embed_pose.b", Tensor<T>::leaf({emb}));
    ps.add("embed_light.w", he_init<T>({emb, 5}, 5, rng));
    ps.add("embed_light.b", Tensor<T>::leaf({emb}));
    cond = 2 * emb;
  }
  const std::size_t mid = spec.scaled(spec.fc_mid);
  ps.add("fc1.w", he_init<T>({mid, latent + cond}, latent + cond, rng));
  ps.add("fc1.b", Tensor<T>::leaf({mid}));
  ps.add("fc1.slope", Tensor<T>::from_data({1}, {T(0.25)}, true));
  ps.add("fc2.w", he_init<T>({mid, mid}, mid, rng));
  ps.add("fc2.b", Tensor<T>::leaf({mid}));
  ps.add("fc2.slope", Tensor<T>::from_data({1}, {T(0.25)}, true));
  const std::size_t rch = spec.scaled(spec.reshape_ch);
  const std::size_t rflat = spec.reshape_hw * spec.reshape_hw * rch;
  ps.add("fc_reshape.w", he_init<T>({rflat, mid}, mid, rng));
  ps.add("fc_reshape.b", Tensor<T>::leaf({rflat}));

  std::size_t c2 = rch;
  for (std::size_t i = 0; i < spec.dec.size(); ++i) {
    const auto& l = spec.dec[i];
    const bool last = i + 1 == spec.dec.size();
    const std::size_t cout = last ? l.channels : spec.scaled(l.channels);
    const std::string prefix = "dec." + std::to_string(i);
    if (spec.kind == BaselineKind::ECDeep && l.stride == 1 && !last) {
      rn_detail::add_res2d(ps, prefix + ".resa", c2, rng);
      rn_detail::add_res2d(ps, prefix + ".resb", c2, rng);
    } else {
      rn_detail::add_conv2d(ps, prefix, l.kernel, c2, cout, rng, l.stride > 1,
                            /*with_slope=*/!last);
      c2 = cout;
    }
  }
  return ps;
}

/// Conditioning vector: [cos az, sin az, cos el, sin el, scale, l_xyz, a, I].
template <class T>
Tensor<T> baseline_condition(const Pose& pose, const LightAngles& light) {
  const LightSpec ls = light.to_spec();
  return Tensor<T>::from_data(
      {10},
      {static_cast<T>(std::cos(deg2rad(pose.azimuth_deg))),
       static_cast<T>(std::sin(deg2rad(pose.azimuth_deg))),
       static_cast<T>(std::cos(deg2rad(pose.elevation_deg))),
       static_cast<T>(std::sin(deg2rad(pose.elevation_deg))),
       static_cast<T>(kRadiusRef / pose.radius), static_cast<T>(ls.direction[0]),
       static_cast<T>(ls.direction[1]), static_cast<T>(ls.direction[2]),
       static_cast<T>(light.ambient), static_cast<T>(light.intensity)},
      false);
}

/// EC / EC-Deep forward: canonical-pose grid plus conditioning vector.
template <class T>
Tensor<T> baseline_forward(ParamStore<T>& ps, const BaselineSpec& spec,
                           const Tensor<T>& canonical_grid, const Tensor<T>& condition,
                           const ForwardOptions& opts = {}) {
  check_shape(condition.size() == spec.cond_dim, "baseline_forward: bad condition length");
  const double p = opts.dropout_p >= 0 ? opts.dropout_p : spec.dropout_p;
  Rng rng = opts.dropout_rng;
  Tensor<T> x = canonical_grid;
  for (std::size_t i = 0; i < spec.enc.size(); ++i) {
    x = rn_detail::conv_block3d(ps, "enc." + std::to_string(i), x, spec.enc[i]);
    x = dropout(x, p, opts.training, rng.stream("enc", i));
  }
  x = reshape(x, {x.size()});
  auto z = sigmoid(fully_connected(x, ps.get("fc_latent.w"), ps.get("fc_latent.b")));

  Tensor<T> cond = condition;
  if (spec.kind == BaselineKind::ECDeep) {
    auto pose_part = narrow(condition, 0, 0, 5);
    auto light_part = narrow(condition, 0, 5, 5);
    auto ep = fully_connected(pose_part, ps.get("embed_pose.w"), ps.get("embed_pose.b"));
    auto el_ = fully_connected(light_part, ps.get("embed_light.w"), ps.get("embed_light.b"));
    cond = concat(ep, el_, 0);
  }
  auto y = concat(z, cond, 0);
  y = prelu(fully_connected(y, ps.get("fc1.w"), ps.get("fc1.b")), ps.get("fc1.slope"));
  y = prelu(fully_connected(y, ps.get("fc2.w"), ps.get("fc2.b")), ps.get("fc2.slope"));
  y = fully_connected(y, ps.get("fc_reshape.w"), ps.get("fc_reshape.b"));
  const std::size_t rch = spec.scaled(spec.reshape_ch);
  Tensor<T> img = reshape(y, {spec.reshape_hw, spec.reshape_hw, rch});

  for (std::size_t i = 0; i < spec.dec.size(); ++i) {
    const auto& l = spec.dec[i];
    const bool last = i + 1 == spec.dec.size();
    const std::string prefix = "dec." + std::to_string(i);
    if (spec.kind == BaselineKind::ECDeep && l.stride == 1 && !last) {
      img = rn_detail::res_block2d(ps, prefix + ".resa", img);
      img = rn_detail::res_block2d(ps, prefix + ".resb", img);
      continue;
    }
    img = l.stride > 1
              ? conv2d_transpose(img, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride)
              : conv2d(img, ps.get(prefix + ".w"), ps.get(prefix + ".b"), 1);
    if (last) {
      img = sigmoid(img);
    } else {
      img = prelu(img, ps.get(prefix + ".slope"));
      img = dropout(img, p, opts.training, rng.stream("dec", i));
    }
  }
  return img;
}

struct BaselineSample {
  VoxelGrid canonical_grid;
  Pose pose;
  LightAngles light;
  ImageBuffer target;
};

/// Full-image BCE training for the baselines (no patching: the latent
/// bottleneck is not translation covariant).
inline std::vector<TrainLogEntry> train_baseline(ParamStore<float>& ps, const BaselineSpec& spec,
                                                 const std::vector<BaselineSample>& dataset,
                                                 const AdamConfig& adam,
                                                 const TrainSchedule& schedule,
                                                 std::uint64_t seed) {
  check_arg(!dataset.empty(), "train_baseline: empty dataset");
  Rng root(seed);
  std::vector<TrainLogEntry> log;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t B = std::max<std::size_t>(1, schedule.batch);
  for (std::size_t step = 0; step < schedule.steps; ++step) {
    Rng pick = root.stream("batch", step);
    std::vector<std::size_t> idx(B);
    for (auto& i : idx) i = pick.next() % dataset.size();
    std::vector<ParamStore<float>> clones;
    clones.reserve(B);
    for (std::size_t b = 0; b < B; ++b) clones.push_back(ps.template cast<float>());
    std::vector<double> losses(B, 0.0);
    parallel_for(B, [&](std::size_t b) {
      const auto& s = dataset[idx[b]];
      ForwardOptions opts;
      opts.training = true;
      opts.dropout_rng = root.stream("dropout", step * B + b);
      auto gt = tensor_from_grid<float>(s.canonical_grid);
      auto cond = baseline_condition<float>(s.pose, s.light);
      auto img = baseline_forward(clones[b], spec, gt, cond, opts);
      auto loss = bce_loss(img, tensor_from_image<float>(s.target));
      backward(loss);
      losses[b] = loss.item();
    });
    double step_loss = 0.0;
    for (double l : losses) step_loss += l;
    step_loss /= static_cast<double>(B);
    if (!std::isfinite(step_loss))
      throw std::runtime_error("train_baseline: non-finite loss at step " + std::to_string(step));
    ps.zero_grads();
    const float inv_b = 1.0f / static_cast<float>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (auto& [name, e] : clones[b].entries()) {
        auto& dst = ps.get(name).grad();
        const auto& src = e.value.grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv_b;
      }
    ps.adam_step(adam);
    if (step % schedule.log_every == 0 || step + 1 == schedule.steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back({step, step_loss, secs});
    }
  }
  return log;
}

}  // namespace voxrender
