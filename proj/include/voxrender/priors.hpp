// Shape-prior 3D autoencoder and texture decoder used to regularize
// inverse rendering, plus latent statistics for the Mahalanobis prior.
//
// Autoencoder reference configuration (scale 1, 64^3 input): encoder 3-D
// convolutions with channels {64,128,256,512}, kernels {5,5,2,2}, strides
// {2,2,2,2}; a fully-connected layer to the latent vector; sigmoid; another
// fully-connected layer reshaped to 4x4x4x512 (the flat size is read as a
// spatial 4,4,4 block for dimensional consistency); decoder up-convolutions
// with channels {256,128,64,32,1}, kernels 4, strides {2,2,2,2,1}. ELU
// activations everywhere except the last encoder and decoder convolutions,
// which are sigmoid.
#pragma once

#include <cmath>
#include <vector>

#include "voxrender/adam.hpp"
#include "voxrender/nn.hpp"
#include "voxrender/parallel.hpp"
#include "voxrender/rendernet.hpp"
#include "voxrender/tensor.hpp"
#include "voxrender/voxel_ops.hpp"

namespace voxrender {

struct ShapeAeSpec {
  double scale = 1.0;
  std::size_t latent = 200;
  std::array<std::size_t, 3> input_dims{64, 64, 64};
  std::vector<Conv3dDef> enc{{64, 5, 2, 2}, {128, 5, 2, 2}, {256, 2, 2, 2}, {512, 2, 2, 2}};
  std::vector<Conv3dDef> dec{{256, 4, 2, 2}, {128, 4, 2, 2}, {64, 4, 2, 2}, {32, 4, 2, 2},
                             {1, 4, 1, 1}};

  std::size_t scaled(std::size_t base) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(base * scale)));
  }

  std::size_t bottleneck_dim() const {  // spatial side after the encoder
    std::size_t s = input_dims[0];
    for (const auto& l : enc) s = (s + l.stride_hw - 1) / l.stride_hw;
    return s;
  }
};

/// Desk-scale autoencoder: channel multiplier 1/8 and slimmer decoder
/// kernels keep a 32^3 decode cheap enough for per-step use inside the
/// reconstruction loop.
inline ShapeAeSpec desk_shape_ae_spec(std::size_t grid = 32, std::size_t latent = 64) {
  ShapeAeSpec spec;
  spec.scale = 0.125;
  spec.latent = latent;
  spec.input_dims = {grid, grid, grid};
  spec.dec = {{256, 4, 2, 2}, {128, 4, 2, 2}, {64, 2, 2, 2}, {32, 2, 2, 2}, {1, 3, 1, 1}};
  return spec;
}

template <class T = float>
ParamStore<T> build_shape_ae(const ShapeAeSpec& spec, std::uint64_t seed) {
  ParamStore<T> ps;
  Rng rng = Rng(seed).stream("init");
  std::size_t cin = 1;
  for (std::size_t i = 0; i < spec.enc.size(); ++i) {
    const auto& l = spec.enc[i];
    const std::size_t cout = spec.scaled(l.channels);
    const std::string prefix = "enc." + std::to_string(i);
    ps.add(prefix + ".w",
           he_init<T>({l.kernel, l.kernel, l.kernel, cin, cout}, l.kernel * l.kernel * l.kernel * cin, rng));
    ps.add(prefix + ".b", Tensor<T>::leaf({cout}));
    cin = cout;
  }
  const std::size_t side = spec.bottleneck_dim();
  const std::size_t flat = side * side * side * cin;
  ps.add("fc_enc.w", he_init<T>({spec.latent, flat}, flat, rng));
  ps.add("fc_enc.b", Tensor<T>::leaf({spec.latent}));
  const std::size_t rch = spec.scaled(512);
  const std::size_t rflat = side * side * side * rch;
  ps.add("fc_dec.w", he_init<T>({rflat, spec.latent}, spec.latent, rng));
  ps.add("fc_dec.b", Tensor<T>::leaf({rflat}));
  std::size_t c2 = rch;
  for (std::size_t i = 0; i < spec.dec.size(); ++i) {
    const auto& l = spec.dec[i];
    const bool last = i + 1 == spec.dec.size();
    const std::size_t cout = last ? 1 : spec.scaled(l.channels);
    const std::string prefix = "dec." + std::to_string(i);
    if (l.stride_hw > 1)
      ps.add(prefix + ".w",
             he_init<T>({l.kernel, l.kernel, l.kernel, cout, c2}, l.kernel * l.kernel * l.kernel * c2, rng));
    else
      ps.add(prefix + ".w",
             he_init<T>({l.kernel, l.kernel, l.kernel, c2, cout}, l.kernel * l.kernel * l.kernel * c2, rng));
    ps.add(prefix + ".b", Tensor<T>::leaf({cout}));
    c2 = cout;
  }
  return ps;
}

/// Latent code of a grid: the encoder FC output (pre-sigmoid).
template <class T>
Tensor<T> shape_encode(ParamStore<T>& ps, const ShapeAeSpec& spec, const Tensor<T>& grid) {
  Tensor<T> x = grid;
  for (std::size_t i = 0; i < spec.enc.size(); ++i) {
    const auto& l = spec.enc[i];
    const std::string prefix = "enc." + std::to_string(i);
    x = conv3d(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride_hw, l.stride_d);
    x = (i + 1 == spec.enc.size()) ? sigmoid(x) : elu(x);
  }
  x = reshape(x, {x.size()});
  return fully_connected(x, ps.get("fc_enc.w"), ps.get("fc_enc.b"));
}

/// Occupancy volume in (0,1) from a latent code; differentiable in z.
template <class T>
Tensor<T> shape_decode(ParamStore<T>& ps, const ShapeAeSpec& spec, const Tensor<T>& z) {
  check_shape(z.size() == spec.latent, "shape_decode: latent length mismatch");
  auto y = fully_connected(sigmoid(z), ps.get("fc_dec.w"), ps.get("fc_dec.b"));
  const std::size_t side = spec.bottleneck_dim();
  Tensor<T> x = reshape(y, {side, side, side, spec.scaled(512)});
  for (std::size_t i = 0; i < spec.dec.size(); ++i) {
    const auto& l = spec.dec[i];
    const bool last = i + 1 == spec.dec.size();
    const std::string prefix = "dec." + std::to_string(i);
    x = l.stride_hw > 1
            ? conv3d_transpose(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride_hw)
            : conv3d(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), 1, 1);
    x = last ? sigmoid(x) : elu(x);
  }
  return x;
}

/// BCE-reconstruction training of the autoencoder on occupancy grids.
inline std::vector<TrainLogEntry> train_shape_ae(ParamStore<float>& ps, const ShapeAeSpec& spec,
                                                 const std::vector<VoxelGrid>& dataset,
                                                 const AdamConfig& adam,
                                                 const TrainSchedule& schedule,
                                                 std::uint64_t seed) {
  check_arg(!dataset.empty(), "train_shape_ae: empty dataset");
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
    for (std::size_t b = 0; b < B; ++b) clones.push_back(ps.cast<float>());
    std::vector<double> losses(B, 0.0);
    parallel_for(B, [&](std::size_t b) {
      auto gt = tensor_from_grid<float>(dataset[idx[b]]);
      auto z = shape_encode(clones[b], spec, gt);
      auto rec = shape_decode(clones[b], spec, z);
      auto loss = bce_loss(rec, gt);
      backward(loss);
      losses[b] = loss.item();
    });
    double step_loss = 0.0;
    for (double l : losses) step_loss += l;
    step_loss /= static_cast<double>(B);
    if (!std::isfinite(step_loss))
      throw std::runtime_error("train_shape_ae: non-finite loss at step " + std::to_string(step));
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

// ---------------------------------------------------------------------------
// Latent statistics and the Mahalanobis prior term
// ---------------------------------------------------------------------------

struct LatentStats {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;   // row-major dim x dim, jitter included
  std::vector<double> chol;  // lower-triangular Cholesky factor of cov

  /// y = cov^{-1} x through the Cholesky factor.
  std::vector<double> solve(const std::vector<double>& x) const {
    std::vector<double> y(dim);
    for (std::size_t i = 0; i < dim; ++i) {  // L y = x
      double s = x[i];
      for (std::size_t j = 0; j < i; ++j) s -= chol[i * dim + j] * y[j];
      y[i] = s / chol[i * dim + i];
    }
    for (std::size_t ii = dim; ii-- > 0;) {  // L^T out = y
      double s = y[ii];
      for (std::size_t j = ii + 1; j < dim; ++j) s -= chol[j * dim + ii] * y[j];
      y[ii] = s / chol[ii * dim + ii];
    }
    return y;
  }

  double mahalanobis_sq(const std::vector<double>& z) const {
    std::vector<double> d(dim);
    for (std::size_t i = 0; i < dim; ++i) d[i] = z[i] - mean[i];
    const auto s = solve(d);
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) acc += d[i] * s[i];
    return acc;
  }
};

/// Unbiased sample mean/covariance with a 1e-4 I jitter; the jitter keeps
/// the factorization well posed at small sample counts.
inline LatentStats latent_stats(const std::vector<std::vector<double>>& latents,
                                double jitter = 1e-4) {
  check_arg(!latents.empty(), "latent_stats: empty latent set");
  LatentStats stats;
  stats.dim = latents[0].size();
  const std::size_t n = latents.size();
  stats.mean.assign(stats.dim, 0.0);
  for (const auto& z : latents) {
    check_arg(z.size() == stats.dim, "latent_stats: inconsistent latent lengths");
    for (std::size_t i = 0; i < stats.dim; ++i) stats.mean[i] += z[i];
  }
  for (auto& m : stats.mean) m /= static_cast<double>(n);
  stats.cov.assign(stats.dim * stats.dim, 0.0);
  if (n > 1) {
    for (const auto& z : latents)
      for (std::size_t i = 0; i < stats.dim; ++i)
        for (std::size_t j = 0; j < stats.dim; ++j)
          stats.cov[i * stats.dim + j] += (z[i] - stats.mean[i]) * (z[j] - stats.mean[j]);
    for (auto& c : stats.cov) c /= static_cast<double>(n - 1);
  }
  for (std::size_t i = 0; i < stats.dim; ++i) stats.cov[i * stats.dim + i] += jitter;

  // Cholesky; cov + jitter I is SPD by construction
  stats.chol.assign(stats.dim * stats.dim, 0.0);
  for (std::size_t i = 0; i < stats.dim; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = stats.cov[i * stats.dim + j];
      for (std::size_t k = 0; k < j; ++k)
        s -= stats.chol[i * stats.dim + k] * stats.chol[j * stats.dim + k];
      if (i == j) {
        check_arg(s > 0.0, "latent_stats: covariance not positive definite");
        stats.chol[i * stats.dim + i] = std::sqrt(s);
      } else {
        stats.chol[i * stats.dim + j] = s / stats.chol[j * stats.dim + j];
      }
    }
  }
  return stats;
}

/// Differentiable (z - mu)^T cov^{-1} (z - mu).
template <class T>
Tensor<T> mahalanobis_op(const Tensor<T>& z, const LatentStats& stats) {
  check_shape(z.size() == stats.dim, "mahalanobis_op: latent length mismatch");
  std::vector<double> zv(stats.dim);
  for (std::size_t i = 0; i < stats.dim; ++i) zv[i] = static_cast<double>(z.value()[i]);
  const double value = stats.mahalanobis_sq(zv);
  auto zn = z.node();
  const LatentStats* sp = &stats;
  return Tensor<T>::op({1}, {static_cast<T>(value)}, {z}, [zn, sp](auto& node) {
    zn->ensure_grad();
    std::vector<double> d(sp->dim);
    for (std::size_t i = 0; i < sp->dim; ++i)
      d[i] = static_cast<double>(zn->value[i]) - sp->mean[i];
    const auto s = sp->solve(d);
    const double g = static_cast<double>(node.grad[0]);
    for (std::size_t i = 0; i < sp->dim; ++i)
      zn->grad[i] += static_cast<T>(2.0 * g * s[i]);
  });
}

// ---------------------------------------------------------------------------
// Texture decoder: latent -> 4-channel texture volume. Reference config maps a
// 199-d input to 32*32*32*4 and up-convolves to 64x64x64x4; desk scale halves
// all dims.
// ---------------------------------------------------------------------------

struct TextureDecoderSpec {
  std::size_t latent = 199;
  std::size_t base = 32;  // FC target is base^3 * 4
  std::vector<Conv3dDef> convs{{4, 4, 1, 1}, {8, 4, 2, 2}, {4, 4, 1, 1}};

  std::size_t output_dim() const {
    std::size_t s = base;
    for (const auto& l : convs) s *= l.stride_hw;
    return s;
  }
};

inline TextureDecoderSpec desk_texture_decoder_spec(std::size_t latent = 32) {
  TextureDecoderSpec spec;
  spec.latent = latent;
  spec.base = 16;
  return spec;
}

template <class T = float>
ParamStore<T> build_texture_decoder(const TextureDecoderSpec& spec, std::uint64_t seed) {
  ParamStore<T> ps;
  Rng rng = Rng(seed).stream("init");
  const std::size_t flat = spec.base * spec.base * spec.base * 4;
  ps.add("fc.w", he_init<T>({flat, spec.latent}, spec.latent, rng));
  ps.add("fc.b", Tensor<T>::leaf({flat}));
  std::size_t cin = 4;
  for (std::size_t i = 0; i < spec.convs.size(); ++i) {
    const auto& l = spec.convs[i];
    const bool last = i + 1 == spec.convs.size();
    const std::string prefix = "conv." + std::to_string(i);
    if (l.stride_hw > 1)
      ps.add(prefix + ".w", he_init<T>({l.kernel, l.kernel, l.kernel, l.channels, cin},
                                       l.kernel * l.kernel * l.kernel * cin, rng));
    else
      ps.add(prefix + ".w", he_init<T>({l.kernel, l.kernel, l.kernel, cin, l.channels},
                                       l.kernel * l.kernel * l.kernel * cin, rng));
    ps.add(prefix + ".b", Tensor<T>::leaf({l.channels}));
    if (!last)
      ps.add(prefix + ".slope",
             Tensor<T>::from_data({l.channels}, std::vector<T>(l.channels, T(0.25)), true));
    cin = l.channels;
  }
  return ps;
}

/// 4-channel texture volume from a texture latent; differentiable in phi.
template <class T>
Tensor<T> texture_decode(ParamStore<T>& ps, const TextureDecoderSpec& spec, const Tensor<T>& phi) {
  check_shape(phi.size() == spec.latent, "texture_decode: latent length mismatch");
  auto y = fully_connected(phi, ps.get("fc.w"), ps.get("fc.b"));
  Tensor<T> x = reshape(y, {spec.base, spec.base, spec.base, 4});
  for (std::size_t i = 0; i < spec.convs.size(); ++i) {
    const auto& l = spec.convs[i];
    const bool last = i + 1 == spec.convs.size();
    const std::string prefix = "conv." + std::to_string(i);
    x = l.stride_hw > 1
            ? conv3d_transpose(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), l.stride_hw)
            : conv3d(x, ps.get(prefix + ".w"), ps.get(prefix + ".b"), 1, 1);
    x = last ? sigmoid(x) : prelu(x, ps.get(prefix + ".slope"));
  }
  return x;
}

}  // namespace voxrender
