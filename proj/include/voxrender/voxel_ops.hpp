// Tensor <-> grid/image interop and the differentiable rigid-body transform.
//
// rigid_transform_op resamples a [H,W,D,C] tensor through the same pose
// convention as voxel_grid.hpp, but as a graph node: gradients flow to the
// grid values (through the trilinear weights) and to the pose parameters
// (through the analytic spatial gradient of the trilinear interpolant chained
// with the rotation/scale derivatives). The interpolant is piecewise linear,
// so pose gradients are exact between cell crossings; smooth grids keep
// finite-difference checks well conditioned.
#pragma once

#include <array>
#include <cmath>

#include "voxrender/image.hpp"
#include "voxrender/tensor.hpp"
#include "voxrender/voxel_grid.hpp"

namespace voxrender {

template <class T>
Tensor<T> tensor_from_grid(const VoxelGrid& g, bool requires_grad = false) {
  std::vector<T> data(g.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(g.data()[i]);
  return Tensor<T>::from_data({g.height(), g.width(), g.depth(), g.channels()}, std::move(data),
                              requires_grad);
}

template <class T>
VoxelGrid grid_from_tensor(const Tensor<T>& t) {
  check_shape(t.shape().size() == 4, "grid_from_tensor: expected [H,W,D,C]");
  VoxelGrid g(t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
  for (std::size_t i = 0; i < t.size(); ++i) g.data()[i] = static_cast<float>(t.value()[i]);
  return g;
}

template <class T>
Tensor<T> tensor_from_image(const ImageBuffer& img, bool requires_grad = false) {
  std::vector<T> data(img.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(img.data()[i]);
  return Tensor<T>::from_data({img.height(), img.width(), img.channels()}, std::move(data),
                              requires_grad);
}

template <class T>
ImageBuffer image_from_tensor(const Tensor<T>& t) {
  check_shape(t.shape().size() == 3 && (t.shape()[2] == 1 || t.shape()[2] == 3),
              "image_from_tensor: expected [H,W,1|3]");
  ImageBuffer img(t.shape()[0], t.shape()[1], t.shape()[2]);
  for (std::size_t i = 0; i < t.size(); ++i)
    img.data()[i] = static_cast<float>(std::clamp(static_cast<double>(t.value()[i]), 0.0, 1.0));
  return img;
}

template <class T>
Tensor<T> tensor_from_pose(const Pose& pose, bool requires_grad = false) {
  return Tensor<T>::from_data(
      {3},
      {static_cast<T>(pose.azimuth_deg), static_cast<T>(pose.elevation_deg),
       static_cast<T>(pose.radius)},
      requires_grad);
}

namespace transform_detail {

struct Mats {
  std::array<double, 9> r, dr_daz, dr_del;  // row-major, degrees for angles
  double inv_s, dinv_s_drad;
};

inline Mats pose_matrices(double az_deg, double el_deg, double radius) {
  const double a = deg2rad(az_deg), e = deg2rad(el_deg);
  const double ca = std::cos(a), sa = std::sin(a), ce = std::cos(e), se = std::sin(e);
  const double k = kPi / 180.0;
  Mats m;
  m.r = {ca * ce, -ca * se, sa, se, ce, 0, -sa * ce, sa * se, ca};
  m.dr_daz = {-sa * ce * k, sa * se * k, ca * k, 0, 0, 0, -ca * ce * k, ca * se * k, -sa * k};
  m.dr_del = {-ca * se * k, -ca * ce * k, 0, ce * k, -se * k, 0, sa * se * k, sa * ce * k, 0};
  m.inv_s = radius / kRadiusRef;
  m.dinv_s_drad = 1.0 / kRadiusRef;
  return m;
}

}  // namespace transform_detail

/// Differentiable world-to-camera resampling of grid [H,W,D,C] under
/// pose = [azimuth_deg, elevation_deg, radius]; output dims match the input.
template <class T>
Tensor<T> rigid_transform_op(const Tensor<T>& grid, const Tensor<T>& pose) {
  check_shape(grid.shape().size() == 4, "rigid_transform_op: grid must be [H,W,D,C]");
  check_shape(pose.size() == 3, "rigid_transform_op: pose must be [az, el, radius]");
  for (T v : pose.value()) check_arg(std::isfinite(static_cast<double>(v)),
                                     "rigid_transform_op: pose must be finite");
  check_arg(pose.value()[2] > T(0), "rigid_transform_op: radius must be > 0");

  const std::size_t H = grid.shape()[0], W = grid.shape()[1], D = grid.shape()[2],
                    C = grid.shape()[3];
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double cz = (static_cast<double>(D) - 1.0) / 2.0;

  auto mats = transform_detail::pose_matrices(static_cast<double>(pose.value()[0]),
                                              static_cast<double>(pose.value()[1]),
                                              static_cast<double>(pose.value()[2]));

  // Per output voxel: source point q = R^T * p_cam * inv_s + c (per axis).
  const auto source_point = [&](std::size_t h, std::size_t w, std::size_t d,
                                std::array<double, 3>& pc) -> std::array<double, 3> {
    pc = {static_cast<double>(w) - cx, static_cast<double>(h) - cy, static_cast<double>(d) - cz};
    const auto& R = mats.r;
    return {(R[0] * pc[0] + R[3] * pc[1] + R[6] * pc[2]) * mats.inv_s + cx,
            (R[1] * pc[0] + R[4] * pc[1] + R[7] * pc[2]) * mats.inv_s + cy,
            (R[2] * pc[0] + R[5] * pc[1] + R[8] * pc[2]) * mats.inv_s + cz};
  };

  const auto corner = [&](long hh, long ww, long dd, std::size_t c) -> double {
    if (hh < 0 || ww < 0 || dd < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W) ||
        dd >= static_cast<long>(D))
      return 0.0;
    return static_cast<double>(
        grid.value()[((static_cast<std::size_t>(hh) * W + ww) * D + dd) * C + c]);
  };

  std::vector<T> out(H * W * D * C);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t d = 0; d < D; ++d) {
        std::array<double, 3> pc;
        const auto q = source_point(h, w, d, pc);  // (x=w, y=h, z=d) order
        const double qw = q[0], qh = q[1], qd = q[2];
        const long h0 = static_cast<long>(std::floor(qh));
        const long w0 = static_cast<long>(std::floor(qw));
        const long d0 = static_cast<long>(std::floor(qd));
        const double fh = qh - h0, fw = qw - w0, fd = qd - d0;
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int ih = 0; ih < 2; ++ih)
            for (int iw = 0; iw < 2; ++iw)
              for (int id = 0; id < 2; ++id) {
                const double wt = (ih ? fh : 1 - fh) * (iw ? fw : 1 - fw) * (id ? fd : 1 - fd);
                if (wt != 0.0) acc += wt * corner(h0 + ih, w0 + iw, d0 + id, c);
              }
          out[((h * W + w) * D + d) * C + c] = static_cast<T>(acc);
        }
      }

  auto gn = grid.node();
  auto pn = pose.node();
  return Tensor<T>::op(
      grid.shape(), std::move(out), {grid, pose}, [gn, pn, H, W, D, C, cy, cx, cz](auto& n) {
        const auto mats = transform_detail::pose_matrices(static_cast<double>(pn->value[0]),
                                                          static_cast<double>(pn->value[1]),
                                                          static_cast<double>(pn->value[2]));
        const bool want_grid = gn->requires_grad;
        const bool want_pose = pn->requires_grad;
        if (want_grid) gn->ensure_grad();
        if (want_pose) pn->ensure_grad();
        double g_az = 0, g_el = 0, g_rad = 0;
        const auto& R = mats.r;
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            for (std::size_t d = 0; d < D; ++d) {
              const std::array<double, 3> pc = {static_cast<double>(w) - cx,
                                                static_cast<double>(h) - cy,
                                                static_cast<double>(d) - cz};
              const double qw = (R[0] * pc[0] + R[3] * pc[1] + R[6] * pc[2]) * mats.inv_s + cx;
              const double qh = (R[1] * pc[0] + R[4] * pc[1] + R[7] * pc[2]) * mats.inv_s + cy;
              const double qd = (R[2] * pc[0] + R[5] * pc[1] + R[8] * pc[2]) * mats.inv_s + cz;
              const long h0 = static_cast<long>(std::floor(qh));
              const long w0 = static_cast<long>(std::floor(qw));
              const long d0 = static_cast<long>(std::floor(qd));
              const double fh = qh - h0, fw = qw - w0, fd = qd - d0;

              // derivative of the source point w.r.t. pose parameters
              std::array<double, 3> dq_az{}, dq_el{}, dq_rad{};
              if (want_pose) {
                const auto& A = mats.dr_daz;
                const auto& E = mats.dr_del;
                dq_az = {(A[0] * pc[0] + A[3] * pc[1] + A[6] * pc[2]) * mats.inv_s,
                         (A[1] * pc[0] + A[4] * pc[1] + A[7] * pc[2]) * mats.inv_s,
                         (A[2] * pc[0] + A[5] * pc[1] + A[8] * pc[2]) * mats.inv_s};
                dq_el = {(E[0] * pc[0] + E[3] * pc[1] + E[6] * pc[2]) * mats.inv_s,
                         (E[1] * pc[0] + E[4] * pc[1] + E[7] * pc[2]) * mats.inv_s,
                         (E[2] * pc[0] + E[5] * pc[1] + E[8] * pc[2]) * mats.inv_s};
                dq_rad = {(R[0] * pc[0] + R[3] * pc[1] + R[6] * pc[2]) * mats.dinv_s_drad,
                          (R[1] * pc[0] + R[4] * pc[1] + R[7] * pc[2]) * mats.dinv_s_drad,
                          (R[2] * pc[0] + R[5] * pc[1] + R[8] * pc[2]) * mats.dinv_s_drad};
              }

              for (std::size_t c = 0; c < C; ++c) {
                const double go = static_cast<double>(n.grad[((h * W + w) * D + d) * C + c]);
                if (go == 0.0) continue;
                double corners[2][2][2];
                for (int ih = 0; ih < 2; ++ih)
                  for (int iw = 0; iw < 2; ++iw)
                    for (int id = 0; id < 2; ++id) {
                      const long hh = h0 + ih, ww = w0 + iw, dd = d0 + id;
                      const bool inb = hh >= 0 && ww >= 0 && dd >= 0 &&
                                       hh < static_cast<long>(H) && ww < static_cast<long>(W) &&
                                       dd < static_cast<long>(D);
                      corners[ih][iw][id] =
                          inb ? static_cast<double>(
                                    gn->value[((static_cast<std::size_t>(hh) * W + ww) * D + dd) *
                                                  C +
                                              c])
                              : 0.0;
                      if (want_grid && inb) {
                        const double wt =
                            (ih ? fh : 1 - fh) * (iw ? fw : 1 - fw) * (id ? fd : 1 - fd);
                        gn->grad[((static_cast<std::size_t>(hh) * W + ww) * D + dd) * C + c] +=
                            static_cast<T>(go * wt);
                      }
                    }
                if (want_pose) {
                  // analytic spatial gradient of the trilinear interpolant
                  auto lerp = [](double a, double b, double f) { return a + (b - a) * f; };
                  const double dh =
                      lerp(lerp(corners[1][0][0] - corners[0][0][0],
                                corners[1][1][0] - corners[0][1][0], fw),
                           lerp(corners[1][0][1] - corners[0][0][1],
                                corners[1][1][1] - corners[0][1][1], fw),
                           fd);
                  const double dw =
                      lerp(lerp(corners[0][1][0] - corners[0][0][0],
                                corners[1][1][0] - corners[1][0][0], fh),
                           lerp(corners[0][1][1] - corners[0][0][1],
                                corners[1][1][1] - corners[1][0][1], fh),
                           fd);
                  const double dd =
                      lerp(lerp(corners[0][0][1] - corners[0][0][0],
                                corners[1][0][1] - corners[1][0][0], fh),
                           lerp(corners[0][1][1] - corners[0][1][0],
                                corners[1][1][1] - corners[1][1][0], fh),
                           fw);
                  // q order is (x=w, y=h, z=d)
                  g_az += go * (dw * dq_az[0] + dh * dq_az[1] + dd * dq_az[2]);
                  g_el += go * (dw * dq_el[0] + dh * dq_el[1] + dd * dq_el[2]);
                  g_rad += go * (dw * dq_rad[0] + dh * dq_rad[1] + dd * dq_rad[2]);
                }
              }
            }
        if (want_pose) {
          pn->grad[0] += static_cast<T>(g_az);
          pn->grad[1] += static_cast<T>(g_el);
          pn->grad[2] += static_cast<T>(g_rad);
        }
      });
}

}  // namespace voxrender
