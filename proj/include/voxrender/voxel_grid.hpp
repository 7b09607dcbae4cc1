// Voxel grids, rigid-body pose transforms and grid file I/O.
//
// A VoxelGrid is a dense H x W x D x C scalar field, indexed [h][w][d][c]
// row-major. Continuous coordinates attach axes to the indices as
//
//            +y (h)
//             |
//             |
//             +------ +x (w)
//            /
//          +z (d)
//
// The camera sits on the +z side of the grid and looks along -z, so the
// image row/column of pixel (i,j) correspond to the (h,w) indices of the
// transformed grid, and depth increases away from the camera (decreasing d).
// Azimuth rotates content counterclockwise about +y (viewed from +y),
// elevation rotates about +z; the combined content rotation is
// R = R_y(azimuth) * R_z(elevation). Camera distance maps to a scale factor
// scale = kRadiusRef / radius, with kRadiusRef the midpoint of the sampled
// radius range [3.0, 6.3].
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "voxrender/common.hpp"

namespace voxrender {

constexpr double kRadiusMin = 3.0;
constexpr double kRadiusMax = 6.3;
constexpr double kRadiusRef = 0.5 * (kRadiusMin + kRadiusMax);  // 4.65

class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(std::size_t h, std::size_t w, std::size_t d, std::size_t c = 1)
      : h_(h), w_(w), d_(d), c_(c), data_(h * w * d * c, 0.0f) {
    check_arg(h >= 1 && w >= 1 && d >= 1 && c >= 1, "VoxelGrid: dimensions must be >= 1");
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t depth() const { return d_; }
  std::size_t channels() const { return c_; }
  std::size_t size() const { return data_.size(); }

  float& at(std::size_t h, std::size_t w, std::size_t d, std::size_t c = 0) {
    return data_[((h * w_ + w) * d_ + d) * c_ + c];
  }
  float at(std::size_t h, std::size_t w, std::size_t d, std::size_t c = 0) const {
    return data_[((h * w_ + w) * d_ + d) * c_ + c];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  double mass() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return s;
  }

 private:
  std::size_t h_ = 0, w_ = 0, d_ = 0, c_ = 0;
  std::vector<float> data_;
};

struct PoseRange {
  double lo = 0.0, hi = 180.0;
};

/// Viewing pose: azimuth/elevation in degrees, camera distance in scene units.
struct Pose {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = kRadiusRef;

  bool finite() const {
    return std::isfinite(azimuth_deg) && std::isfinite(elevation_deg) &&
           std::isfinite(radius) && radius > 0.0;
  }
};

/// Rigid-body transform in voxel coordinates. Content maps as
///   p_out = scale * rotation * (p_in - c_in) + c_out + translation
/// with c_in/c_out the voxel-center grid centers.
struct TransformSpec {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  double scale = 1.0;
  std::array<double, 3> translation{0, 0, 0};
  std::array<std::size_t, 3> output_dims{0, 0, 0};  // (H, W, D)

  static TransformSpec from_pose(const Pose& pose, std::array<std::size_t, 3> out_dims) {
    check_arg(pose.finite(), "TransformSpec: pose must be finite with radius > 0");
    const double az = deg2rad(pose.azimuth_deg);
    const double el = deg2rad(pose.elevation_deg);
    const double ca = std::cos(az), sa = std::sin(az);
    const double ce = std::cos(el), se = std::sin(el);
    // R_y(az) * R_z(el), columns act on (x, y, z).
    TransformSpec t;
    t.rotation = {ca * ce, -ca * se, sa,
                  se,       ce,      0,
                  -sa * ce, sa * se, ca};
    t.scale = kRadiusRef / pose.radius;
    t.output_dims = out_dims;
    return t;
  }
};

/// Centers `grid` in a zero-padded grid of the target spatial dims.
inline VoxelGrid embed(const VoxelGrid& grid, std::size_t th, std::size_t tw, std::size_t td) {
  check_arg(th >= grid.height() && tw >= grid.width() && td >= grid.depth(),
            "embed: target dims must be >= source dims");
  VoxelGrid out(th, tw, td, grid.channels());
  const std::size_t oh = (th - grid.height()) / 2;
  const std::size_t ow = (tw - grid.width()) / 2;
  const std::size_t od = (td - grid.depth()) / 2;
  for (std::size_t h = 0; h < grid.height(); ++h)
    for (std::size_t w = 0; w < grid.width(); ++w)
      for (std::size_t d = 0; d < grid.depth(); ++d)
        for (std::size_t c = 0; c < grid.channels(); ++c)
          out.at(h + oh, w + ow, d + od, c) = grid.at(h, w, d, c);
  return out;
}

/// 8-corner trilinear sample at continuous (h,w,d); out-of-bounds corners read 0.
inline double trilinear_sample(const VoxelGrid& grid, double h, double w, double d,
                               std::size_t channel = 0) {
  const auto floor_of = [](double x) { return static_cast<long>(std::floor(x)); };
  const long h0 = floor_of(h), w0 = floor_of(w), d0 = floor_of(d);
  const double fh = h - h0, fw = w - w0, fd = d - d0;
  const long H = static_cast<long>(grid.height());
  const long W = static_cast<long>(grid.width());
  const long D = static_cast<long>(grid.depth());
  double acc = 0.0;
  for (int ih = 0; ih < 2; ++ih) {
    const long hh = h0 + ih;
    if (hh < 0 || hh >= H) continue;
    const double wh = ih ? fh : 1.0 - fh;
    if (wh == 0.0) continue;
    for (int iw = 0; iw < 2; ++iw) {
      const long ww = w0 + iw;
      if (ww < 0 || ww >= W) continue;
      const double wwt = iw ? fw : 1.0 - fw;
      if (wwt == 0.0) continue;
      for (int id = 0; id < 2; ++id) {
        const long dd = d0 + id;
        if (dd < 0 || dd >= D) continue;
        const double wd = id ? fd : 1.0 - fd;
        if (wd == 0.0) continue;
        acc += wh * wwt * wd *
               grid.at(static_cast<std::size_t>(hh), static_cast<std::size_t>(ww),
                       static_cast<std::size_t>(dd), channel);
      }
    }
  }
  return acc;
}

/// Resamples `grid` through `spec` by inverse-mapping each output voxel
/// center and trilinear-sampling the input. Out-of-bounds reads are 0.
inline VoxelGrid apply_transform(const VoxelGrid& grid, const TransformSpec& spec) {
  const std::size_t OH = spec.output_dims[0], OW = spec.output_dims[1], OD = spec.output_dims[2];
  check_arg(OH >= 1 && OW >= 1 && OD >= 1, "apply_transform: output dims must be >= 1");
  VoxelGrid out(OH, OW, OD, grid.channels());
  const double cin_y = (static_cast<double>(grid.height()) - 1.0) / 2.0;
  const double cin_x = (static_cast<double>(grid.width()) - 1.0) / 2.0;
  const double cin_z = (static_cast<double>(grid.depth()) - 1.0) / 2.0;
  const double cout_y = (static_cast<double>(OH) - 1.0) / 2.0;
  const double cout_x = (static_cast<double>(OW) - 1.0) / 2.0;
  const double cout_z = (static_cast<double>(OD) - 1.0) / 2.0;
  const auto& R = spec.rotation;
  const double inv_s = 1.0 / spec.scale;
  for (std::size_t h = 0; h < OH; ++h) {
    for (std::size_t w = 0; w < OW; ++w) {
      for (std::size_t d = 0; d < OD; ++d) {
        // Camera-space offset from output center, in (x,y,z) order.
        const double x = (static_cast<double>(w) - cout_x - spec.translation[1]) * inv_s;
        const double y = (static_cast<double>(h) - cout_y - spec.translation[0]) * inv_s;
        const double z = (static_cast<double>(d) - cout_z - spec.translation[2]) * inv_s;
        // p_in = R^T * p_cam (rotation is orthonormal).
        const double sx = R[0] * x + R[3] * y + R[6] * z;
        const double sy = R[1] * x + R[4] * y + R[7] * z;
        const double sz = R[2] * x + R[5] * y + R[8] * z;
        const double sh = sy + cin_y;
        const double sw = sx + cin_x;
        const double sd = sz + cin_z;
        for (std::size_t c = 0; c < grid.channels(); ++c)
          out.at(h, w, d, c) = static_cast<float>(trilinear_sample(grid, sh, sw, sd, c));
      }
    }
  }
  return out;
}

/// World-to-camera transform for a pose; output dims match the input grid.
inline VoxelGrid rigid_transform(const VoxelGrid& grid, const Pose& pose) {
  check_arg(pose.finite(), "rigid_transform: pose must be finite with radius > 0");
  TransformSpec spec = TransformSpec::from_pose(pose, {grid.height(), grid.width(), grid.depth()});
  return apply_transform(grid, spec);
}

// ---------------------------------------------------------------------------
// Grid file format: magic "VXG1", four LE uint32 dims (H, W, D, C), then
// H*W*D*C LE float32 values in [h][w][d][c] row-major order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t b;
  std::memcpy(&b, &f, 4);
  return b;
}

inline float bits_float(std::uint32_t b) {
  float f;
  std::memcpy(&f, &b, 4);
  return f;
}

}  // namespace detail

inline void save_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(20 + grid.size() * 4);
  buf += "VXG1";
  detail::put_u32le(buf, static_cast<std::uint32_t>(grid.height()));
  detail::put_u32le(buf, static_cast<std::uint32_t>(grid.width()));
  detail::put_u32le(buf, static_cast<std::uint32_t>(grid.depth()));
  detail::put_u32le(buf, static_cast<std::uint32_t>(grid.channels()));
  for (float v : grid.data()) detail::put_u32le(buf, detail::float_bits(v));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw format_error("save_grid: cannot open " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw format_error("save_grid: write failed for " + path.string());
}

inline VoxelGrid load_grid(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("load_grid: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw format_error("load_grid: truncated header in " + path.string());
  if (buf.compare(0, 4, "VXG1") != 0)
    throw format_error("load_grid: bad magic in " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint64_t h = detail::get_u32le(p + 4);
  const std::uint64_t w = detail::get_u32le(p + 8);
  const std::uint64_t d = detail::get_u32le(p + 12);
  const std::uint64_t c = detail::get_u32le(p + 16);
  if (h == 0 || w == 0 || d == 0 || c == 0)
    throw format_error("load_grid: zero dimension in " + path.string());
  const std::uint64_t count = h * w * d * c;
  if (count > (std::numeric_limits<std::uint64_t>::max() / 4) ||
      count != (buf.size() - 20) / 4 || (buf.size() - 20) % 4 != 0)
    throw format_error("load_grid: declared size does not match file length in " + path.string());
  VoxelGrid grid(h, w, d, c);
  for (std::uint64_t i = 0; i < count; ++i)
    grid.data()[i] = detail::bits_float(detail::get_u32le(p + 20 + 4 * i));
  return grid;
}

}  // namespace voxrender
