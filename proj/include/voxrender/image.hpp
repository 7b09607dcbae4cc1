// Image buffers and PNG / PFM output.
//
// PNG (8-bit gray or RGB, zlib-compressed) is the presentation format;
// PFM keeps full float precision and is what tests and training read back.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxrender/common.hpp"

namespace voxrender {

class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, std::size_t c = 1)
      : h_(h), w_(w), c_(c), data_(h * w * c, 0.0f) {
    check_arg(h >= 1 && w >= 1 && (c == 1 || c == 3), "ImageBuffer: channels must be 1 or 3");
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::size_t size() const { return data_.size(); }

  float& at(std::size_t h, std::size_t w, std::size_t c = 0) { return data_[(h * w_ + w) * c_ + c]; }
  float at(std::size_t h, std::size_t w, std::size_t c = 0) const { return data_[(h * w_ + w) * c_ + c]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  ImageBuffer& fill(float v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
  }

  double mean() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
  }

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> data_;
};

namespace detail {

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
  const auto put_be32 = [&out](std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
  };
  put_be32(static_cast<std::uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  put_be32(static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

/// Writes an 8-bit PNG; values are clamped to [0,1] and quantized.
inline void save_png(const ImageBuffer& img, const std::filesystem::path& path) {
  const std::size_t H = img.height(), W = img.width(), C = img.channels();
  std::string raw;
  raw.reserve(H * (1 + W * C));
  for (std::size_t h = 0; h < H; ++h) {
    raw.push_back('\0');  // filter type: none
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        float v = std::clamp(img.at(h, w, c), 0.0f, 1.0f);
        raw.push_back(static_cast<char>(std::lround(v * 255.0f)));
      }
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::string comp(comp_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw format_error("save_png: deflate failed");
  comp.resize(comp_len);

  std::string ihdr;
  const auto put_be32 = [&ihdr](std::uint32_t v) {
    ihdr.push_back(static_cast<char>((v >> 24) & 0xff));
    ihdr.push_back(static_cast<char>((v >> 16) & 0xff));
    ihdr.push_back(static_cast<char>((v >> 8) & 0xff));
    ihdr.push_back(static_cast<char>(v & 0xff));
  };
  put_be32(static_cast<std::uint32_t>(W));
  put_be32(static_cast<std::uint32_t>(H));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(C == 1 ? 0 : 2);         // gray / truecolor
  ihdr.push_back(0);                      // compression
  ihdr.push_back(0);                      // filter
  ihdr.push_back(0);                      // interlace

  std::string out("\x89PNG\r\n\x1a\n", 8);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", "");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw format_error("save_png: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw format_error("save_png: write failed for " + path.string());
}

/// Lossless float image (PFM, little-endian, rows bottom-to-top).
inline void save_pfm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw format_error("save_pfm: cannot open " + path.string());
  f << (img.channels() == 3 ? "PF" : "Pf") << "\n"
    << img.width() << " " << img.height() << "\n"
    << "-1.0\n";
  for (std::size_t row = img.height(); row-- > 0;) {
    const float* src = &img.data()[row * img.width() * img.channels()];
    f.write(reinterpret_cast<const char*>(src),
            static_cast<std::streamsize>(img.width() * img.channels() * sizeof(float)));
  }
  if (!f) throw format_error("save_pfm: write failed for " + path.string());
}

inline ImageBuffer load_pfm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("load_pfm: cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  f >> magic >> w >> h >> scale;
  if ((magic != "PF" && magic != "Pf") || w == 0 || h == 0)
    throw format_error("load_pfm: bad header in " + path.string());
  if (scale >= 0) throw format_error("load_pfm: big-endian PFM not supported");
  f.get();  // single whitespace after the scale line
  ImageBuffer img(h, w, magic == "PF" ? 3 : 1);
  for (std::size_t row = h; row-- > 0;) {
    float* dst = &img.data()[row * w * img.channels()];
    f.read(reinterpret_cast<char*>(dst),
           static_cast<std::streamsize>(w * img.channels() * sizeof(float)));
  }
  if (!f) throw format_error("load_pfm: truncated payload in " + path.string());
  return img;
}

}  // namespace voxrender
