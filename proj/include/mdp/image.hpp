#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mdp/core.hpp"

namespace mdp {

/// Single-channel float raster, intensities nominally in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    expects(width >= 0 && height >= 0, "GrayImage: negative size");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  /// Edge-replicated pixel access.
  float clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return at(x, y);
  }

  /// Bilinear sample at pixel-center coordinates with edge replication.
  float sample(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const float ax = static_cast<float>(x - fx);
    const float ay = static_cast<float>(y - fy);
    const float p00 = clamped(x0, y0);
    const float p10 = clamped(x0 + 1, y0);
    const float p01 = clamped(x0, y0 + 1);
    const float p11 = clamped(x0 + 1, y0 + 1);
    return (1.0f - ay) * ((1.0f - ax) * p00 + ax * p10) + ay * ((1.0f - ax) * p01 + ax * p11);
  }

  /// Samples the (2*half+1)^2 window centered at (x, y) into `out`, row-major.
  /// Same values as per-pixel sample(); interior windows skip the clamping.
  void sample_window(double x, double y, int half, float* out) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    if (x0 - half < 0 || y0 - half < 0 || x0 + half + 1 >= width_ || y0 + half + 1 >= height_) {
      std::size_t k = 0;
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) out[k++] = sample(x + dx, y + dy);
      }
      return;
    }
    const float ax = static_cast<float>(x - fx);
    const float ay = static_cast<float>(y - fy);
    const std::size_t w = static_cast<std::size_t>(width_);
    std::size_t k = 0;
    for (int dy = -half; dy <= half; ++dy) {
      const float* r0 = data_.data() + static_cast<std::size_t>(y0 + dy) * w + static_cast<std::size_t>(x0 - half);
      const float* r1 = r0 + w;
      for (int i = 0; i <= 2 * half; ++i) {
        out[k++] = (1.0f - ay) * ((1.0f - ax) * r0[i] + ax * r0[i + 1]) + ay * ((1.0f - ax) * r1[i] + ax * r1[i + 1]);
      }
    }
  }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

inline float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

/// Half-resolution image with the 5-tap binomial kernel [1 4 6 4 1]/16.
inline GrayImage pyr_down(const GrayImage& src) {
  const int w = std::max(1, (src.width() + 1) / 2);
  const int h = std::max(1, (src.height() + 1) / 2);
  static constexpr float k[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};
  GrayImage tmp(w, src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.clamped(2 * x + i, y);
      tmp.at(x, y) = acc;
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.clamped(x, 2 * y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

/// One pyramid level with central-difference gradients.
struct PyramidLevel {
  GrayImage image;
  GrayImage grad_x;
  GrayImage grad_y;
};

inline PyramidLevel make_level(GrayImage img) {
  PyramidLevel level;
  level.grad_x = GrayImage(img.width(), img.height());
  level.grad_y = GrayImage(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      level.grad_x.at(x, y) = 0.5f * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
      level.grad_y.at(x, y) = 0.5f * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
    }
  }
  level.image = std::move(img);
  return level;
}

inline std::vector<PyramidLevel> build_pyramid(const GrayImage& img, int levels) {
  expects(levels >= 1, "build_pyramid: need at least one level");
  std::vector<PyramidLevel> pyr;
  pyr.reserve(static_cast<std::size_t>(levels));
  GrayImage cur = img;
  for (int l = 0; l < levels; ++l) {
    GrayImage next = (l + 1 < levels) ? pyr_down(cur) : GrayImage();
    pyr.push_back(make_level(std::move(cur)));
    cur = std::move(next);
  }
  return pyr;
}

// --- PGM (P5, 8-bit) ---------------------------------------------------------

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto next_token = [&in, &path]() {
    std::string tok;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    if (tok.empty()) throw IoError("truncated PGM header in " + path.string());
    return tok;
  };
  if (next_token() != "P5") throw IoError("not a binary PGM (P5): " + path.string());
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError("unsupported PGM geometry in " + path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PGM data in " + path.string());
  GrayImage img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data()[i] = static_cast<float>(buf[i]) / static_cast<float>(maxval);
  return img;
}

inline std::vector<unsigned char> to_bytes(const GrayImage& img) {
  std::vector<unsigned char> buf(img.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0f, 1.0f) * 255.0f));
  }
  return buf;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const auto buf = to_bytes(img);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string frame_filename(int frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame%06d.pgm", frame);
  return name;
}

}  // namespace mdp
