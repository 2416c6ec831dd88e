#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "codeclm/image.hpp"

namespace testsup {

// Multi-octave value noise plus a few soft blobs: rough stand-in for natural
// photo content, deterministic per seed. Contrast is tuned so quality-25
// entropy streams land in a photo-like byte range.
inline codeclm::Image synth_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  codeclm::Image img(w, h);
  std::vector<double> field(static_cast<std::size_t>(w) * h * 3, 0.0);

  const int octaves[] = {4, 8, 16, 32, 64};
  const double amps[] = {0.40, 0.22, 0.20, 0.16, 0.10};
  for (int o = 0; o < 5; ++o) {
    const int cells = octaves[o];
    std::vector<double> grid(static_cast<std::size_t>(cells + 1) * (cells + 1) * 3);
    for (double& g : grid) g = uni(rng);
    for (int y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) * cells / h;
      const int gy = static_cast<int>(fy);
      const double ty = fy - gy;
      for (int x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) * cells / w;
        const int gx = static_cast<int>(fx);
        const double tx = fx - gx;
        for (int c = 0; c < 3; ++c) {
          auto at = [&](int ix, int iy) {
            return grid[(static_cast<std::size_t>(iy) * (cells + 1) + ix) * 3 + c];
          };
          const double v = at(gx, gy) * (1 - tx) * (1 - ty) + at(gx + 1, gy) * tx * (1 - ty) +
                           at(gx, gy + 1) * (1 - tx) * ty + at(gx + 1, gy + 1) * tx * ty;
          field[(static_cast<std::size_t>(y) * w + x) * 3 + c] += amps[o] * v;
        }
      }
    }
  }

  // Soft elliptical blobs for object-like structure.
  const int n_blobs = 3 + static_cast<int>(uni(rng) * 4);
  for (int bIdx = 0; bIdx < n_blobs; ++bIdx) {
    const double cx = uni(rng) * w, cy = uni(rng) * h;
    const double rx = (0.08 + 0.25 * uni(rng)) * w, ry = (0.08 + 0.25 * uni(rng)) * h;
    const double color[3] = {uni(rng), uni(rng), uni(rng)};
    const double strength = 0.3 + 0.4 * uni(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const double d2 = dx * dx + dy * dy;
        if (d2 > 4.0) continue;
        const double a = strength * std::exp(-d2);
        for (int c = 0; c < 3; ++c) {
          double& f = field[(static_cast<std::size_t>(y) * w + x) * 3 + c];
          f = f * (1 - a) + color[c] * a;
        }
      }
  }

  std::uniform_real_distribution<double> grain(-0.025, 0.025);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double v = std::clamp((field[i] + grain(rng)) * 255.0 * 1.25 - 16.0, 0.0, 255.0);
    img.rgb[i] = static_cast<std::uint8_t>(v + 0.5);
  }
  return img;
}

inline codeclm::Image flat_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  codeclm::Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto* p = img.pixel(x, y);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  return img;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("codeclm_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testsup
