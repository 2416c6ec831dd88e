#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codeclm/common.hpp"

namespace codeclm {

/// Interleaved 8-bit RGB pixel buffer, row-major from the top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // width * height * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

/// Loads a PNG, or a raw RGB buffer with a "<path>.dims" sidecar ("W H").
/// Format is chosen by extension: ".png" vs anything else.
Image load_image(const std::string& path);

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

Image load_raw_rgb(const std::string& path);
void save_raw_rgb(const std::string& path, const Image& img);

/// Tiles images left-to-right, top-to-bottom into a cols-wide sheet.
/// Slots without an image are mid-gray; all inputs must share dimensions.
Image tile_images(const std::vector<Image>& images, int cols);

}  // namespace codeclm
