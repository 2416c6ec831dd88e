#include "codeclm/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>

namespace codeclm {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image load_image(const std::string& path) {
  if (has_suffix(path, ".png") || has_suffix(path, ".PNG")) return load_png(path);
  return load_raw_rgb(path);
}

Image load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open png: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw MalformedStream("png decode failed: " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  Image img(w, h);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = img.pixel(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_png(const std::string& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open png for write: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encode failed: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixel(0, y));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image load_raw_rgb(const std::string& path) {
  const std::string dims = read_text_file(path + ".dims");
  std::istringstream ss(dims);
  int w = 0, h = 0;
  if (!(ss >> w >> h) || w <= 0 || h <= 0)
    throw MalformedStream("bad dims sidecar for " + path);
  Bytes data = read_file(path);
  const std::size_t expect = static_cast<std::size_t>(w) * h * 3;
  if (data.size() != expect)
    throw MalformedStream("raw rgb size mismatch for " + path);
  Image img(w, h);
  std::memcpy(img.rgb.data(), data.data(), expect);
  return img;
}

void save_raw_rgb(const std::string& path, const Image& img) {
  write_file(path, img.rgb);
  write_text_file(path + ".dims",
                  std::to_string(img.width) + " " + std::to_string(img.height) + "\n");
}

Image tile_images(const std::vector<Image>& images, int cols) {
  if (images.empty()) throw EmptyCorpus("no images to tile");
  if (cols < 1) cols = 1;
  const int w = images[0].width, h = images[0].height;
  for (const auto& im : images)
    if (im.width != w || im.height != h)
      throw DimensionMismatch("tile_images requires uniform dimensions");
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Image sheet(cols * w, rows * h);
  std::fill(sheet.rgb.begin(), sheet.rgb.end(), std::uint8_t{128});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int cx = (static_cast<int>(i) % cols) * w;
    const int cy = (static_cast<int>(i) / cols) * h;
    for (int y = 0; y < h; ++y)
      std::memcpy(sheet.pixel(cx, cy + y), images[i].pixel(0, y),
                  static_cast<std::size_t>(w) * 3);
  }
  return sheet;
}

}  // namespace codeclm
