#include <csetjmp>
#include <cstdio>
#include <cstring>

#include "codeclm/jpeg_stream.hpp"

#include <jpeglib.h>

namespace codeclm {

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  jmp_buf jump;
  int warnings = 0;
  char message[JMSG_LENGTH_MAX] = {0};
};

void on_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  longjmp(err->jump, 1);
}

void on_emit_message(j_common_ptr cinfo, int msg_level) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  if (msg_level < 0) err->warnings++;  // corrupt-data warning
}

Image pad_to_multiple_of_16(const Image& src) {
  const int w = (src.width + 15) / 16 * 16;
  const int h = (src.height + 15) / 16 * 16;
  if (w == src.width && h == src.height) return src;
  const int x0 = (w - src.width) / 2;
  const int y0 = (h - src.height) / 2;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    int sy = y - y0;
    sy = sy < 0 ? 0 : (sy >= src.height ? src.height - 1 : sy);
    for (int x = 0; x < w; ++x) {
      int sx = x - x0;
      sx = sx < 0 ? 0 : (sx >= src.width ? src.width - 1 : sx);
      std::memcpy(out.pixel(x, y), src.pixel(sx, sy), 3);
    }
  }
  return out;
}

}  // namespace

void CodecProfile::validate() const {
  if (quality < 1 || quality > 100) throw ConfigError("quality must be in 1..100");
  if (restart_interval_mcus < 1) throw ConfigError("restart_interval_mcus must be positive");
}

std::uint64_t CodecProfile::hash() const { return fnv1a64(describe()); }

std::string CodecProfile::describe() const {
  return "jpeg:q=" + std::to_string(quality) + ";sub=420;rst=" +
         std::to_string(restart_interval_mcus) + ";baseline";
}

Bytes encode_image(const Image& pixels, const CodecProfile& profile) {
  profile.validate();
  if (pixels.width <= 0 || pixels.height <= 0)
    throw DimensionError("image dimensions must be positive");

  const Image* img = &pixels;
  Image padded;
  if (pixels.width % 16 != 0 || pixels.height % 16 != 0) {
    if (!profile.pad_to_mcu)
      throw DimensionError("dimensions must be multiples of 16 (" +
                           std::to_string(pixels.width) + "x" +
                           std::to_string(pixels.height) + "); enable padding to accept");
    padded = pad_to_multiple_of_16(pixels);
    img = &padded;
  }

  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.emit_message = on_emit_message;

  unsigned char* out_buf = nullptr;
  unsigned long out_size = 0;

  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (out_buf) std::free(out_buf);
    throw MalformedStream(std::string("jpeg encode failed: ") + err.message);
  }

  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &out_buf, &out_size);

  cinfo.image_width = static_cast<JDIMENSION>(img->width);
  cinfo.image_height = static_cast<JDIMENSION>(img->height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, profile.quality, TRUE);
  // 4:2:0: luma 2x2, chroma 1x1
  cinfo.comp_info[0].h_samp_factor = 2;
  cinfo.comp_info[0].v_samp_factor = 2;
  cinfo.comp_info[1].h_samp_factor = 1;
  cinfo.comp_info[1].v_samp_factor = 1;
  cinfo.comp_info[2].h_samp_factor = 1;
  cinfo.comp_info[2].v_samp_factor = 1;
  cinfo.restart_interval = static_cast<unsigned>(profile.restart_interval_mcus);
  cinfo.optimize_coding = FALSE;  // standard Annex K Huffman tables
  cinfo.dct_method = JDCT_ISLOW;

  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img->pixel(0, static_cast<int>(cinfo.next_scanline)));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  Bytes out(out_buf, out_buf + out_size);
  std::free(out_buf);
  return out;
}

Image decode_jpeg(ByteSpan file, int* warnings) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.emit_message = on_emit_message;

  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw MalformedStream(std::string("jpeg decode failed: ") + err.message);
  }

  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, file.data(), static_cast<unsigned long>(file.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  // Replicated (non-interpolating) chroma upsampling keeps each MCU's decode
  // independent of its neighbors, matching the restart-delimited structure.
  cinfo.do_fancy_upsampling = FALSE;
  jpeg_start_decompress(&cinfo);

  img = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixel(0, static_cast<int>(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  if (warnings) *warnings = err.warnings;
  return img;
}

}  // namespace codeclm
