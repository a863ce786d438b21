#include "cdnn/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "cdnn/errors.hpp"

namespace cdnn {

namespace {

enum class FileKind { png, jpeg };

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DataError(msg("cannot open ", path.string()));
  return f;
}

FileKind sniff_kind(std::FILE* f, const std::filesystem::path& path) {
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof(magic), f);
  std::rewind(f);
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return FileKind::png;
  if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return FileKind::jpeg;
  throw DataError(msg(path.string(), " is neither PNG nor JPEG"));
}

// -- libpng ------------------------------------------------------------------

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

/// Decodes to packed 8-bit rows; `channels` out is 1 (gray) or 3 (rgb).
std::vector<std::vector<unsigned char>> png_decode_rows(std::FILE* f,
                                                        const std::filesystem::path& path,
                                                        int want_channels, int& h, int& w) {
  PngReader r;
  if (!r.png || !r.info) throw DataError("libpng initialization failure");
  if (setjmp(png_jmpbuf(r.png))) throw DataError(msg("cannot decode PNG ", path.string()));

  png_init_io(r.png, f);
  png_read_info(r.png, r.info);

  png_set_expand(r.png);          // palette/gray<8/tRNS to full depth
  png_set_strip_16(r.png);        // 16-bit down to 8
  png_set_strip_alpha(r.png);
  if (want_channels == 3)
    png_set_gray_to_rgb(r.png);
  else
    png_set_rgb_to_gray(r.png, 1, -1.0, -1.0);  // default coefficients
  png_read_update_info(r.png, r.info);

  h = static_cast<int>(png_get_image_height(r.png, r.info));
  w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int channels = static_cast<int>(png_get_channels(r.png, r.info));
  if (channels != want_channels)
    throw DataError(msg(path.string(), ": unexpected channel count ", channels));

  std::vector<std::vector<unsigned char>> rows(static_cast<std::size_t>(h));
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)].resize(static_cast<std::size_t>(w) * want_channels);
    row_ptrs[static_cast<std::size_t>(y)] = rows[static_cast<std::size_t>(y)].data();
  }
  png_read_image(r.png, row_ptrs.data());
  png_read_end(r.png, nullptr);
  return rows;
}

std::pair<int, int> png_extents(std::FILE* f, const std::filesystem::path& path) {
  PngReader r;
  if (!r.png || !r.info) throw DataError("libpng initialization failure");
  if (setjmp(png_jmpbuf(r.png))) throw DataError(msg("cannot read PNG header of ", path.string()));
  png_init_io(r.png, f);
  png_read_info(r.png, r.info);
  return {static_cast<int>(png_get_image_height(r.png, r.info)),
          static_cast<int>(png_get_image_width(r.png, r.info))};
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

void png_write_8bit(const std::filesystem::path& path, int h, int w, int channels,
                    const std::vector<unsigned char>& packed) {
  FilePtr f = open_or_throw(path, "wb");
  PngWriter wr;
  if (!wr.png || !wr.info) throw DataError("libpng initialization failure");
  if (setjmp(png_jmpbuf(wr.png))) throw DataError(msg("cannot write PNG ", path.string()));

  png_init_io(wr.png, f.get());
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(packed.data() + static_cast<std::size_t>(y) * w * channels);
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

// -- libjpeg ------------------------------------------------------------------

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

struct JpegReader {
  jpeg_decompress_struct cinfo{};
  JpegErrorMgr err{};
  bool created = false;

  ~JpegReader() {
    if (created) jpeg_destroy_decompress(&cinfo);
  }
};

std::vector<unsigned char> jpeg_decode(std::FILE* f, const std::filesystem::path& path,
                                       bool want_rgb, int& h, int& w, bool header_only) {
  JpegReader r;
  r.cinfo.err = jpeg_std_error(&r.err.pub);
  r.err.pub.error_exit = jpeg_error_exit;
  if (setjmp(r.err.jump)) throw DataError(msg("cannot decode JPEG ", path.string()));

  jpeg_create_decompress(&r.cinfo);
  r.created = true;
  jpeg_stdio_src(&r.cinfo, f);
  jpeg_read_header(&r.cinfo, TRUE);
  if (header_only) {
    h = static_cast<int>(r.cinfo.image_height);
    w = static_cast<int>(r.cinfo.image_width);
    return {};
  }
  r.cinfo.out_color_space = want_rgb ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_start_decompress(&r.cinfo);
  h = static_cast<int>(r.cinfo.output_height);
  w = static_cast<int>(r.cinfo.output_width);
  const int ch = r.cinfo.output_components;
  std::vector<unsigned char> packed(static_cast<std::size_t>(h) * w * ch);
  while (r.cinfo.output_scanline < r.cinfo.output_height) {
    unsigned char* row = packed.data() +
                         static_cast<std::size_t>(r.cinfo.output_scanline) * w * ch;
    jpeg_read_scanlines(&r.cinfo, &row, 1);
  }
  jpeg_finish_decompress(&r.cinfo);
  return packed;
}

}  // namespace

RgbImage read_rgb_image(const std::filesystem::path& path) {
  FilePtr f = open_or_throw(path, "rb");
  const FileKind kind = sniff_kind(f.get(), path);
  int h = 0, w = 0;
  RgbImage img;
  if (kind == FileKind::png) {
    const auto rows = png_decode_rows(f.get(), path, 3, h, w);
    img = RgbImage(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          img.data[c * plane + static_cast<std::size_t>(y) * w + x] =
              rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x) * 3 + c] / 255.f;
  } else {
    const auto packed = jpeg_decode(f.get(), path, true, h, w, false);
    img = RgbImage(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) img.data[c * plane + i] = packed[i * 3 + c] / 255.f;
  }
  return img;
}

GrayImage read_gray_image(const std::filesystem::path& path) {
  FilePtr f = open_or_throw(path, "rb");
  const FileKind kind = sniff_kind(f.get(), path);
  int h = 0, w = 0;
  GrayImage img;
  if (kind == FileKind::png) {
    const auto rows = png_decode_rows(f.get(), path, 1, h, w);
    img = GrayImage(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] / 255.f;
  } else {
    const auto packed = jpeg_decode(f.get(), path, false, h, w, false);
    img = GrayImage(h, w);
    for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = packed[i] / 255.f;
  }
  return img;
}

std::pair<int, int> read_image_extents(const std::filesystem::path& path) {
  FilePtr f = open_or_throw(path, "rb");
  const FileKind kind = sniff_kind(f.get(), path);
  if (kind == FileKind::png) return png_extents(f.get(), path);
  int h = 0, w = 0;
  jpeg_decode(f.get(), path, true, h, w, true);
  return {h, w};
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<unsigned char> packed(img.v.size());
  for (std::size_t i = 0; i < img.v.size(); ++i)
    packed[i] = static_cast<unsigned char>(
        std::lround(std::clamp(img.v[i], 0.f, 1.f) * 255.f));
  png_write_8bit(path, img.h, img.w, 1, packed);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<unsigned char> packed(mask.v.size());
  for (std::size_t i = 0; i < mask.v.size(); ++i) packed[i] = mask.v[i] ? 255 : 0;
  png_write_8bit(path, mask.h, mask.w, 1, packed);
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  std::vector<unsigned char> packed(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      packed[i * 3 + c] = static_cast<unsigned char>(
          std::lround(std::clamp(img.data[c * plane + i], 0.f, 1.f) * 255.f));
  png_write_8bit(path, img.h, img.w, 3, packed);
}

}  // namespace cdnn
