#include "togan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace togan {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float x) {
  return static_cast<uint8_t>(std::lround(std::clamp((static_cast<double>(x) + 1) * 127.5, 0.0, 255.0)));
}

float from_byte(uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

}  // namespace

void write_png(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ContractError("write_png expects 3 x H x W, got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < 3; ++c) row[static_cast<size_t>(j * 3 + c)] = to_byte(image[c * plane + i * w + j]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ContractError("cannot open image " + path);
  uint8_t sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ContractError("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Tensor<float> out;
  std::vector<uint8_t> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ContractError("corrupt PNG file: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto w = static_cast<int64_t>(png_get_image_width(png, info));
  const auto h = static_cast<int64_t>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ContractError("unsupported PNG layout: " + path);
  }
  buf.resize(static_cast<size_t>(w * h * 3));
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t i = 0; i < h; ++i) rows[static_cast<size_t>(i)] = buf.data() + i * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out = Tensor<float>(Shape{3, h, w});
  const int64_t plane = h * w;
  for (int64_t p = 0; p < plane; ++p)
    for (int64_t c = 0; c < 3; ++c) out[c * plane + p] = from_byte(buf[static_cast<size_t>(p * 3 + c)]);
  return out;
}

Tensor<float> image_grid(const Tensor<float>& batch, int cols) {
  if (batch.rank() != 4 || batch.dim(1) != 3) throw ContractError("image_grid expects N x 3 x H x W");
  if (cols < 1) throw ContractError("image_grid needs at least one column");
  const int64_t n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  const int64_t c = std::min<int64_t>(cols, std::max<int64_t>(n, 1)), rws = (n + c - 1) / c;
  const int64_t gh = rws * (h + 1) + 1, gw = c * (w + 1) + 1;
  Tensor<float> g(Shape{3, gh, gw}, 1.0f);
  for (int64_t k = 0; k < n; ++k) {
    const int64_t oy = (k / c) * (h + 1) + 1, ox = (k % c) * (w + 1) + 1;
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          g[(ch * gh + oy + i) * gw + ox + j] = batch[((k * 3 + ch) * h + i) * w + j];
  }
  return g;
}

Tensor<float> quantize_8bit(const Tensor<float>& images) {
  Tensor<float> out = images;
  for (auto& v : out.span()) v = from_byte(to_byte(v));
  return out;
}

}  // namespace togan
