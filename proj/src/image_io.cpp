#include "dfu/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dfu/errors.hpp"

namespace dfu {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  File fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IngestionError(path.string() + ": cannot open");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IngestionError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IngestionError(path.string() + ": libpng initialisation failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError(path.string() + ": unsupported channel layout");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t i = 0; i < img.height; ++i) rows[i] = img.pixels.data() + i * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, info);
  png_textp text = nullptr;
  const int ntext = png_get_text(png, info, &text, nullptr);
  for (int i = 0; i < ntext; ++i) img.text.emplace_back(text[i].key, text[i].text);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("write_png: channels must be 1 or 3");
  File fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ConfigError(path.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ConfigError("write_png: libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError(path.string() + ": PNG write failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks(img.text.size());
  for (std::size_t i = 0; i < img.text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(img.text[i].first.c_str());
    chunks[i].text = const_cast<char*>(img.text[i].second.c_str());
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (std::size_t i = 0; i < img.height; ++i)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + i * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RawImage to_image_grid(std::span<const GridFunction> images, const Normalization& norm, std::size_t cols) {
  if (images.empty()) throw ConfigError("image grid needs at least one image");
  const std::size_t r = images[0].resolution(), C = images[0].channels();
  if (C != 1 && C != 3) throw ConfigError("image grid supports 1 or 3 channels");
  cols = std::max<std::size_t>(1, std::min(cols, images.size()));
  const std::size_t rows = (images.size() + cols - 1) / cols, pad = 2;
  RawImage img;
  img.channels = C;
  img.width = cols * r + (cols + 1) * pad;
  img.height = rows * r + (rows + 1) * pad;
  img.pixels.assign(img.width * img.height * C, 0);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const GridFunction& g = images[n];
    if (g.resolution() != r || g.channels() != C) throw ShapeError("image grid mixes shapes");
    const std::size_t oy = pad + (n / cols) * (r + pad), ox = pad + (n % cols) * (r + pad);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          const double raw = norm.denormalize(c, g.at(c, i, j));
          const double q = std::clamp(std::round(raw), 0.0, 255.0);
          img.pixels[((oy + i) * img.width + ox + j) * C + c] = static_cast<std::uint8_t>(q);
        }
  }
  return img;
}

}  // namespace dfu
