#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfu/grid.hpp"

namespace dfu {

struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;  // channels 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;                 // interleaved rows
  std::vector<std::pair<std::string, std::string>> text;  // written as tEXt chunks
};

// Reads 8-bit gray/gray+alpha/rgb/rgba PNGs; alpha is dropped. Throws IngestionError.
RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& img);

// Denormalizes with `norm`, clamps to [0, 255] and tiles the images in a grid with `cols` columns.
RawImage to_image_grid(std::span<const GridFunction> images, const Normalization& norm, std::size_t cols);

}  // namespace dfu
