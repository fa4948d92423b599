#pragma once

#include <span>
#include <string>

#include "gptx/image.hpp"

namespace gptx {

// Binary PPM (P6, maxval 255). Pixel bytes quantize round-half-up from [0,1];
// reading inverts within 1/255 per channel. Values outside [0,1] are refused.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// Tiles images (all of equal extent) left-to-right, top-to-bottom into one
// grid image with `columns` tiles per row.
Image tile_images(std::span<const Image> images, int64_t columns);

}  // namespace gptx
