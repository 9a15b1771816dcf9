#pragma once

#include <string>
#include <vector>

#include "diffsem/tensor.hpp"

namespace diffsem {

/// Writes an 8-bit PNG. channels must be 1 (gray) or 3 (RGB); pixels are
/// row-major, interleaved for RGB.
void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<unsigned char>& pixels);

/// Tiles the first `count` images of a [n,c,h,w] float batch into one grid
/// image (values clamped to [0,1] for display) and writes it as PNG.
void write_image_grid(const std::string& path, const Tensor<float>& images, int count,
                      int per_row = 8);

}  // namespace diffsem
