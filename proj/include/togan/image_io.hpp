#pragma once

#include <string>

#include "togan/tensor.hpp"

namespace togan {

/// 8-bit RGB PNG from a 3 x H x W tensor in [-1, 1] (values are clamped).
void write_png(const std::string& path, const Tensor<float>& image);
/// Reads an 8-bit RGB or RGBA PNG into 3 x H x W in [-1, 1].
Tensor<float> read_png(const std::string& path);

/// Tiles an N x 3 x R x R batch into rows of `cols` with a 1 px gap.
Tensor<float> image_grid(const Tensor<float>& batch, int cols);

/// Quantizes to the 8-bit grid a PNG round trip would produce.
Tensor<float> quantize_8bit(const Tensor<float>& images);

}  // namespace togan
