#pragma once

#include <string>

#include "stylediff/tensor.hpp"

namespace stylediff {

// 24-bit uncompressed BMP. Images are HxWx3 tensors with values in [0,1];
// writing quantizes to 8 bits, so write(read(x)) is lossless but write(x) is
// not for arbitrary floats.
void write_bmp(const std::string& path, const Tensorf& image);
Tensorf read_bmp(const std::string& path);

// round to the 8-bit grid the codec uses; sampled outputs pass through this
// so saved files reload bitwise
Tensorf quantize_to_8bit(const Tensorf& image);

}  // namespace stylediff
