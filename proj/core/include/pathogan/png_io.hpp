#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathogan/tensor.hpp"

namespace pathogan {

// 8-bit grayscale PNG encoder (zlib-backed, fixed compression level, so a
// given image always produces the same bytes).
std::vector<uint8_t> encode_png_gray(const Tensor<uint8_t>& img);  // (H,W)
void write_png_gray(const std::string& path, const Tensor<uint8_t>& img);

// value mapping helpers: [-1,1] -> [0,255] for images, [0,1] for maps
Tensor<uint8_t> gray_from_signed(const Tensor<float>& img);
Tensor<uint8_t> gray_from_unit(const Tensor<float>& img);

}  // namespace pathogan
