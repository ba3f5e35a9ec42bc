#pragma once

#include <string>

#include "dgp/tensor.hpp"

namespace dgp {

// 8-bit PNG I/O over display-range ([0,1]) float tensors.
// Images are (3,H,W) or (1,H,W); masks are (H,W) with values {0,1}
// (file convention: 0 = missing, 255 = observed).

Tensor<float> read_png(const std::string& path);          // (3,H,W) or (1,H,W)
void write_png(const std::string& path, const Tensor<float>& img);

Tensor<float> read_mask_png(const std::string& path);     // (H,W) in {0,1}
void write_mask_png(const std::string& path, const Tensor<float>& mask);

}  // namespace dgp
