#pragma once

#include <string>

#include "facefill/tensor.hpp"

namespace facefill {

// 8-bit PNG <-> [C,H,W] tensors in [0,1]. Grayscale/palette/alpha inputs are
// converted to RGB on read.
Tensor read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const Tensor& img);

// Single-channel write; accepts [1,H,W] or [H,W].
void write_png_gray(const std::string& path, const Tensor& img);

}  // namespace facefill
