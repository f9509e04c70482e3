#pragma once

#include <string>
#include <vector>

#include "stylegrow/tensor.hpp"

namespace stylegrow {

// Binary PPM (P6, maxval <= 255). Pixels map to [-1, 1] doubles, CHW layout.
Tensor read_ppm(const std::string& path);              // [3, H, W]
Tensor read_ppm_bytes(const std::string& bytes, const std::string& origin);
void write_ppm(const std::string& path, const Tensor& image);  // [3,H,W] in [-1,1]
std::string encode_ppm(const Tensor& image);

// Stack [3,H,W] images into an [N,3,H,W] batch (shapes must match).
Tensor stack_images(const std::vector<Tensor>& images);

// Tile a batch into a single grid image, `cols` per row.
Tensor tile_grid(const Tensor& batch, int64_t cols);

// Center-crop to square and bilinearly resize to `resolution`.
Tensor center_crop_resize(const Tensor& image, int64_t resolution);

}  // namespace stylegrow
