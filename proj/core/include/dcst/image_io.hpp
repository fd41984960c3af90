#pragma once

#include <filesystem>

#include "dcst/tensor.hpp"

namespace dcst {

/// Binary 8-bit PNM. Images are [C, H, W] tensors with values in [0, 1]
/// (C = 3 for PPM, 1 for PGM); values are clamped and rounded on write.
Tensor read_pnm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Accepts [H, W], [1, H, W] or [1, 1, H, W].
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace dcst
