#pragma once

#include <cstdint>

#include "dcst/tensor.hpp"

namespace dcst {

/// Tokens of one encoder stage laid out on a height x width grid.
/// tokens is [batch, height * width, channels], row-major over the grid.
struct TokenGrid {
  std::int64_t batch = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  Tensor tokens;

  /// Wraps a [batch, h*w, c] tensor, checking the token count.
  static TokenGrid wrap(Tensor tokens, std::int64_t height, std::int64_t width);

  std::int64_t token_count() const { return height * width; }
};

/// Zero-pads the grid at the bottom/right to padded_h x padded_w.
TokenGrid pad_grid(const TokenGrid& grid, std::int64_t padded_h, std::int64_t padded_w);
/// Keeps the top-left height x width tokens.
TokenGrid crop_grid(const TokenGrid& grid, std::int64_t height, std::int64_t width);
/// out(y, x) = in((y + dy) mod H, (x + dx) mod W).
TokenGrid cyclic_shift(const TokenGrid& grid, std::int64_t dy, std::int64_t dx);

}  // namespace dcst
