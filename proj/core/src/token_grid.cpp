#include "dcst/token_grid.hpp"

#include "dcst/ops.hpp"

namespace dcst {

TokenGrid TokenGrid::wrap(Tensor tokens, std::int64_t height, std::int64_t width) {
  if (tokens.rank() != 3) {
    throw ShapeError("TokenGrid: tokens must be [batch, h*w, c], got " + to_string(tokens.shape()));
  }
  if (tokens.dim(1) != height * width) {
    throw ShapeError("TokenGrid: token count " + std::to_string(tokens.dim(1)) +
                     " does not match grid " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  TokenGrid g;
  g.batch = tokens.dim(0);
  g.height = height;
  g.width = width;
  g.channels = tokens.dim(2);
  g.tokens = std::move(tokens);
  return g;
}

namespace {

template <typename SourceFn>
TokenGrid regrid(const TokenGrid& grid, std::int64_t out_h, std::int64_t out_w, SourceFn src) {
  const auto c = grid.channels;
  std::vector<std::int64_t> index(static_cast<std::size_t>(grid.batch * out_h * out_w * c));
  std::size_t i = 0;
  for (std::int64_t b = 0; b < grid.batch; ++b)
    for (std::int64_t y = 0; y < out_h; ++y)
      for (std::int64_t x = 0; x < out_w; ++x) {
        const std::int64_t token = src(y, x);
        for (std::int64_t ch = 0; ch < c; ++ch)
          index[i++] = token < 0 ? -1 : (b * grid.token_count() + token) * c + ch;
      }
  return TokenGrid::wrap(gather(grid.tokens, std::move(index), {grid.batch, out_h * out_w, c}),
                         out_h, out_w);
}

}  // namespace

TokenGrid pad_grid(const TokenGrid& grid, std::int64_t padded_h, std::int64_t padded_w) {
  if (padded_h < grid.height || padded_w < grid.width) throw ShapeError("pad_grid: shrinking pad");
  if (padded_h == grid.height && padded_w == grid.width) return grid;
  return regrid(grid, padded_h, padded_w, [&](std::int64_t y, std::int64_t x) -> std::int64_t {
    return (y < grid.height && x < grid.width) ? y * grid.width + x : -1;
  });
}

TokenGrid crop_grid(const TokenGrid& grid, std::int64_t height, std::int64_t width) {
  if (height > grid.height || width > grid.width || height < 1 || width < 1) {
    throw ShapeError("crop_grid: invalid crop");
  }
  if (height == grid.height && width == grid.width) return grid;
  return regrid(grid, height, width,
                [&](std::int64_t y, std::int64_t x) { return y * grid.width + x; });
}

TokenGrid cyclic_shift(const TokenGrid& grid, std::int64_t dy, std::int64_t dx) {
  const auto h = grid.height, w = grid.width;
  auto wrap = [](std::int64_t v, std::int64_t n) { return ((v % n) + n) % n; };
  return regrid(grid, h, w, [&](std::int64_t y, std::int64_t x) {
    return wrap(y + dy, h) * w + wrap(x + dx, w);
  });
}

}  // namespace dcst
