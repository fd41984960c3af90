#pragma once

// Slow, obviously-correct reference implementations shared by the unit tests
// and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dcst/dcb.hpp"
#include "dcst/instances.hpp"
#include "dcst/metrics.hpp"
#include "dcst/ops.hpp"
#include "dcst/rng.hpp"

namespace dcst::testing {

inline BinaryMap random_map(Rng& rng, std::int64_t h, std::int64_t w, double density) {
  BinaryMap b{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (auto& v : b.data) v = rng.bernoulli(density) ? 1 : 0;
  return b;
}

// Recursive flood fill, seeded in raster order.
inline void flood_fill(const BinaryMap& b, std::vector<std::int32_t>& lab, std::int64_t y,
                       std::int64_t x, std::int32_t id, bool eight) {
  if (y < 0 || x < 0 || y >= b.height || x >= b.width) return;
  if (!b.at(y, x) || lab[y * b.width + x] != 0) return;
  lab[y * b.width + x] = id;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      if (!eight && dy != 0 && dx != 0) continue;
      flood_fill(b, lab, y + dy, x + dx, id, eight);
    }
}

inline std::vector<std::int32_t> flood_labels(const BinaryMap& b, bool eight) {
  std::vector<std::int32_t> lab(b.data.size(), 0);
  std::int32_t next = 0;
  for (std::int64_t y = 0; y < b.height; ++y)
    for (std::int64_t x = 0; x < b.width; ++x)
      if (b.at(y, x) && lab[y * b.width + x] == 0) flood_fill(b, lab, y, x, ++next, eight);
  return lab;
}

struct BestAssignment {
  int count = -1;
  double distance = 0.0;
};

namespace detail {
inline void enumerate(const std::vector<Point>& p, const std::vector<HeadAnnotation>& g,
                      std::size_t i, std::vector<char>& used, int count, double dist,
                      BestAssignment& best) {
  if (i == p.size()) {
    if (count > best.count || (count == best.count && dist < best.distance - 1e-12)) {
      best.count = count;
      best.distance = dist;
    }
    return;
  }
  enumerate(p, g, i + 1, used, count, dist, best);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double d = std::hypot(p[i].x - g[j].x, p[i].y - g[j].y);
    if (used[j] || d > g[j].sigma()) continue;
    used[j] = 1;
    enumerate(p, g, i + 1, used, count + 1, dist + d, best);
    used[j] = 0;
  }
}
}  // namespace detail

/// Best (count, -distance) over every injective assignment of feasible pairs.
inline BestAssignment exhaustive_assignment(const std::vector<Point>& preds,
                                            const std::vector<HeadAnnotation>& gts) {
  std::vector<char> used(gts.size(), 0);
  BestAssignment best;
  detail::enumerate(preds, gts, 0, used, 0, 0.0, best);
  return best;
}

/// Rows and columns of the input reached by the centre output pixel of a DCB,
/// read off the support of the input gradient.
inline std::pair<std::int64_t, std::int64_t> dcb_footprint(std::int64_t r1, std::int64_t r2) {
  Rng rng(7);
  const std::int64_t c = 2, size = 24;
  DcbConfig cfg;
  cfg.rates = {r1, r2};
  DilatedConvBlock blk(c, cfg, rng);
  // strictly positive weights so no path cancels
  for (auto& layer : blk.layers())
    for (auto& w : layer.weight.mutable_data()) w = static_cast<float>(rng.uniform(0.05, 0.2));
  auto x = uniform_tensor({1, c, size, size}, rng, 0.5f, 1.5f, true);
  auto y = blk.forward(x, Mode::eval);
  std::vector<float> sel(static_cast<std::size_t>(y.numel()), 0.0f);
  const auto mid = size / 2;
  sel[mid * size + mid] = 1.0f;  // channel 0
  sum(mul(y, Tensor::from(y.shape(), sel))).backward();
  std::int64_t y0 = size, y1 = -1, x0 = size, x1 = -1;
  auto g = x.grad();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t yy = 0; yy < size; ++yy)
      for (std::int64_t xx = 0; xx < size; ++xx)
        if (g[(ch * size + yy) * size + xx] != 0.0f) {
          y0 = std::min(y0, yy), y1 = std::max(y1, yy);
          x0 = std::min(x0, xx), x1 = std::max(x1, xx);
        }
  return {y1 - y0 + 1, x1 - x0 + 1};
}

}  // namespace dcst::testing
