#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace dcst::detail {

namespace {

void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
      std::int64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      c[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
             float* c) {
  for (std::int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const float av = arow[i];
      if (av == 0.0f) continue;
      float* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    gemm_nn(m, n, k, a, b, c);
  } else if (!trans_a && trans_b) {
    gemm_nt(m, n, k, a, b, c);
  } else if (trans_a && !trans_b) {
    gemm_tn(m, n, k, a, b, c);
  } else {
    // Rare path: materialize op(A) and reuse the nt kernel.
    std::vector<float> at(static_cast<std::size_t>(m * k));
    for (std::int64_t p = 0; p < k; ++p)
      for (std::int64_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
    gemm_nt(m, n, k, at.data(), b, c);
  }
}

void im2col(const PatchGeometry& g, const float* image, float* cols) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const float* src = image + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        float* dst = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.sh - g.ph + i * g.dh;
          float* drow = dst + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(drow, drow + g.out_w, 0.0f);
            continue;
          }
          const float* srow = src + y * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t x = ox * g.sw - g.pw + j * g.dw;
            drow[ox] = (x >= 0 && x < g.width) ? srow[x] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const PatchGeometry& g, const float* cols, float* image) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    float* dst = image + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const float* src = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.sh - g.ph + i * g.dh;
          if (y < 0 || y >= g.height) continue;
          float* drow = dst + y * g.width;
          const float* srow = src + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t x = ox * g.sw - g.pw + j * g.dw;
            if (x >= 0 && x < g.width) drow[x] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace dcst::detail
