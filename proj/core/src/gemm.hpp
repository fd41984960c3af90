#pragma once

#include <cstdint>

namespace dcst::detail {

// Row-major C[M x N] = op(A) * op(B), or C += op(A) * op(B) when accumulate.
// op(A) is M x K: A is stored M x K, or K x M when trans_a.
// op(B) is K x N: B is stored K x N, or N x K when trans_b.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate);

// Dilated, strided, zero-padded patch extraction for one image.
// cols has shape [channels * kh * kw, out_h * out_w].
struct PatchGeometry {
  std::int64_t channels, height, width;
  std::int64_t kh, kw, sh, sw, ph, pw, dh, dw;
  std::int64_t out_h, out_w;
};

void im2col(const PatchGeometry& g, const float* image, float* cols);
// Adjoint of im2col: scatter-adds cols back into image.
void col2im(const PatchGeometry& g, const float* cols, float* image);

}  // namespace dcst::detail
