#pragma once

#include <cstdint>
#include <vector>

#include "dcst/tensor.hpp"

namespace dcst {

/// Geometry of a 2-D cross-correlation. Each axis obeys
/// out = floor((in + 2p - d(k-1) - 1) / s) + 1, which must be >= 1.
struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 3, kernel_w = 3;
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;
  std::int64_t dilation_h = 1, dilation_w = 1;

  static ConvSpec square(std::int64_t in, std::int64_t out, std::int64_t kernel,
                         std::int64_t stride = 1, std::int64_t pad = 0,
                         std::int64_t dilation = 1);

  void validate() const;
  std::int64_t span_h() const { return dilation_h * (kernel_h - 1) + 1; }
  std::int64_t span_w() const { return dilation_w * (kernel_w - 1) + 1; }
  /// Output extent along one axis; throws ShapeError when it would be < 1.
  std::int64_t out_h(std::int64_t in_h) const;
  std::int64_t out_w(std::int64_t in_w) const;
};

// Elementwise arithmetic. `b` may either match `a` exactly or match a suffix
// of a's shape, in which case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float value);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over the leading axis: [B,m,k] x [B,k,n] -> [B,m,n]. With
/// transpose_b the second operand is [B,n,k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// y = x W^T + b over the last axis of x; w is [out, in], bias [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);

inline constexpr float kNormEps = 1e-5f;

/// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = kNormEps);

enum class Mode { train, eval };

/// Running statistics owned by a BatchNorm layer; updated in train mode.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = kNormEps;

  static BatchNormStats make(std::int64_t channels);
};

/// x is [N, C, H, W]; statistics are per channel over N, H and W.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, Mode mode);

enum class Activation { gelu, relu, sigmoid };

Tensor activation(Activation kind, const Tensor& x);
inline Tensor relu(const Tensor& x) { return activation(Activation::relu, x); }
inline Tensor gelu(const Tensor& x) { return activation(Activation::gelu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::sigmoid, x); }

/// x [N, Cin, H, W], w [Cout, Cin, kh, kw], bias [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec);

/// Adjoint of a stride-s convolution with kernel 2s and padding s/2, so the
/// output is exactly s times larger per axis. w is [Cin, Cout, 2s, 2s].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::int64_t stride);

/// out[i] = x[index[i]], or 0 where index[i] < 0. Every structural reshuffle
/// (window partition, cyclic shift, padding, patch gathers) is a gather.
Tensor gather(const Tensor& x, std::vector<std::int64_t> index, Shape out_shape);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

/// Nearest-neighbour upsampling of [N, C, H, W] by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::int64_t factor);
/// Zero padding at the bottom/right of [N, C, H, W].
Tensor pad_bottom_right(const Tensor& x, std::int64_t pad_h, std::int64_t pad_w);
/// Top-left crop of [N, C, H, W].
Tensor crop_top_left(const Tensor& x, std::int64_t h, std::int64_t w);

Tensor mse_loss(const Tensor& prediction, const Tensor& target);

}  // namespace dcst
