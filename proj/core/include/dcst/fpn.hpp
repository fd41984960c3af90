#pragma once

#include <array>
#include <cstdint>

#include "dcst/ops.hpp"
#include "dcst/params.hpp"
#include "dcst/token_grid.hpp"

namespace dcst {

struct FpnConfig {
  std::int64_t lateral_dim = 256;
  /// Channels of the segmentation head between its conv and deconvs.
  std::int64_t head_dim = 64;
  /// The head always restores full input resolution.
  static constexpr std::int64_t out_stride = 1;

  void validate() const;
};

/// Top-down feature pyramid over the four encoder stages.
class FpnDecoder {
 public:
  FpnDecoder() = default;
  /// in_channels: channel count of each stage, finest first.
  FpnDecoder(const std::array<std::int64_t, 4>& in_channels, const FpnConfig& config, Rng& rng);

  /// Returns the smoothed finest level, [N, lateral_dim, H0, W0].
  Tensor fuse(const std::array<TokenGrid, 4>& features) const;

  void collect(ParameterSet& set, const std::string& prefix);

  struct Conv {
    Tensor weight, bias;
    ConvSpec spec;
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, spec); }
  };
  std::array<Conv, 4> lateral;  // 1x1
  Conv smooth;                  // 3x3

 private:
  std::array<std::int64_t, 4> in_channels_{};
};

/// 3x3 conv -> deconv x2 -> ReLU -> deconv x2 to one channel.
class SegHead {
 public:
  SegHead() = default;
  SegHead(std::int64_t in_channels, std::int64_t head_dim, Rng& rng);

  /// Pre-sigmoid logits [N, 1, 4H, 4W].
  Tensor logits(const Tensor& fused) const;
  /// sigmoid(logits); values lie strictly inside (0, 1).
  Tensor forward(const Tensor& fused) const { return sigmoid(logits(fused)); }

  void collect(ParameterSet& set, const std::string& prefix);

  Tensor conv_weight, conv_bias;        // [D, L, 3, 3]
  Tensor deconv1_weight, deconv1_bias;  // [D, D, 4, 4]
  Tensor deconv2_weight, deconv2_bias;  // [D, 1, 4, 4]
  ConvSpec conv_spec;
};

}  // namespace dcst
