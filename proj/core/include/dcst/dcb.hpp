#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dcst/ops.hpp"
#include "dcst/params.hpp"
#include "dcst/token_grid.hpp"

namespace dcst {

/// Dilated convolutional block settings. Stages are 1-based encoder stage
/// indices; an empty list disables the block (plain Swin encoder).
struct DcbConfig {
  std::array<std::int64_t, 2> rates{2, 3};
  std::vector<int> stages{3, 4};
  std::int64_t kernel = 3;

  bool attached_to(int stage) const;
  void validate() const;
  /// Receptive-field span of the two stacked convolutions: 1 + sum d_i (k - 1).
  std::int64_t receptive_span() const;
};

/// [batch, h*w, c] tokens -> [batch, c, h, w] feature map. Lossless.
Tensor tokens_to_map(const TokenGrid& grid);
/// Inverse of tokens_to_map.
TokenGrid map_to_tokens(const Tensor& map);

/// conv(3x3, d=r1, pad=r1) -> BN -> ReLU -> conv(3x3, d=r2, pad=r2) -> BN -> ReLU.
/// Channel count and spatial size are preserved.
class DilatedConvBlock {
 public:
  DilatedConvBlock() = default;
  DilatedConvBlock(std::int64_t channels, const DcbConfig& config, Rng& rng);

  Tensor forward(const Tensor& map, Mode mode);
  TokenGrid forward(const TokenGrid& grid, Mode mode);

  void collect(ParameterSet& set, const std::string& prefix);

  std::int64_t channels() const { return channels_; }
  /// Puts the block in its exact pass-through configuration: center-tap
  /// identity kernels, unit BN statistics, gamma 1 and beta 0.
  void set_identity();

  struct Layer {
    Tensor weight;  // [C, C, k, k]
    Tensor gamma, beta;
    BatchNormStats stats;
    ConvSpec spec;
  };
  std::array<Layer, 2>& layers() { return layers_; }

 private:
  std::int64_t channels_ = 0;
  std::array<Layer, 2> layers_;
};

}  // namespace dcst
