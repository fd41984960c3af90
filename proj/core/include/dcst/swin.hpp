#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dcst/dcb.hpp"
#include "dcst/ops.hpp"
#include "dcst/params.hpp"
#include "dcst/token_grid.hpp"

namespace dcst {

struct StageConfig {
  int depth = 2;
  std::int64_t heads = 4;
  std::int64_t window = 7;
  std::int64_t channels = 128;
};

/// Additive attention mask for shifted windows: [num_windows, M*M, M*M],
/// 0 for allowed pairs, kMaskedScore for pairs that were not spatially
/// adjacent before the cyclic shift.
struct AttentionMask {
  Tensor mask;
  std::int64_t window = 0;
  std::int64_t num_windows() const { return mask.dim(0); }
};

inline constexpr float kMaskedScore = -1e9f;

/// Builds the mask for a padded_h x padded_w grid shifted by `shift`.
AttentionMask shifted_window_mask(std::int64_t padded_h, std::int64_t padded_w,
                                  std::int64_t window, std::int64_t shift);

/// Window size actually used on a grid: grids no larger than the window are
/// covered by one window and never shifted.
std::int64_t effective_window(std::int64_t window, std::int64_t height, std::int64_t width);

/// [batch * nW, M*M, C]; the grid is zero-padded up to a multiple of M.
/// Windows are ordered batch-major, then row-major over the window grid.
Tensor window_partition(const TokenGrid& grid, std::int64_t window);
/// Inverse of window_partition; height/width are the unpadded grid size.
TokenGrid window_reverse(const Tensor& windows, std::int64_t window, std::int64_t height,
                         std::int64_t width);

/// Multi-head scaled dot-product attention inside each window, followed by
/// the output projection.
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(std::int64_t channels, std::int64_t heads, Rng& rng);

  /// windows: [B, n, C]. `weights`, if given, receives the post-softmax
  /// attention [heads * B, n, n] (head-major).
  Tensor forward(const Tensor& windows, const AttentionMask* mask = nullptr,
                 Tensor* weights = nullptr) const;

  void collect(ParameterSet& set, const std::string& prefix);

  std::int64_t heads() const { return heads_; }
  Tensor qkv_weight, qkv_bias;    // [3C, C], [3C]
  Tensor proj_weight, proj_bias;  // [C, C], [C]

 private:
  std::int64_t channels_ = 0;
  std::int64_t heads_ = 1;
};

/// Two-layer GELU MLP with hidden ratio 4.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::int64_t channels, Rng& rng, std::int64_t ratio = 4);
  Tensor forward(const Tensor& x) const;
  void collect(ParameterSet& set, const std::string& prefix);

  Tensor fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

struct LayerNormParams {
  Tensor gamma, beta;
  static LayerNormParams make(std::int64_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(ParameterSet& set, const std::string& prefix);
};

/// Pre-norm transformer block over (optionally shifted) windows:
///   z' = W-MSA(LN(z)) + z,  z = MLP(LN(z')) + z'.
class SwinBlock {
 public:
  SwinBlock() = default;
  SwinBlock(std::int64_t channels, std::int64_t heads, std::int64_t window, bool shifted,
            Rng& rng);

  TokenGrid forward(const TokenGrid& grid) const;
  /// z + W-MSA(LN(z)) with shift, mask and window padding handled here.
  TokenGrid attention_residual(const TokenGrid& grid) const;
  /// z + MLP(LN(z)) over a token tensor.
  Tensor mlp_residual(const Tensor& tokens) const;

  void collect(ParameterSet& set, const std::string& prefix);

  bool shifted() const { return shifted_; }
  std::int64_t window() const { return window_; }
  LayerNormParams norm1, norm2;
  WindowAttention attn;
  Mlp mlp;

 private:
  std::int64_t window_ = 7;
  bool shifted_ = false;
};

/// Splits the image into 4x4 patches, projects each to C channels and adds a
/// learned position embedding (no class token).
class PatchEmbed {
 public:
  static constexpr std::int64_t kPatch = 4;

  PatchEmbed() = default;
  /// grid_h x grid_w is the native position-embedding grid (image size / 4).
  PatchEmbed(std::int64_t in_channels, std::int64_t channels, std::int64_t grid_h,
             std::int64_t grid_w, Rng& rng);

  TokenGrid forward(const Tensor& image) const;
  /// Pre-projection patch vectors [N, L, in_channels * 16], (c, i, j) order.
  static Tensor extract_patches(const Tensor& image);
  void collect(ParameterSet& set, const std::string& prefix);

  Tensor weight, bias;  // [C, in*16], [C]
  Tensor pos_embed;     // [grid_h * grid_w, C]

 private:
  Tensor position_embedding(std::int64_t grid_h, std::int64_t grid_w) const;
  std::int64_t grid_h_ = 0, grid_w_ = 0;
};

/// 2x2 neighbourhood concatenation (top-left, top-right, bottom-left,
/// bottom-right), LayerNorm over 4C, linear 4C -> 2C without bias.
class PatchMerging {
 public:
  PatchMerging() = default;
  PatchMerging(std::int64_t channels, Rng& rng);

  TokenGrid forward(const TokenGrid& grid) const;
  /// The lossless gather step: [N, (H/2)(W/2), 4C]. Odd grids are zero-padded.
  static TokenGrid gather_neighbourhoods(const TokenGrid& grid);
  void collect(ParameterSet& set, const std::string& prefix);

  LayerNormParams norm;
  Tensor reduction;  // [2C, 4C]
};

struct EncoderConfig {
  std::int64_t in_channels = 3;
  std::int64_t embed_dim = 128;
  std::array<int, 4> depths{2, 2, 18, 2};
  std::array<std::int64_t, 4> heads{4, 8, 16, 32};
  std::int64_t window = 7;
  /// Native input size; sets the position-embedding grid (size / 4).
  std::int64_t image_h = 512, image_w = 1024;

  StageConfig stage(int index) const;  // 0-based
  void validate() const;
};

/// Four-stage hierarchical encoder with optional dilated-conv blocks after
/// configured stages. Outputs have channels (C, 2C, 4C, 8C) at strides
/// (4, 8, 16, 32).
class SwinEncoder {
 public:
  static constexpr std::int64_t kInputMultiple = 32;

  SwinEncoder() = default;
  SwinEncoder(const EncoderConfig& config, const DcbConfig& dcb, Rng& rng);

  /// image: [N, C, H, W] with H, W multiples of 32.
  std::array<TokenGrid, 4> forward(const Tensor& image, Mode mode);

  void collect(ParameterSet& set, const std::string& prefix);

  const EncoderConfig& config() const { return config_; }
  PatchEmbed embed;
  std::array<std::optional<PatchMerging>, 4> merges;  // merges[0] unused
  std::array<std::vector<SwinBlock>, 4> blocks;
  std::array<std::optional<DilatedConvBlock>, 4> dcbs;
  std::array<LayerNormParams, 4> out_norms;

 private:
  EncoderConfig config_;
};

}  // namespace dcst
