#include "dcst/swin.hpp"

#include <cmath>

namespace dcst {

namespace {

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

// Region label used by the shifted-window mask along one axis.
std::int64_t shift_region(std::int64_t pos, std::int64_t extent, std::int64_t window,
                          std::int64_t shift) {
  if (pos < extent - window) return 0;
  if (pos < extent - shift) return 1;
  return 2;
}

}  // namespace

std::int64_t effective_window(std::int64_t window, std::int64_t height, std::int64_t width) {
  if (window <= 0) throw ShapeError("window size must be positive");
  const auto smallest = std::min(height, width);
  return smallest <= window ? smallest : window;
}

AttentionMask shifted_window_mask(std::int64_t padded_h, std::int64_t padded_w,
                                  std::int64_t window, std::int64_t shift) {
  if (window <= 0 || padded_h % window != 0 || padded_w % window != 0) {
    throw ShapeError("shifted_window_mask: grid must be a multiple of the window");
  }
  const auto wy_count = padded_h / window, wx_count = padded_w / window;
  const auto n = window * window;
  std::vector<float> mask(static_cast<std::size_t>(wy_count * wx_count * n * n), 0.0f);
  std::vector<std::int64_t> region(static_cast<std::size_t>(n));
  for (std::int64_t wy = 0; wy < wy_count; ++wy)
    for (std::int64_t wx = 0; wx < wx_count; ++wx) {
      for (std::int64_t i = 0; i < window; ++i)
        for (std::int64_t j = 0; j < window; ++j) {
          const auto ry = shift_region(wy * window + i, padded_h, window, shift);
          const auto rx = shift_region(wx * window + j, padded_w, window, shift);
          region[i * window + j] = ry * 3 + rx;
        }
      float* m = mask.data() + (wy * wx_count + wx) * n * n;
      for (std::int64_t p = 0; p < n; ++p)
        for (std::int64_t q = 0; q < n; ++q)
          m[p * n + q] = region[p] == region[q] ? 0.0f : kMaskedScore;
    }
  return {Tensor::from({wy_count * wx_count, n, n}, std::move(mask)), window};
}

Tensor window_partition(const TokenGrid& grid, std::int64_t window) {
  if (window <= 0) throw ShapeError("window_partition: window size must be positive");
  const auto h = grid.height, w = grid.width, c = grid.channels;
  const auto hp = round_up(h, window), wp = round_up(w, window);
  const auto wy_count = hp / window, wx_count = wp / window;
  const auto n = window * window;
  std::vector<std::int64_t> index(static_cast<std::size_t>(grid.batch * wy_count * wx_count * n * c));
  std::size_t k = 0;
  for (std::int64_t b = 0; b < grid.batch; ++b)
    for (std::int64_t wy = 0; wy < wy_count; ++wy)
      for (std::int64_t wx = 0; wx < wx_count; ++wx)
        for (std::int64_t i = 0; i < window; ++i)
          for (std::int64_t j = 0; j < window; ++j) {
            const auto y = wy * window + i, x = wx * window + j;
            const bool inside = y < h && x < w;
            const auto base = (b * h * w + y * w + x) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) index[k++] = inside ? base + ch : -1;
          }
  return gather(grid.tokens, std::move(index), {grid.batch * wy_count * wx_count, n, c});
}

TokenGrid window_reverse(const Tensor& windows, std::int64_t window, std::int64_t height,
                         std::int64_t width) {
  if (window <= 0) throw ShapeError("window_reverse: window size must be positive");
  if (windows.rank() != 3 || windows.dim(1) != window * window) {
    throw ShapeError("window_reverse: expected [B, M*M, C], got " + to_string(windows.shape()));
  }
  const auto hp = round_up(height, window), wp = round_up(width, window);
  const auto wx_count = wp / window;
  const auto per_image = (hp / window) * wx_count;
  if (windows.dim(0) % per_image != 0) {
    throw ShapeError("window_reverse: " + std::to_string(windows.dim(0)) +
                     " windows do not tile a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid");
  }
  const auto batch = windows.dim(0) / per_image;
  const auto c = windows.dim(2);
  const auto n = window * window;
  std::vector<std::int64_t> index(static_cast<std::size_t>(batch * height * width * c));
  std::size_t k = 0;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t x = 0; x < width; ++x) {
        const auto win = b * per_image + (y / window) * wx_count + x / window;
        const auto base = (win * n + (y % window) * window + x % window) * c;
        for (std::int64_t ch = 0; ch < c; ++ch) index[k++] = base + ch;
      }
  return TokenGrid::wrap(gather(windows, std::move(index), {batch, height * width, c}), height,
                         width);
}

// ----------------------------------------------------------------- attention

WindowAttention::WindowAttention(std::int64_t channels, std::int64_t heads, Rng& rng)
    : channels_(channels), heads_(heads) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  qkv_weight = trunc_normal_param({3 * channels, channels}, rng);
  qkv_bias = constant_param({3 * channels}, 0.0f);
  proj_weight = trunc_normal_param({channels, channels}, rng);
  proj_bias = constant_param({channels}, 0.0f);
}

Tensor WindowAttention::forward(const Tensor& windows, const AttentionMask* mask,
                                Tensor* weights) const {
  if (windows.rank() != 3 || windows.dim(2) != channels_) {
    throw ShapeError("attention: expected [B, n, " + std::to_string(channels_) + "], got " +
                     to_string(windows.shape()));
  }
  const auto b = windows.dim(0), n = windows.dim(1), c = channels_;
  const auto d = c / heads_;
  auto qkv = linear(windows, qkv_weight, qkv_bias);  // [B, n, 3C]

  auto split = [&](std::int64_t part) {
    std::vector<std::int64_t> index(static_cast<std::size_t>(heads_ * b * n * d));
    std::size_t k = 0;
    for (std::int64_t h = 0; h < heads_; ++h)
      for (std::int64_t w = 0; w < b; ++w)
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < d; ++j)
            index[k++] = (w * n + i) * 3 * c + part * c + h * d + j;
    return gather(qkv, std::move(index), {heads_ * b, n, d});
  };
  auto q = split(0), k = split(1), v = split(2);

  auto scores = scale(bmm(q, k, true), static_cast<float>(1.0 / std::sqrt(double(d))));
  if (mask != nullptr) {
    const auto nw = mask->num_windows();
    if (mask->mask.dim(1) != n || b % nw != 0) {
      throw ShapeError("attention: mask " + to_string(mask->mask.shape()) +
                       " does not fit windows " + to_string(windows.shape()));
    }
    scores = reshape(add(reshape(scores, {heads_ * b / nw, nw, n, n}), mask->mask),
                     {heads_ * b, n, n});
  }
  auto attn = softmax(scores, -1);
  if (weights != nullptr) *weights = attn;
  auto out = bmm(attn, v);  // [heads*B, n, d]

  std::vector<std::int64_t> index(static_cast<std::size_t>(b * n * c));
  std::size_t k2 = 0;
  for (std::int64_t w = 0; w < b; ++w)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t h = 0; h < heads_; ++h)
        for (std::int64_t j = 0; j < d; ++j) index[k2++] = ((h * b + w) * n + i) * d + j;
  auto merged = gather(out, std::move(index), {b, n, c});
  return linear(merged, proj_weight, proj_bias);
}

void WindowAttention::collect(ParameterSet& set, const std::string& prefix) {
  set.add_param(join_path(prefix, "qkv.weight"), qkv_weight);
  set.add_param(join_path(prefix, "qkv.bias"), qkv_bias);
  set.add_param(join_path(prefix, "proj.weight"), proj_weight);
  set.add_param(join_path(prefix, "proj.bias"), proj_bias);
}

Mlp::Mlp(std::int64_t channels, Rng& rng, std::int64_t ratio) {
  fc1_weight = trunc_normal_param({ratio * channels, channels}, rng);
  fc1_bias = constant_param({ratio * channels}, 0.0f);
  fc2_weight = trunc_normal_param({channels, ratio * channels}, rng);
  fc2_bias = constant_param({channels}, 0.0f);
}

Tensor Mlp::forward(const Tensor& x) const {
  return linear(gelu(linear(x, fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
}

void Mlp::collect(ParameterSet& set, const std::string& prefix) {
  set.add_param(join_path(prefix, "fc1.weight"), fc1_weight);
  set.add_param(join_path(prefix, "fc1.bias"), fc1_bias);
  set.add_param(join_path(prefix, "fc2.weight"), fc2_weight);
  set.add_param(join_path(prefix, "fc2.bias"), fc2_bias);
}

LayerNormParams LayerNormParams::make(std::int64_t dim) {
  return {constant_param({dim}, 1.0f), constant_param({dim}, 0.0f)};
}

void LayerNormParams::collect(ParameterSet& set, const std::string& prefix) {
  set.add_param(join_path(prefix, "gamma"), gamma);
  set.add_param(join_path(prefix, "beta"), beta);
}

// --------------------------------------------------------------------- block

SwinBlock::SwinBlock(std::int64_t channels, std::int64_t heads, std::int64_t window,
                     bool shifted, Rng& rng)
    : norm1(LayerNormParams::make(channels)),
      norm2(LayerNormParams::make(channels)),
      attn(channels, heads, rng),
      mlp(channels, rng),
      window_(window),
      shifted_(shifted) {}

TokenGrid SwinBlock::attention_residual(const TokenGrid& grid) const {
  const auto h = grid.height, w = grid.width;
  const auto m = effective_window(window_, h, w);
  const auto shift = (shifted_ && m < std::min(h, w)) ? m / 2 : 0;
  const auto hp = round_up(h, m), wp = round_up(w, m);

  auto x = TokenGrid::wrap(norm1(grid.tokens), h, w);
  x = pad_grid(x, hp, wp);
  std::optional<AttentionMask> mask;
  if (shift > 0) {
    x = cyclic_shift(x, shift, shift);
    mask = shifted_window_mask(hp, wp, m, shift);
  }
  auto windows = attn.forward(window_partition(x, m), mask ? &*mask : nullptr);
  auto y = window_reverse(windows, m, hp, wp);
  if (shift > 0) y = cyclic_shift(y, -shift, -shift);
  y = crop_grid(y, h, w);
  return TokenGrid::wrap(add(grid.tokens, y.tokens), h, w);
}

Tensor SwinBlock::mlp_residual(const Tensor& tokens) const {
  return add(tokens, mlp.forward(norm2(tokens)));
}

TokenGrid SwinBlock::forward(const TokenGrid& grid) const {
  auto z = attention_residual(grid);
  return TokenGrid::wrap(mlp_residual(z.tokens), z.height, z.width);
}

void SwinBlock::collect(ParameterSet& set, const std::string& prefix) {
  norm1.collect(set, join_path(prefix, "norm1"));
  attn.collect(set, join_path(prefix, "attn"));
  norm2.collect(set, join_path(prefix, "norm2"));
  mlp.collect(set, join_path(prefix, "mlp"));
}

// ------------------------------------------------------------ patch embedding

PatchEmbed::PatchEmbed(std::int64_t in_channels, std::int64_t channels, std::int64_t grid_h,
                       std::int64_t grid_w, Rng& rng)
    : grid_h_(grid_h), grid_w_(grid_w) {
  weight = trunc_normal_param({channels, in_channels * kPatch * kPatch}, rng);
  bias = constant_param({channels}, 0.0f);
  pos_embed = trunc_normal_param({grid_h * grid_w, channels}, rng);
}

Tensor PatchEmbed::extract_patches(const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("patch_embed: expected [N, C, H, W]");
  const auto n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (h % kPatch != 0 || w % kPatch != 0) {
    throw ShapeError("patch_embed: " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the patch size 4");
  }
  const auto gh = h / kPatch, gw = w / kPatch;
  const auto dim = c * kPatch * kPatch;
  std::vector<std::int64_t> index(static_cast<std::size_t>(n * gh * gw * dim));
  std::size_t k = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t gy = 0; gy < gh; ++gy)
      for (std::int64_t gx = 0; gx < gw; ++gx)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t i = 0; i < kPatch; ++i)
            for (std::int64_t j = 0; j < kPatch; ++j)
              index[k++] = ((b * c + ch) * h + gy * kPatch + i) * w + gx * kPatch + j;
  return gather(image, std::move(index), {n, gh * gw, dim});
}

Tensor PatchEmbed::position_embedding(std::int64_t gh, std::int64_t gw) const {
  if (gh == grid_h_ && gw == grid_w_) return pos_embed;
  // Nearest-neighbour resampling of the native grid for other input sizes.
  const auto c = pos_embed.dim(1);
  std::vector<std::int64_t> index(static_cast<std::size_t>(gh * gw * c));
  std::size_t k = 0;
  for (std::int64_t y = 0; y < gh; ++y)
    for (std::int64_t x = 0; x < gw; ++x) {
      const auto sy = y * grid_h_ / gh, sx = x * grid_w_ / gw;
      for (std::int64_t ch = 0; ch < c; ++ch) index[k++] = (sy * grid_w_ + sx) * c + ch;
    }
  return gather(pos_embed, std::move(index), {gh * gw, c});
}

TokenGrid PatchEmbed::forward(const Tensor& image) const {
  if (image.rank() == 4 && image.dim(1) * kPatch * kPatch != weight.dim(1)) {
    throw ShapeError("patch_embed: image has " + std::to_string(image.dim(1)) + " channels");
  }
  auto patches = extract_patches(image);
  const auto gh = image.dim(2) / kPatch, gw = image.dim(3) / kPatch;
  auto tokens = add(linear(patches, weight, bias), position_embedding(gh, gw));
  return TokenGrid::wrap(tokens, gh, gw);
}

void PatchEmbed::collect(ParameterSet& set, const std::string& prefix) {
  set.add_param(join_path(prefix, "weight"), weight);
  set.add_param(join_path(prefix, "bias"), bias);
  set.add_param(join_path(prefix, "pos_embed"), pos_embed);
}

// ------------------------------------------------------------- patch merging

PatchMerging::PatchMerging(std::int64_t channels, Rng& rng)
    : norm(LayerNormParams::make(4 * channels)),
      reduction(trunc_normal_param({2 * channels, 4 * channels}, rng)) {}

TokenGrid PatchMerging::gather_neighbourhoods(const TokenGrid& grid) {
  const auto h = grid.height + grid.height % 2, w = grid.width + grid.width % 2;
  const auto src = pad_grid(grid, h, w);
  const auto c = grid.channels;
  const auto oh = h / 2, ow = w / 2;
  constexpr std::int64_t kOffsets[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  std::vector<std::int64_t> index(static_cast<std::size_t>(grid.batch * oh * ow * 4 * c));
  std::size_t k = 0;
  for (std::int64_t b = 0; b < grid.batch; ++b)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x)
        for (const auto& off : kOffsets) {
          const auto base = (b * h * w + (2 * y + off[0]) * w + 2 * x + off[1]) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) index[k++] = base + ch;
        }
  return TokenGrid::wrap(gather(src.tokens, std::move(index), {grid.batch, oh * ow, 4 * c}), oh,
                         ow);
}

TokenGrid PatchMerging::forward(const TokenGrid& grid) const {
  auto g = gather_neighbourhoods(grid);
  return TokenGrid::wrap(linear(norm(g.tokens), reduction, {}), g.height, g.width);
}

void PatchMerging::collect(ParameterSet& set, const std::string& prefix) {
  norm.collect(set, join_path(prefix, "norm"));
  set.add_param(join_path(prefix, "reduction.weight"), reduction);
}

// ------------------------------------------------------------------- encoder

StageConfig EncoderConfig::stage(int index) const {
  StageConfig s;
  s.depth = depths[index];
  s.heads = heads[index];
  s.window = window;
  s.channels = embed_dim << index;
  return s;
}

void EncoderConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("model.embed_dim must be positive");
  if (window < 1) throw ConfigError("model.window must be positive");
  if (image_h % SwinEncoder::kInputMultiple != 0 || image_w % SwinEncoder::kInputMultiple != 0 ||
      image_h < 1 || image_w < 1) {
    throw ConfigError("model.image_h/image_w must be positive multiples of 32");
  }
  for (int s = 0; s < 4; ++s) {
    if (depths[s] < 0) throw ConfigError("model.depths must be non-negative");
    if (heads[s] < 1 || (embed_dim << s) % heads[s] != 0) {
      throw ConfigError("model.heads[" + std::to_string(s) + "] must divide the stage width");
    }
  }
}

SwinEncoder::SwinEncoder(const EncoderConfig& config, const DcbConfig& dcb, Rng& rng)
    : config_(config) {
  config.validate();
  dcb.validate();
  embed = PatchEmbed(config.in_channels, config.embed_dim, config.image_h / PatchEmbed::kPatch,
                     config.image_w / PatchEmbed::kPatch, rng);
  for (int s = 0; s < 4; ++s) {
    const auto st = config.stage(s);
    if (s > 0) merges[s] = PatchMerging(st.channels / 2, rng);
    for (int i = 0; i < st.depth; ++i) {
      blocks[s].emplace_back(st.channels, st.heads, st.window, i % 2 == 1, rng);
    }
    if (dcb.attached_to(s + 1)) dcbs[s] = DilatedConvBlock(st.channels, dcb, rng);
    out_norms[s] = LayerNormParams::make(st.channels);
  }
}

std::array<TokenGrid, 4> SwinEncoder::forward(const Tensor& image, Mode mode) {
  if (image.rank() != 4 || image.dim(2) % kInputMultiple != 0 ||
      image.dim(3) % kInputMultiple != 0) {
    throw ShapeError("encoder: input must be [N, C, H, W] with H, W multiples of 32, got " +
                     to_string(image.shape()));
  }
  std::array<TokenGrid, 4> outs;
  auto g = embed.forward(image);
  for (int s = 0; s < 4; ++s) {
    if (merges[s]) g = merges[s]->forward(g);
    for (const auto& blk : blocks[s]) g = blk.forward(g);
    if (dcbs[s]) g = dcbs[s]->forward(g, mode);
    outs[s] = TokenGrid::wrap(out_norms[s](g.tokens), g.height, g.width);
  }
  return outs;
}

void SwinEncoder::collect(ParameterSet& set, const std::string& prefix) {
  embed.collect(set, join_path(prefix, "embed"));
  for (int s = 0; s < 4; ++s) {
    const auto stage = join_path(prefix, "stage" + std::to_string(s + 1));
    if (merges[s]) merges[s]->collect(set, join_path(stage, "merge"));
    for (std::size_t i = 0; i < blocks[s].size(); ++i)
      blocks[s][i].collect(set, join_path(stage, "block" + std::to_string(i)));
    if (dcbs[s]) dcbs[s]->collect(set, join_path(stage, "dcb"));
    out_norms[s].collect(set, join_path(stage, "out_norm"));
  }
}

}  // namespace dcst
