#include "dcst/dcb.hpp"

#include <algorithm>

namespace dcst {

bool DcbConfig::attached_to(int stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void DcbConfig::validate() const {
  for (auto r : rates)
    if (r < 1) throw ConfigError("dcb.rates must be positive");
  for (auto s : stages)
    if (s < 1 || s > 4) throw ConfigError("dcb.stages entries must be in 1..4");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("dcb kernel must be odd");
}

std::int64_t DcbConfig::receptive_span() const {
  return 1 + (rates[0] + rates[1]) * (kernel - 1);
}

Tensor tokens_to_map(const TokenGrid& grid) {
  // [b, hw, c] -> [b, c, hw] viewed as [b, c, h, w]
  auto t = permute(grid.tokens, {0, 2, 1});
  return reshape(t, {grid.batch, grid.channels, grid.height, grid.width});
}

TokenGrid map_to_tokens(const Tensor& map) {
  if (map.rank() != 4) throw ShapeError("map_to_tokens: expected [N, C, H, W]");
  const auto n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  auto flat = reshape(map, {n, c, h * w});
  return TokenGrid::wrap(permute(flat, {0, 2, 1}), h, w);
}

DilatedConvBlock::DilatedConvBlock(std::int64_t channels, const DcbConfig& config, Rng& rng)
    : channels_(channels) {
  config.validate();
  const auto k = config.kernel;
  for (std::size_t i = 0; i < 2; ++i) {
    auto& layer = layers_[i];
    const auto rate = config.rates[i];
    layer.spec = ConvSpec::square(channels, channels, k, 1, rate, rate);
    // Center-tap identity plus small noise: an untrained block is close to a
    // pass-through.
    std::vector<float> w(static_cast<std::size_t>(channels * channels * k * k));
    for (auto& v : w) v = static_cast<float>(rng.normal(0.0, 0.01));
    for (std::int64_t c = 0; c < channels; ++c) w[((c * channels + c) * k + k / 2) * k + k / 2] += 1.0f;
    layer.weight = Tensor::from({channels, channels, k, k}, std::move(w), true);
    layer.gamma = constant_param({channels}, 1.0f);
    layer.beta = constant_param({channels}, 0.0f);
    layer.stats = BatchNormStats::make(channels);
  }
}

Tensor DilatedConvBlock::forward(const Tensor& map, Mode mode) {
  if (map.rank() != 4 || map.dim(1) != channels_) {
    throw ShapeError("DCB: expected " + std::to_string(channels_) + " channels, got " +
                     to_string(map.shape()));
  }
  Tensor x = map;
  for (auto& layer : layers_) {
    x = conv2d(x, layer.weight, {}, layer.spec);
    x = batch_norm(x, layer.gamma, layer.beta, layer.stats, mode);
    x = relu(x);
  }
  return x;
}

TokenGrid DilatedConvBlock::forward(const TokenGrid& grid, Mode mode) {
  return map_to_tokens(forward(tokens_to_map(grid), mode));
}

void DilatedConvBlock::collect(ParameterSet& set, const std::string& prefix) {
  for (std::size_t i = 0; i < 2; ++i) {
    const auto base = join_path(prefix, "conv" + std::to_string(i + 1));
    const auto bn = join_path(prefix, "bn" + std::to_string(i + 1));
    set.add_param(base + ".weight", layers_[i].weight, ParamGroup::dcb);
    set.add_param(bn + ".gamma", layers_[i].gamma, ParamGroup::dcb);
    set.add_param(bn + ".beta", layers_[i].beta, ParamGroup::dcb);
    set.add_buffer(bn + ".running_mean", layers_[i].stats.running_mean);
    set.add_buffer(bn + ".running_var", layers_[i].stats.running_var);
  }
}

void DilatedConvBlock::set_identity() {
  for (auto& layer : layers_) {
    auto w = layer.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0f);
    const auto k = layer.spec.kernel_h;
    for (std::int64_t c = 0; c < channels_; ++c) w[((c * channels_ + c) * k + k / 2) * k + k / 2] = 1.0f;
    auto g = layer.gamma.mutable_data();
    std::fill(g.begin(), g.end(), 1.0f);
    auto b = layer.beta.mutable_data();
    std::fill(b.begin(), b.end(), 0.0f);
    auto rm = layer.stats.running_mean.mutable_data();
    std::fill(rm.begin(), rm.end(), 0.0f);
    auto rv = layer.stats.running_var.mutable_data();
    std::fill(rv.begin(), rv.end(), 1.0f);
  }
}

}  // namespace dcst
