#include "dcst/fpn.hpp"

#include <cmath>

#include "dcst/dcb.hpp"

namespace dcst {

namespace {

// Deconv weights [Cin, Cout, 2s, 2s]; each output pixel sees Cin * 4 taps.
Tensor deconv_param(std::int64_t cin, std::int64_t cout, Rng& rng, double gain = 2.0) {
  const double stddev = std::sqrt(gain / static_cast<double>(cin * 4));
  std::vector<float> v(static_cast<std::size_t>(cin * cout * 16));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor::from({cin, cout, 4, 4}, std::move(v), true);
}

}  // namespace

void FpnConfig::validate() const {
  if (lateral_dim < 1) throw ConfigError("fpn.lateral_dim must be positive");
  if (head_dim < 1) throw ConfigError("fpn.head_dim must be positive");
}

FpnDecoder::FpnDecoder(const std::array<std::int64_t, 4>& in_channels, const FpnConfig& config,
                       Rng& rng)
    : in_channels_(in_channels) {
  config.validate();
  const auto l = config.lateral_dim;
  for (std::size_t s = 0; s < 4; ++s) {
    lateral[s].spec = ConvSpec::square(in_channels[s], l, 1);
    lateral[s].weight = kaiming_conv_param({l, in_channels[s], 1, 1}, rng);
    lateral[s].bias = constant_param({l}, 0.0f);
  }
  smooth.spec = ConvSpec::square(l, l, 3, 1, 1);
  smooth.weight = kaiming_conv_param({l, l, 3, 3}, rng);
  smooth.bias = constant_param({l}, 0.0f);
}

Tensor FpnDecoder::fuse(const std::array<TokenGrid, 4>& features) const {
  const auto& f0 = features[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& f = features[s];
    const bool ok = f.channels == in_channels_[s] && f.batch == f0.batch &&
                    (s == 0 || (f.height * 2 == features[s - 1].height &&
                                f.width * 2 == features[s - 1].width));
    if (!ok) {
      throw ShapeError("fpn: stage " + std::to_string(s + 1) + " grid " +
                       std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                       std::to_string(f.channels) + " breaks the encoder ladder");
    }
  }
  Tensor top = lateral[3](tokens_to_map(features[3]));
  for (int s = 2; s >= 0; --s) {
    top = add(lateral[s](tokens_to_map(features[s])), upsample_nearest(top, 2));
  }
  return smooth(top);
}

void FpnDecoder::collect(ParameterSet& set, const std::string& prefix) {
  for (std::size_t s = 0; s < 4; ++s) {
    const auto p = join_path(prefix, "lateral" + std::to_string(s + 1));
    set.add_param(p + ".weight", lateral[s].weight);
    set.add_param(p + ".bias", lateral[s].bias);
  }
  set.add_param(join_path(prefix, "smooth.weight"), smooth.weight);
  set.add_param(join_path(prefix, "smooth.bias"), smooth.bias);
}

SegHead::SegHead(std::int64_t in_channels, std::int64_t head_dim, Rng& rng) {
  conv_spec = ConvSpec::square(in_channels, head_dim, 3, 1, 1);
  conv_weight = kaiming_conv_param({head_dim, in_channels, 3, 3}, rng);
  conv_bias = constant_param({head_dim}, 0.0f);
  deconv1_weight = deconv_param(head_dim, head_dim, rng);
  deconv1_bias = constant_param({head_dim}, 0.0f);
  // Small output layer: scores start near 0.5 instead of a saturated sigmoid.
  deconv2_weight = deconv_param(head_dim, 1, rng, 1e-2);
  deconv2_bias = constant_param({1}, 0.0f);
}

Tensor SegHead::logits(const Tensor& fused) const {
  auto x = conv2d(fused, conv_weight, conv_bias, conv_spec);
  x = relu(conv_transpose2d(x, deconv1_weight, deconv1_bias, 2));
  return conv_transpose2d(x, deconv2_weight, deconv2_bias, 2);
}

void SegHead::collect(ParameterSet& set, const std::string& prefix) {
  set.add_param(join_path(prefix, "conv.weight"), conv_weight);
  set.add_param(join_path(prefix, "conv.bias"), conv_bias);
  set.add_param(join_path(prefix, "deconv1.weight"), deconv1_weight);
  set.add_param(join_path(prefix, "deconv1.bias"), deconv1_bias);
  set.add_param(join_path(prefix, "deconv2.weight"), deconv2_weight);
  set.add_param(join_path(prefix, "deconv2.bias"), deconv2_bias);
}

}  // namespace dcst
