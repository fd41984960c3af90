#pragma once

// Finite-difference check of the whole model: image -> encoder (with DCB)
// -> FPN -> head, on the smallest configuration that still has four stages.

#include <string>
#include <vector>

#include "dcst/model.hpp"
#include "grad_harness.hpp"

namespace dcst::testing {

/// 8-channel encoder, depths 1/1/1/1, heads 1/2/4/8, window 4, DCB after
/// stages 3 and 4.
inline ModelConfig micro_pipeline_config() {
  ModelConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.depths = {1, 1, 1, 1};
  c.encoder.heads = {1, 2, 4, 8};
  c.encoder.window = 4;
  c.encoder.image_h = c.encoder.image_w = 32;
  c.dcb.stages = {3, 4};
  c.fpn.lateral_dim = 8;
  c.fpn.head_dim = 4;
  return c;
}

struct PipelineGradResult {
  std::vector<std::string> names;
  std::vector<LadderReport> reports;
};

/// Checks d(output)/d(image) and the gradients of one weight from each part
/// (DCB conv, attention qkv, FPN lateral) on a batch of two 8x8 images.
///
/// Eval mode: on an 8x8 input stage 4 is a 1x1 map, where train-mode batch
/// statistics over two values collapse to +-1 and the function is too curved
/// for float differences. Train-mode batch norm is covered op by op.
inline PipelineGradResult pipeline_gradient_check(std::uint64_t seed, std::int64_t per_input = 20) {
  const auto cfg = micro_pipeline_config();
  DcstModel model(cfg, seed);
  Rng rng(seed + 100);
  auto img = uniform_tensor({2, 3, 8, 8}, rng, 0, 1, true);
  auto& dcb_w = model.encoder.dcbs[2]->layers()[0].weight;
  auto& qkv = model.encoder.blocks[1][0].attn.qkv_weight;
  auto& lat = model.fpn.lateral[3].weight;
  const std::vector<Tensor> originals{dcb_w, qkv, lat};

  auto random_coords = [&](const Tensor& t) {
    std::vector<std::int64_t> c;
    for (std::int64_t i = 0; i < per_input; ++i) c.push_back(rng.uniform_int(0, t.numel() - 1));
    return c;
  };
  // Stage 3 is a 2x2 map here, so only the centre tap of each dilated
  // kernel ever touches data; the other taps have an exact zero gradient.
  std::vector<std::int64_t> centre;
  const auto filters = dcb_w.dim(0) * dcb_w.dim(1);
  for (std::int64_t i = 0; i < per_input; ++i) centre.push_back(rng.uniform_int(0, filters - 1) * 9 + 4);

  PipelineGradResult res;
  res.names = {"image", "dcb.conv1.weight", "attn.qkv.weight", "fpn.lateral4.weight"};
  res.reports = check_gradients_ladder(
      [&](const std::vector<Tensor>& in) {
        dcb_w = in[1];
        qkv = in[2];
        lat = in[3];
        auto y = model.forward(in[0], Mode::eval);
        dcb_w = originals[0];
        qkv = originals[1];
        lat = originals[2];
        return y;
      },
      {img, dcb_w, qkv, lat}, {random_coords(img), centre, random_coords(qkv), random_coords(lat)},
      seed);
  return res;
}

}  // namespace dcst::testing
