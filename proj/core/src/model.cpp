#include "dcst/model.hpp"

#include <algorithm>

namespace dcst {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.encoder.embed_dim = 32;
  c.encoder.depths = {1, 1, 2, 1};
  c.encoder.heads = {1, 2, 4, 8};
  c.encoder.window = 4;
  c.encoder.image_h = c.encoder.image_w = 64;
  c.fpn.lateral_dim = 64;
  c.fpn.head_dim = 32;
  return c;
}

void ModelConfig::validate() const {
  encoder.validate();
  dcb.validate();
  fpn.validate();
}

const std::set<std::string>& ModelConfig::keys() {
  static const std::set<std::string> k = {
      "model.preset",   "model.in_channels", "model.embed_dim", "model.depths",
      "model.heads",    "model.window",      "model.image_h",   "model.image_w",
      "dcb.rates",      "dcb.stages",        "dcb.kernel",      "fpn.lateral_dim",
      "fpn.head_dim"};
  return k;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
  const auto preset = kv.get_string("model.preset", "toy");
  ModelConfig c;
  if (preset == "toy") {
    c = toy();
  } else if (preset == "full") {
    c = full();
  } else {
    throw ConfigError("model.preset must be 'toy' or 'full', got '" + preset + "'");
  }
  auto& e = c.encoder;
  e.in_channels = kv.get_int("model.in_channels", e.in_channels);
  e.embed_dim = kv.get_int("model.embed_dim", e.embed_dim);
  e.window = kv.get_int("model.window", e.window);
  e.image_h = kv.get_int("model.image_h", e.image_h);
  e.image_w = kv.get_int("model.image_w", e.image_w);
  auto four = [&](const std::string& key, std::vector<std::int64_t> cur) {
    auto v = kv.get_int_list(key, cur);
    if (v.size() != 4) throw ConfigError(key + " needs exactly 4 entries");
    return v;
  };
  const auto depths = four("model.depths", {e.depths.begin(), e.depths.end()});
  const auto heads = four("model.heads", {e.heads.begin(), e.heads.end()});
  for (int s = 0; s < 4; ++s) {
    e.depths[s] = static_cast<int>(depths[s]);
    e.heads[s] = heads[s];
  }
  const auto rates = kv.get_int_list("dcb.rates", {c.dcb.rates[0], c.dcb.rates[1]});
  if (rates.size() != 2) throw ConfigError("dcb.rates needs exactly 2 entries");
  c.dcb.rates = {rates[0], rates[1]};
  const auto stages = kv.get_int_list(
      "dcb.stages", std::vector<std::int64_t>(c.dcb.stages.begin(), c.dcb.stages.end()));
  c.dcb.stages.assign(stages.begin(), stages.end());
  c.dcb.kernel = kv.get_int("dcb.kernel", c.dcb.kernel);
  c.fpn.lateral_dim = kv.get_int("fpn.lateral_dim", c.fpn.lateral_dim);
  c.fpn.head_dim = kv.get_int("fpn.head_dim", c.fpn.head_dim);
  c.validate();
  return c;
}

void ModelConfig::to_config(KeyValueConfig& kv) const {
  kv.set("model.preset", std::string("toy"));  // every field below overrides it
  kv.set("model.in_channels", encoder.in_channels);
  kv.set("model.embed_dim", encoder.embed_dim);
  kv.set("model.depths", std::vector<std::int64_t>(encoder.depths.begin(), encoder.depths.end()));
  kv.set("model.heads", std::vector<std::int64_t>(encoder.heads.begin(), encoder.heads.end()));
  kv.set("model.window", encoder.window);
  kv.set("model.image_h", encoder.image_h);
  kv.set("model.image_w", encoder.image_w);
  kv.set("dcb.rates", std::vector<std::int64_t>{dcb.rates[0], dcb.rates[1]});
  kv.set("dcb.stages", std::vector<std::int64_t>(dcb.stages.begin(), dcb.stages.end()));
  kv.set("dcb.kernel", dcb.kernel);
  kv.set("fpn.lateral_dim", fpn.lateral_dim);
  kv.set("fpn.head_dim", fpn.head_dim);
}

DcstModel::DcstModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng = Rng::derive(seed, 0);
  encoder = SwinEncoder(config.encoder, config.dcb, rng);
  std::array<std::int64_t, 4> chans{};
  for (int s = 0; s < 4; ++s) chans[s] = config.encoder.stage(s).channels;
  fpn = FpnDecoder(chans, config.fpn, rng);
  head = SegHead(config.fpn.lateral_dim, config.fpn.head_dim, rng);
  encoder.collect(params_, "encoder");
  fpn.collect(params_, "fpn");
  head.collect(params_, "head");
}

Tensor DcstModel::logits(const Tensor& image, Mode mode) {
  if (image.rank() != 4 || image.dim(1) != config_.encoder.in_channels) {
    throw ShapeError("model: expected [N, " + std::to_string(config_.encoder.in_channels) +
                     ", H, W] input, got " + to_string(image.shape()));
  }
  const auto h = image.dim(2), w = image.dim(3);
  const auto m = SwinEncoder::kInputMultiple;
  const auto ph = (m - h % m) % m, pw = (m - w % m) % m;
  const Tensor x = (ph || pw) ? pad_bottom_right(image, ph, pw) : image;
  auto out = head.logits(fpn.fuse(encoder.forward(x, mode)));
  return (ph || pw) ? crop_top_left(out, h, w) : out;
}

Tensor DcstModel::forward(const Tensor& image, Mode mode) { return sigmoid(logits(image, mode)); }

void DcstModel::export_state(Checkpoint& ckpt) const {
  for (const auto& p : params_.params()) ckpt.tensors["model/" + p.name] = p.tensor.detach();
  for (const auto& b : params_.buffers()) ckpt.tensors["model/" + b.name] = b.tensor.detach();
  KeyValueConfig kv;
  config_.to_config(kv);
  for (const auto& [k, v] : kv.entries()) ckpt.metadata[k] = v;
}

void DcstModel::import_state(const Checkpoint& ckpt) {
  auto copy = [&](const ParamEntry& e) {
    auto it = ckpt.tensors.find("model/" + e.name);
    if (it == ckpt.tensors.end()) throw ConfigError("checkpoint is missing '" + e.name + "'");
    if (it->second.shape() != e.tensor.shape()) {
      throw ConfigError("checkpoint entry '" + e.name + "' has shape " +
                        to_string(it->second.shape()) + ", model expects " +
                        to_string(e.tensor.shape()));
    }
    auto src = it->second.data();
    Tensor dst_handle = e.tensor;
    auto dst = dst_handle.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  };
  for (const auto& p : params_.params()) copy(p);
  for (const auto& b : params_.buffers()) copy(b);
}

DcstModel DcstModel::from_checkpoint(const Checkpoint& ckpt) {
  KeyValueConfig kv;
  for (const auto& [k, v] : ckpt.metadata)
    if (ModelConfig::keys().count(k)) kv.set(k, v);
  DcstModel model(ModelConfig::from_config(kv), 0);
  model.import_state(ckpt);
  return model;
}

}  // namespace dcst
