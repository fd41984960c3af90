#pragma once

#include <cstdint>
#include <string>

#include "dcst/config.hpp"
#include "dcst/dcb.hpp"
#include "dcst/fpn.hpp"
#include "dcst/serialize.hpp"
#include "dcst/swin.hpp"

namespace dcst {

struct ModelConfig {
  EncoderConfig encoder;
  DcbConfig dcb;
  FpnConfig fpn;

  /// C=128, depths 2/2/18/2, heads 4/8/16/32, M=7, 512x1024 input.
  static ModelConfig full();
  /// C=32, depths 1/1/2/1, heads 1/2/4/8, M=4, 64x64 input.
  static ModelConfig toy();

  void validate() const;
  /// Reads model.*, dcb.* and fpn.* keys on top of the preset named by
  /// `model.preset` (toy or full; default toy).
  static ModelConfig from_config(const KeyValueConfig& kv);
  void to_config(KeyValueConfig& kv) const;
  static const std::set<std::string>& keys();
};

/// Encoder, FPN and segmentation head. Inputs of any size are padded at the
/// bottom/right to a multiple of 32 and the score map is cropped back.
class DcstModel {
 public:
  DcstModel(const ModelConfig& config, std::uint64_t seed);
  DcstModel(const DcstModel&) = delete;
  DcstModel& operator=(const DcstModel&) = delete;
  DcstModel(DcstModel&&) = default;
  DcstModel& operator=(DcstModel&&) = default;

  /// image [N, C, H, W] -> scores [N, 1, H, W] in (0, 1).
  Tensor forward(const Tensor& image, Mode mode);
  Tensor logits(const Tensor& image, Mode mode);

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const ModelConfig& config() const { return config_; }

  /// Parameters and buffers under "model/" plus the configuration as metadata.
  void export_state(Checkpoint& ckpt) const;
  /// Copies values in place; throws ConfigError on a missing or mis-shaped entry.
  void import_state(const Checkpoint& ckpt);
  /// Builds a model from the configuration stored in a checkpoint.
  static DcstModel from_checkpoint(const Checkpoint& ckpt);

  SwinEncoder encoder;
  FpnDecoder fpn;
  SegHead head;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

}  // namespace dcst
