#pragma once

#include <string>
#include <vector>

#include "dcst/rng.hpp"
#include "dcst/tensor.hpp"

namespace dcst {

/// Optimizer parameter groups. DCB weights train with their own learning rate.
enum class ParamGroup { main, dcb };

const char* to_string(ParamGroup g);

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::main;
};

/// Flat view over a model's trainable parameters and non-trainable buffers,
/// keyed by dotted path. Entries alias the module's tensors.
class ParameterSet {
 public:
  void add_param(std::string name, Tensor t, ParamGroup group = ParamGroup::main);
  void add_buffer(std::string name, Tensor t);

  const std::vector<ParamEntry>& params() const { return params_; }
  const std::vector<ParamEntry>& buffers() const { return buffers_; }
  std::int64_t param_count() const;
  void zero_grad();

 private:
  std::vector<ParamEntry> params_;
  std::vector<ParamEntry> buffers_;
};

inline std::string join_path(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Initializers. All return leaf tensors with requires_grad set.
Tensor trunc_normal_param(Shape shape, Rng& rng, float stddev = 0.02f);
Tensor constant_param(Shape shape, float value);
/// He-normal for conv weights [out, in, kh, kw] (fan-in based).
Tensor kaiming_conv_param(Shape shape, Rng& rng);

}  // namespace dcst
