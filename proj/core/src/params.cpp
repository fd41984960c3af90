#include "dcst/params.hpp"

#include <cmath>

namespace dcst {

const char* to_string(ParamGroup g) { return g == ParamGroup::dcb ? "dcb" : "main"; }

void ParameterSet::add_param(std::string name, Tensor t, ParamGroup group) {
  params_.push_back({std::move(name), std::move(t), group});
}

void ParameterSet::add_buffer(std::string name, Tensor t) {
  buffers_.push_back({std::move(name), std::move(t), ParamGroup::main});
}

std::int64_t ParameterSet::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor trunc_normal_param(Shape shape, Rng& rng, float stddev) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.truncated_normal(stddev));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor constant_param(Shape shape, float value) {
  return Tensor::full(std::move(shape), value, true);
}

Tensor kaiming_conv_param(Shape shape, Rng& rng) {
  const auto fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape.back();
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace dcst
