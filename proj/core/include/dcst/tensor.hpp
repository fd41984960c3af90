#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dcst/error.hpp"

namespace dcst {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode graph. Values are fixed once an op has
// produced them; only `grad` is written afterwards.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<float>& grad_buffer();
};

}  // namespace detail

/// Row-major float32 array with an optional gradient.
///
/// A Tensor is a cheap handle; copies share the underlying storage. Values
/// produced by an op are never modified in place, except parameters updated
/// by an optimizer through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float operator[](std::int64_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer, zero-filled if no gradient has been accumulated.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Reverse-mode accumulation from this scalar into every leaf that
  /// requires a gradient. Leaf gradients accumulate across calls.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;
  const char* op_name() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradient recording is on by default; NoGradGuard turns it off for the
/// current thread (evaluation, optimizer updates).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// In checked mode every op output (and every backward gradient) is scanned
/// for NaN/Inf and a NumericError names the offending op.
bool checked_mode();

class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool enabled = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result. If no input requires grad (or recording is off) the
// history is dropped.
Tensor make_result(const char* op, Shape shape, std::vector<float> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

// Gradient buffer of an input inside a backward closure; empty span when the
// input does not take gradients.
std::span<float> grad_of(const Tensor& t);

void check_finite(const char* op, std::span<const float> values);

}  // namespace detail

}  // namespace dcst
