#include "dcst/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dcst {

namespace {

thread_local bool t_grad_enabled = true;
thread_local bool t_checked_mode = false;

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + to_string(shape));
  }
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<float>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  validate_shape(shape);
  auto n = dcst::numel(shape);
  return from(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value),
              requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != dcst::numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  if (t_checked_mode) detail::check_finite("from", values);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for " + to_string(shape()));
  return shape()[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }

std::span<const float> Tensor::data() const { return node_->value; }

std::span<float> Tensor::mutable_data() { return node_->value; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw ShapeError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const float> Tensor::grad() const { return node_->grad_buffer(); }

std::span<float> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar, got " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients restart from zero on every call; leaves accumulate.
  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0f);
  }
  node_->grad_buffer()[0] += 1.0f;

  const bool checked = t_checked_mode;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf() || !n->backward) continue;
    n->backward(*n);
    if (checked) {
      for (auto& in : n->inputs) {
        if (in->requires_grad && !in->grad.empty()) detail::check_finite(n->op, in->grad);
      }
    }
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool checked_mode() { return t_checked_mode; }

CheckedModeGuard::CheckedModeGuard(bool enabled) : previous_(t_checked_mode) {
  t_checked_mode = enabled;
}
CheckedModeGuard::~CheckedModeGuard() { t_checked_mode = previous_; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<float> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  if (t_checked_mode) check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::span<float> grad_of(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

void check_finite(const char* op, std::span<const float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value at index ") + std::to_string(i) +
                         " produced by op '" + op + "'");
    }
  }
}

}  // namespace detail

}  // namespace dcst
