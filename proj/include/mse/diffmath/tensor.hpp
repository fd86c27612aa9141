#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mse/errors.hpp"

namespace mse::diffmath {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw DimensionError("tensor rank must be 1..3, got shape " + shape_str(shape));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until a gradient reaches this node.
  std::vector<double> grad;
  bool requires_grad = false;
  Tape* tape = nullptr;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major f64 tensor handle. Values never change after creation; only
// the gradient buffer of a tape-recorded tensor is written, during backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    validate_shape(shape);
    if (values.size() != shape_size(shape)) {
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                           shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor filled(Shape shape, double v) {
    validate_shape(shape);
    const std::size_t n = shape_size(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return constant({1}, {v}); }

  // 2-D convenience: rows x cols from nested initializer data.
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return constant({rows, cols}, std::move(values));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Rank-1 tensors act as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  Tape* tape() const { return node_->tape; }

  bool all_finite() const {
    for (double v : node_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
};

// Ordered record of the differentiable operations of one forward pass.
// Entries are appended in execution order, so reverse order is a valid
// topological order for backward. A tape may be replayed exactly once.
// Tensors keep a raw pointer to their tape: the tape must outlive them.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values) {
    ensure_open();
    Tensor t = Tensor::constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->tape = this;
    return t;
  }

  Tensor leaf(const Tensor& like) {
    return leaf(like.shape(), std::vector<double>(like.values().begin(), like.values().end()));
  }

  // Wraps an op result; called by the primitives.
  Tensor record(Shape shape, std::vector<double> values, BackwardFn fn) {
    ensure_open();
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = true;
    node->tape = this;
    entries_.push_back({node, std::move(fn)});
    return Tensor(node);
  }

  void backward(const Tensor& root) {
    if (!root.defined() || !root.requires_grad() || root.tape() != this) {
      throw StateError("backward root was not recorded on this tape");
    }
    if (root.size() != 1) {
      throw DimensionError("backward root must be scalar, got " + shape_str(root.shape()));
    }
    ensure_open();
    consumed_ = true;
    root.node_->grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->fn(it->out->grad);
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

 private:
  void ensure_open() const {
    if (consumed_) throw StateError("tape already consumed by backward; rebuild it with a fresh forward");
  }

  struct Entry {
    std::shared_ptr<detail::Node> out;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

inline void backward(const Tensor& root) {
  if (!root.defined() || root.tape() == nullptr) {
    throw StateError("backward root was not produced by a recorded forward pass");
  }
  root.tape()->backward(root);
}

inline void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

}  // namespace mse::diffmath
