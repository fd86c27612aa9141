#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mse/diffmath/tensor.hpp"

namespace mse::diffmath {

class BoundParameters;

// Named, mutable storage for trainable values. An optimizer writes here;
// forward passes read through a BoundParameters view made by bind() or
// constants().
class ParameterSet {
 public:
  void add(std::string name, Shape shape, std::vector<double> values) {
    validate_shape(shape);
    if (values.size() != shape_size(shape)) {
      throw DimensionError("parameter " + name + ": " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape));
    }
    if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    shapes_.push_back(std::move(shape));
    values_.push_back(std::move(values));
  }

  std::size_t size() const { return names_.size(); }
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw IndexError("unknown parameter " + std::string(name));
    return it->second;
  }

  const std::string& name(std::size_t i) const { return names_[i]; }
  const Shape& shape(std::size_t i) const { return shapes_[i]; }
  std::span<const double> values(std::size_t i) const { return values_[i]; }
  std::vector<double>& mutable_values(std::size_t i) { return values_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  inline BoundParameters bind(Tape& tape) const;
  inline BoundParameters constants() const;

 private:
  std::vector<std::string> names_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Tensors for one forward pass, in ParameterSet order.
class BoundParameters {
 public:
  BoundParameters() = default;

  const Tensor& operator[](std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw IndexError("unknown parameter " + std::string(name));
    return tensors_[it->second];
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
  std::size_t size() const { return tensors_.size(); }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  // Gradient of every tensor, zero-filled where none arrived.
  std::vector<std::vector<double>> gradients() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const Tensor& t : tensors_) {
      if (t.has_grad()) {
        out.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        out.emplace_back(t.size(), 0.0);
      }
    }
    return out;
  }

 private:
  friend class ParameterSet;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline BoundParameters ParameterSet::bind(Tape& tape) const {
  BoundParameters out;
  out.names_ = names_;
  out.index_ = index_;
  out.tensors_.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.tensors_.push_back(tape.leaf(shapes_[i], values_[i]));
  return out;
}

inline BoundParameters ParameterSet::constants() const {
  BoundParameters out;
  out.names_ = names_;
  out.index_ = index_;
  out.tensors_.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.tensors_.push_back(Tensor::constant(shapes_[i], values_[i]));
  return out;
}

}  // namespace mse::diffmath
