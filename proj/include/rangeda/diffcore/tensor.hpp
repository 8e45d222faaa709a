#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "rangeda/errors.hpp"

namespace rangeda {

using Index = Eigen::Index;

/// Dimension list of a dense tensor. Activations use (N, C, H, W).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1},
                           [](Index a, Index b) { return a * b; });
  }

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<Index> dims_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

inline void require_rank(const Shape& s, Index rank, const char* op) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     s.str());
  }
}

/// Dense row-major tensor backed by a contiguous Eigen array.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_.numel())) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static Tensor scalar(Scalar value) { return constant(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index dim(Index i) const { return shape_[i]; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // (N, C, H, W) element access.
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Scalar item() const {
    if (size() != 1) throw UsageError("Tensor::item on non-scalar " + shape_.str());
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != size()) {
      throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Array data_;
};

/// Integer class plane with shape (N, H, W).
struct LabelBatch {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  Eigen::Array<std::int32_t, Eigen::Dynamic, 1> data;

  LabelBatch() = default;
  LabelBatch(Index n, Index h, Index w)
      : batch(n), height(h), width(w), data(Eigen::Array<std::int32_t, Eigen::Dynamic, 1>::Zero(n * h * w)) {}

  Index pixels() const { return batch * height * width; }
  std::int32_t& operator()(Index n, Index h, Index w) { return data[(n * height + h) * width + w]; }
  std::int32_t operator()(Index n, Index h, Index w) const { return data[(n * height + h) * width + w]; }
};

}  // namespace rangeda
