#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "owdfa/error.hpp"

namespace owdfa {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Product of dimensions; the empty shape is a scalar with one element.
inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major N-dimensional array. The gradient slot is filled by
/// Graph::backward for parameter leaves and must be cleared before the next
/// backward pass.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Vec<Scalar>;

  Tensor() : data_(Storage::Zero(1)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    data_ = Storage::Zero(numel(shape_));
  }

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor: shape " + to_string(shape_) + " holds " +
                       std::to_string(numel(shape_)) + " elements, data has " +
                       std::to_string(data_.size()));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Storage(Eigen::Map<const Storage>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, Storage::Constant(1, value)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("tensor: item() on shape " + to_string(shape_));
    return data_[0];
  }

  /// First axis as rows, remaining axes flattened into columns.
  MatrixMap<Scalar> matrix() { return {data_.data(), rows(), cols()}; }
  ConstMatrixMap<Scalar> matrix() const { return {data_.data(), rows(), cols()}; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  const std::optional<Storage>& grad() const { return grad_; }
  void set_grad(Storage g) {
    if (g.size() != data_.size()) throw ShapeError("tensor: gradient size mismatch");
    grad_ = std::move(g);
  }
  void clear_grad() { grad_.reset(); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_, data_.template cast<Other>());
    out.set_requires_grad(requires_grad_);
    return out;
  }

 private:
  Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Index cols() const { return rows() == 0 ? 0 : size() / rows(); }

  void check_dims() const {
    for (Index d : shape_)
      if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + to_string(shape_));
  }

  Shape shape_;
  Storage data_;
  bool requires_grad_ = false;
  std::optional<Storage> grad_;
};

}  // namespace owdfa
