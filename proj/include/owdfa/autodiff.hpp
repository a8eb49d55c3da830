#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "owdfa/tensor.hpp"

namespace owdfa {

/// Clamp added inside log and division so inner products that reach zero stay finite.
inline constexpr double kLogEps = 1e-8;

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as its graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph_->requires_grad(id_); }
  Graph<Scalar>* graph() const { return graph_; }
  std::size_t id() const { return id_; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only tape of operations. Nodes are topologically ordered by
/// construction, so backward is a single reverse sweep. A graph supports
/// exactly one backward pass; parameter leaves must have their gradient
/// cleared before they are bound into a graph that runs backward again.
template <typename Scalar>
class Graph {
 public:
  using Storage = Vec<Scalar>;
  using BackwardFn = std::function<void(Graph&, const Storage& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Trainable leaf. The gradient lands in `leaf.grad()` after backward.
  Var<Scalar> parameter(Tensor<Scalar>& leaf);
  Var<Scalar> constant(Tensor<Scalar> value);
  Var<Scalar> record(std::string_view op, std::vector<std::size_t> inputs, Tensor<Scalar> value,
                     BackwardFn backward);

  void backward(const Var<Scalar>& loss);

  /// Gradient buffer of node `id` during backward; nullptr when the node is
  /// not on a path to any parameter.
  Storage* grad_of(std::size_t id) {
    return nodes_[id].requires_grad ? &grads_[id] : nullptr;
  }
  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor<Scalar> value;
    BackwardFn backward;
    Tensor<Scalar>* leaf = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable references to values while the tape grows
  std::vector<Storage> grads_;
  bool consumed_ = false;
};

// Forward primitives. Every op records a node; a backward closure is kept only
// when some input requires a gradient. Shape violations throw ShapeError and
// non-finite outputs throw NumericError.

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
/// a / (b + eps)
template <typename Scalar> Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> exp(const Var<Scalar>& a);
/// log(a + eps)
template <typename Scalar> Var<Scalar> log(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& a);

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a, Index axis);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& a, Index axis);

/// (n x k) * (k x m)
template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// x: (n x c) plus bias: (c), added to every row.
template <typename Scalar> Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias);

/// x: N x C x H x W, weight: O x C x k x k (k odd), bias: O. Stride 1, zero
/// "same" padding.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);
/// Non-overlapping k x k mean pooling of an N x C x H x W tensor.
template <typename Scalar> Var<Scalar> avg_pool2d(const Var<Scalar>& x, Index k);
/// Mean pooling to a q x q grid; H and W must be divisible by q.
template <typename Scalar> Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index q);
/// Each spatial cell repeated into a k x k block.
template <typename Scalar> Var<Scalar> upsample_repeat(const Var<Scalar>& x, Index k);

template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& a);
/// Over the last axis, via the max-shifted log-sum-exp.
template <typename Scalar> Var<Scalar> log_softmax(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> l2_norm(const Var<Scalar>& a, Index axis);

template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, Index axis);
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Index axis, Index begin, Index end);
/// Rows of `a` (along axis 0) in the order given; repeats allowed.
template <typename Scalar>
Var<Scalar> take_rows(const Var<Scalar>& a, std::span<const Index> rows);
template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }

}  // namespace owdfa
