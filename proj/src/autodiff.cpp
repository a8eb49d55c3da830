#include "owdfa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace owdfa {

// ---------------------------------------------------------------------------
// Graph

template <typename Scalar>
Var<Scalar> Graph<Scalar>::parameter(Tensor<Scalar>& leaf) {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].leaf == &leaf) return {this, i};
  leaf.set_requires_grad(true);
  Node node;
  node.op = "parameter";
  node.value = leaf;
  node.value.clear_grad();
  node.leaf = &leaf;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Tensor<Scalar> value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  node.value.clear_grad();
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(std::string_view op, std::vector<std::size_t> inputs,
                                  Tensor<Scalar> value, BackwardFn backward) {
  if (consumed_) throw GraphError(std::string(op) + ": graph already ran backward");
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
  Node node;
  node.op = op;
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [&](std::size_t id) { return nodes_.at(id).requires_grad; });
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename Scalar>
void Graph<Scalar>::backward(const Var<Scalar>& loss) {
  if (loss.graph() != this) throw GraphError("backward: loss belongs to another graph");
  if (consumed_) throw GraphError("backward: graph already consumed; build a new graph");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1)
    throw GraphError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  if (!root.requires_grad) throw GraphError("backward: loss is detached from every parameter");
  for (const Node& node : nodes_)
    if (node.leaf && node.leaf->grad())
      throw GraphError("backward: parameter gradient was not cleared since the last backward");

  grads_.assign(nodes_.size(), Storage());
  for (std::size_t i = 0; i <= loss.id(); ++i)
    if (nodes_[i].requires_grad) grads_[i] = Storage::Zero(nodes_[i].value.size());
  grads_[loss.id()].setOnes();

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.requires_grad && node.backward) node.backward(*this, grads_[i]);
  }
  for (std::size_t i = 0; i <= loss.id(); ++i)
    if (nodes_[i].leaf) nodes_[i].leaf->set_grad(std::move(grads_[i]));
  grads_.clear();
  consumed_ = true;
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------
// helpers

namespace {

template <typename Scalar>
using Storage = Vec<Scalar>;

template <typename Scalar>
Graph<Scalar>& graph_of(std::initializer_list<const Var<Scalar>*> vars, std::string_view op) {
  Graph<Scalar>* g = (*vars.begin())->graph();
  if (!g) throw GraphError(std::string(op) + ": uninitialised variable");
  for (const Var<Scalar>* v : vars)
    if (v->graph() != g) throw GraphError(std::string(op) + ": operands from different graphs");
  return *g;
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
}

struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& s, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  AxisSplit r;
  for (Index i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, Index axis) {
  Shape out = s;
  out.erase(out.begin() + axis);
  return out;
}

template <typename Scalar, typename Fn>
Var<Scalar> unary(std::string_view op, const Var<Scalar>& a, Fn&& forward,
                  typename Graph<Scalar>::BackwardFn backward) {
  Graph<Scalar>& g = graph_of({&a}, op);
  Tensor<Scalar> out(a.shape(), forward(a.value().data()));
  return g.record(op, {a.id()}, std::move(out), std::move(backward));
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = graph_of({&a, &b}, "add");
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  return g.record("add", {ia, ib}, Tensor<Scalar>(a.shape(), a.value().data() + b.value().data()),
                  [ia, ib](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) *ga += go;
                    if (auto* gb = gr.grad_of(ib)) *gb += go;
                  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = graph_of({&a, &b}, "sub");
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  return g.record("sub", {ia, ib}, Tensor<Scalar>(a.shape(), a.value().data() - b.value().data()),
                  [ia, ib](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) *ga += go;
                    if (auto* gb = gr.grad_of(ib)) *gb -= go;
                  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = graph_of({&a, &b}, "mul");
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  Storage<Scalar> out = a.value().data().cwiseProduct(b.value().data());
  return g.record("mul", {ia, ib}, Tensor<Scalar>(a.shape(), std::move(out)),
                  [ia, ib](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) *ga += go.cwiseProduct(gr.value(ib).data());
                    if (auto* gb = gr.grad_of(ib)) *gb += go.cwiseProduct(gr.value(ia).data());
                  });
}

template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = graph_of({&a, &b}, "div");
  if (a.shape() != b.shape()) shape_mismatch("div", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  const Scalar eps = static_cast<Scalar>(kLogEps);
  Storage<Scalar> out =
      a.value().data().array() / (b.value().data().array() + eps);
  return g.record("div", {ia, ib}, Tensor<Scalar>(a.shape(), std::move(out)),
                  [ia, ib, eps](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    const auto den = (gr.value(ib).data().array() + eps).eval();
                    if (auto* ga = gr.grad_of(ia)) ga->array() += go.array() / den;
                    if (auto* gb = gr.grad_of(ib))
                      gb->array() -= go.array() * gr.value(ia).data().array() / den.square();
                  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const auto ia = a.id();
  return unary<Scalar>(
      "scale", a, [s](const Storage<Scalar>& x) { return Storage<Scalar>(x * s); },
      [ia, s](Graph<Scalar>& gr, const Storage<Scalar>& go) {
        if (auto* ga = gr.grad_of(ia)) *ga += go * s;
      });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  const auto ia = a.id();
  return unary<Scalar>(
      "add_scalar", a,
      [s](const Storage<Scalar>& x) { return Storage<Scalar>(x.array() + s); },
      [ia](Graph<Scalar>& gr, const Storage<Scalar>& go) {
        if (auto* ga = gr.grad_of(ia)) *ga += go;
      });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  Graph<Scalar>& g = graph_of({&a}, "exp");
  const auto ia = a.id();
  Tensor<Scalar> out(a.shape(), Storage<Scalar>(a.value().data().array().exp()));
  const std::size_t io = g.size();
  return g.record("exp", {ia}, std::move(out),
                  [ia, io](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) *ga += go.cwiseProduct(gr.value(io).data());
                  });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  const auto ia = a.id();
  const Scalar eps = static_cast<Scalar>(kLogEps);
  return unary<Scalar>(
      "log", a,
      [eps](const Storage<Scalar>& x) { return Storage<Scalar>((x.array() + eps).log()); },
      [ia, eps](Graph<Scalar>& gr, const Storage<Scalar>& go) {
        if (auto* ga = gr.grad_of(ia))
          ga->array() += go.array() / (gr.value(ia).data().array() + eps);
      });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const auto ia = a.id();
  return unary<Scalar>(
      "relu", a,
      [](const Storage<Scalar>& x) { return Storage<Scalar>(x.cwiseMax(Scalar(0))); },
      [ia](Graph<Scalar>& gr, const Storage<Scalar>& go) {
        if (auto* ga = gr.grad_of(ia))
          ga->array() +=
              (gr.value(ia).data().array() > Scalar(0)).select(go.array(), Scalar(0));
      });
}

// ---------------------------------------------------------------------------
// reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Graph<Scalar>& g = graph_of({&a}, "sum");
  const auto ia = a.id();
  return g.record("sum", {ia}, Tensor<Scalar>::scalar(a.value().data().sum()),
                  [ia](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) ga->array() += go[0];
                  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a, Index axis) {
  Graph<Scalar>& g = graph_of({&a}, "sum");
  const AxisSplit s = split_axis("sum", a.shape(), axis);
  const Scalar* x = a.value().data().data();
  Storage<Scalar> out = Storage<Scalar>::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index l = 0; l < s.len; ++l)
      for (Index i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.len + l) * s.inner + i];
  const auto ia = a.id();
  return g.record("sum_axis", {ia}, Tensor<Scalar>(drop_axis(a.shape(), axis), std::move(out)),
                  [ia, s](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    for (Index o = 0; o < s.outer; ++o)
                      for (Index l = 0; l < s.len; ++l)
                        for (Index i = 0; i < s.inner; ++i)
                          (*ga)[(o * s.len + l) * s.inner + i] += go[o * s.inner + i];
                  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a, Index axis) {
  const AxisSplit s = split_axis("mean", a.shape(), axis);
  return scale(sum(a, axis), Scalar(1) / static_cast<Scalar>(s.len));
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = graph_of({&a, &b}, "matmul");
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  if (a.shape()[1] != b.shape()[0]) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor<Scalar> out(Shape{a.shape()[0], b.shape()[1]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  const auto ia = a.id(), ib = b.id();
  const Index n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  return g.record("matmul", {ia, ib}, std::move(out),
                  [ia, ib, n, k, m](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    ConstMatrixMap<Scalar> G(go.data(), n, m);
                    if (auto* ga = gr.grad_of(ia))
                      MatrixMap<Scalar>(ga->data(), n, k).noalias() +=
                          G * gr.value(ib).matrix().transpose();
                    if (auto* gb = gr.grad_of(ib))
                      MatrixMap<Scalar>(gb->data(), k, m).noalias() +=
                          gr.value(ia).matrix().transpose() * G;
                  });
}

template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  Graph<Scalar>& g = graph_of({&x, &bias}, "add_bias");
  require_rank("add_bias", x.shape(), 2);
  require_rank("add_bias", bias.shape(), 1);
  if (x.shape()[1] != bias.shape()[0]) shape_mismatch("add_bias", x.shape(), bias.shape());
  Tensor<Scalar> out = x.value();
  out.set_requires_grad(false);
  out.matrix().rowwise() += bias.value().data().transpose();
  const auto ix = x.id(), ib = bias.id();
  const Index n = x.shape()[0], c = x.shape()[1];
  return g.record("add_bias", {ix, ib}, std::move(out),
                  [ix, ib, n, c](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* gx = gr.grad_of(ix)) *gx += go;
                    if (auto* gb = gr.grad_of(ib))
                      *gb += ConstMatrixMap<Scalar>(go.data(), n, c).colwise().sum().transpose();
                  });
}

// ---------------------------------------------------------------------------
// spatial

namespace {

struct ConvGeometry {
  Index n, c, h, w, o, k, pad;
  Index hw() const { return h * w; }
  Index patch() const { return c * k * k; }
};

// cols: (c*k*k) x (h*w) for one sample
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.setZero(g.patch(), g.hw());
  for (Index ci = 0; ci < g.c; ++ci)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        Scalar* dst = cols.row((ci * g.k + ky) * g.k + kx).data();
        const Scalar* plane = x + ci * g.hw();
        const Index x0 = std::max<Index>(0, g.pad - kx);
        const Index x1 = std::min<Index>(g.w, g.w + g.pad - kx);
        for (Index y = 0; y < g.h; ++y) {
          const Index sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h) continue;
          const Scalar* src = plane + sy * g.w + kx - g.pad;
          for (Index xx = x0; xx < x1; ++xx) dst[y * g.w + xx] = src[xx];
        }
      }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (Index ci = 0; ci < g.c; ++ci)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        const Scalar* src = cols.row((ci * g.k + ky) * g.k + kx).data();
        Scalar* plane = dx + ci * g.hw();
        const Index x0 = std::max<Index>(0, g.pad - kx);
        const Index x1 = std::min<Index>(g.w, g.w + g.pad - kx);
        for (Index y = 0; y < g.h; ++y) {
          const Index sy = y + ky - g.pad;
          if (sy < 0 || sy >= g.h) continue;
          Scalar* dst = plane + sy * g.w + kx - g.pad;
          for (Index xx = x0; xx < x1; ++xx) dst[xx] += src[y * g.w + xx];
        }
      }
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  Graph<Scalar>& g = graph_of({&x, &weight, &bias}, "conv2d");
  require_rank("conv2d", x.shape(), 4);
  require_rank("conv2d", weight.shape(), 4);
  require_rank("conv2d", bias.shape(), 1);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 || bias.shape()[0] != ws[0])
    shape_mismatch("conv2d", xs, ws);
  const ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[2] / 2};

  // Per-sample patches keep the working set small; NCHW output of one sample is o x hw.
  const ConstMatrixMap<Scalar> W(weight.value().data().data(), geo.o, geo.patch());
  const Scalar* src = x.value().data().data();
  Tensor<Scalar> out(Shape{geo.n, geo.o, geo.h, geo.w});
  RowMatrix<Scalar> cols;
  for (Index ni = 0; ni < geo.n; ++ni) {
    im2col(src + ni * geo.c * geo.hw(), geo, cols);
    MatrixMap<Scalar> dst(out.data().data() + ni * geo.o * geo.hw(), geo.o, geo.hw());
    dst.noalias() = W * cols;
    for (Index oi = 0; oi < geo.o; ++oi) dst.row(oi).array() += bias.value().data()[oi];
  }

  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return g.record(
      "conv2d", {ix, iw, ib}, std::move(out),
      [ix, iw, ib, geo](Graph<Scalar>& gr, const Storage<Scalar>& go) {
        auto* gw = gr.grad_of(iw);
        auto* gb = gr.grad_of(ib);
        auto* gx = gr.grad_of(ix);
        const Scalar* xsrc = gr.value(ix).data().data();
        const ConstMatrixMap<Scalar> W(gr.value(iw).data().data(), geo.o, geo.patch());
        RowMatrix<Scalar> cols, dcols;
        for (Index ni = 0; ni < geo.n; ++ni) {
          const ConstMatrixMap<Scalar> G(go.data() + ni * geo.o * geo.hw(), geo.o, geo.hw());
          if (gw) {
            im2col(xsrc + ni * geo.c * geo.hw(), geo, cols);
            MatrixMap<Scalar>(gw->data(), geo.o, geo.patch()).noalias() += G * cols.transpose();
          }
          if (gb) *gb += G.rowwise().sum();
          if (gx) {
            dcols.noalias() = W.transpose() * G;
            col2im(dcols, geo, gx->data() + ni * geo.c * geo.hw());
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& x, Index k) {
  Graph<Scalar>& g = graph_of({&x}, "avg_pool2d");
  require_rank("avg_pool2d", x.shape(), 4);
  const Shape& s = x.shape();
  if (k <= 0 || s[2] % k != 0 || s[3] % k != 0)
    throw ShapeError("avg_pool2d: spatial size " + to_string(s) + " not divisible by k=" +
                     std::to_string(k));
  const Index planes = s[0] * s[1], h = s[2], w = s[3], oh = h / k, ow = w / k;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(k * k);
  Tensor<Scalar> out(Shape{s[0], s[1], oh, ow});
  const Scalar* src = x.value().data().data();
  Scalar* dst = out.data().data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h; ++y) {
      const Scalar* row = src + (p * h + y) * w;
      Scalar* acc = dst + (p * oh + y / k) * ow;
      for (Index ox = 0; ox < ow; ++ox)
        for (Index dx = 0; dx < k; ++dx) acc[ox] += row[ox * k + dx] * inv;
    }
  const auto ix = x.id();
  return g.record("avg_pool2d", {ix}, std::move(out),
                  [ix, planes, h, w, oh, ow, k, inv](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* gx = gr.grad_of(ix);
                    if (!gx) return;
                    for (Index p = 0; p < planes; ++p)
                      for (Index y = 0; y < h; ++y) {
                        Scalar* row = gx->data() + (p * h + y) * w;
                        const Scalar* up = go.data() + (p * oh + y / k) * ow;
                        for (Index ox = 0; ox < ow; ++ox)
                          for (Index dx = 0; dx < k; ++dx) row[ox * k + dx] += up[ox] * inv;
                      }
                  });
}

template <typename Scalar>
Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index q) {
  require_rank("adaptive_avg_pool2d", x.shape(), 4);
  const Shape& s = x.shape();
  if (q <= 0 || s[2] % q != 0 || s[3] % q != 0)
    throw ShapeError("adaptive_avg_pool2d: spatial size " + to_string(s) +
                     " not divisible by q=" + std::to_string(q));
  if (s[2] != s[3]) throw ShapeError("adaptive_avg_pool2d: non-square map " + to_string(s));
  return avg_pool2d(x, s[2] / q);
}

template <typename Scalar>
Var<Scalar> upsample_repeat(const Var<Scalar>& x, Index k) {
  Graph<Scalar>& g = graph_of({&x}, "upsample_repeat");
  require_rank("upsample_repeat", x.shape(), 4);
  if (k <= 0) throw ShapeError("upsample_repeat: k must be positive");
  const Shape& s = x.shape();
  const Index planes = s[0] * s[1], h = s[2], w = s[3], oh = h * k, ow = w * k;
  Tensor<Scalar> out(Shape{s[0], s[1], oh, ow});
  const Scalar* src = x.value().data().data();
  Scalar* dst = out.data().data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) dst[(p * oh + y) * ow + xx] = src[(p * h + y / k) * w + xx / k];
  const auto ix = x.id();
  return g.record("upsample_repeat", {ix}, std::move(out),
                  [ix, planes, h, w, oh, ow, k](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* gx = gr.grad_of(ix);
                    if (!gx) return;
                    for (Index p = 0; p < planes; ++p)
                      for (Index y = 0; y < oh; ++y)
                        for (Index xx = 0; xx < ow; ++xx)
                          (*gx)[(p * h + y / k) * w + xx / k] += go[(p * oh + y) * ow + xx];
                  });
}

// ---------------------------------------------------------------------------
// normalisation

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a) {
  Graph<Scalar>& g = graph_of({&a}, "softmax");
  if (a.shape().empty()) throw ShapeError("softmax: scalar input");
  const Index cols = a.shape().back();
  const Index rows = a.value().size() / cols;
  Tensor<Scalar> out(a.shape());
  ConstMatrixMap<Scalar> X(a.value().data().data(), rows, cols);
  MatrixMap<Scalar> Y(out.data().data(), rows, cols);
  Y = (X.colwise() - X.rowwise().maxCoeff()).array().exp().matrix();
  Y.array().colwise() /= Y.rowwise().sum().array();
  const auto ia = a.id();
  const std::size_t io = g.size();
  return g.record("softmax", {ia}, std::move(out),
                  [ia, io, rows, cols](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    ConstMatrixMap<Scalar> Yv(gr.value(io).data().data(), rows, cols);
                    ConstMatrixMap<Scalar> G(go.data(), rows, cols);
                    const Vec<Scalar> dots = G.cwiseProduct(Yv).rowwise().sum();
                    MatrixMap<Scalar>(ga->data(), rows, cols).array() +=
                        Yv.array() * (G.colwise() - dots).array();
                  });
}

template <typename Scalar>
Var<Scalar> log_softmax(const Var<Scalar>& a) {
  Graph<Scalar>& g = graph_of({&a}, "log_softmax");
  if (a.shape().empty()) throw ShapeError("log_softmax: scalar input");
  const Index cols = a.shape().back();
  const Index rows = a.value().size() / cols;
  Tensor<Scalar> out(a.shape());
  ConstMatrixMap<Scalar> X(a.value().data().data(), rows, cols);
  MatrixMap<Scalar> Y(out.data().data(), rows, cols);
  Y = X.colwise() - X.rowwise().maxCoeff();
  const Vec<Scalar> lse = Y.array().exp().rowwise().sum().log();
  Y.colwise() -= lse;
  const auto ia = a.id();
  const std::size_t io = g.size();
  return g.record("log_softmax", {ia}, std::move(out),
                  [ia, io, rows, cols](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    ConstMatrixMap<Scalar> Yv(gr.value(io).data().data(), rows, cols);
                    ConstMatrixMap<Scalar> G(go.data(), rows, cols);
                    const Vec<Scalar> totals = G.rowwise().sum();
                    MatrixMap<Scalar>(ga->data(), rows, cols).array() +=
                        G.array() - Yv.array().exp().colwise() * totals.array();
                  });
}

template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& a, Index axis) {
  Graph<Scalar>& g = graph_of({&a}, "l2_norm");
  const AxisSplit s = split_axis("l2_norm", a.shape(), axis);
  const Scalar* x = a.value().data().data();
  Storage<Scalar> out = Storage<Scalar>::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index l = 0; l < s.len; ++l)
      for (Index i = 0; i < s.inner; ++i) {
        const Scalar v = x[(o * s.len + l) * s.inner + i];
        out[o * s.inner + i] += v * v;
      }
  out = out.cwiseSqrt();
  const auto ia = a.id();
  const std::size_t io = g.size();
  return g.record("l2_norm", {ia}, Tensor<Scalar>(drop_axis(a.shape(), axis), std::move(out)),
                  [ia, io, s](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    const Scalar* xv = gr.value(ia).data().data();
                    const Scalar* nv = gr.value(io).data().data();
                    for (Index o = 0; o < s.outer; ++o)
                      for (Index i = 0; i < s.inner; ++i) {
                        const Scalar nrm = nv[o * s.inner + i];
                        if (nrm <= Scalar(0)) continue;
                        const Scalar f = go[o * s.inner + i] / nrm;
                        for (Index l = 0; l < s.len; ++l) {
                          const Index at = (o * s.len + l) * s.inner + i;
                          (*ga)[at] += f * xv[at];
                        }
                      }
                  });
}

// ---------------------------------------------------------------------------
// structural

template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph<Scalar>* g = parts.front().graph();
  const Shape& first = parts.front().shape();
  std::vector<std::size_t> ids;
  std::vector<Index> lens;
  Index total = 0;
  for (const Var<Scalar>& p : parts) {
    if (p.graph() != g) throw GraphError("concat: operands from different graphs");
    Shape a = p.shape(), b = first;
    split_axis("concat", a, axis);
    if (a.size() != b.size()) shape_mismatch("concat", p.shape(), first);
    a[axis] = b[axis] = 0;
    if (a != b) shape_mismatch("concat", p.shape(), first);
    ids.push_back(p.id());
    lens.push_back(p.shape()[axis]);
    total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const AxisSplit s = split_axis("concat", out_shape, axis);
  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Scalar* src = parts[pi].value().data().data();
    for (Index o = 0; o < s.outer; ++o)
      std::copy_n(src + o * lens[pi] * s.inner, lens[pi] * s.inner,
                  out.data().data() + (o * s.len + offset) * s.inner);
    offset += lens[pi];
  }
  return g->record("concat", ids, std::move(out),
                   [ids, lens, s](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                     Index off = 0;
                     for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                       if (auto* gp = gr.grad_of(ids[pi]))
                         for (Index o = 0; o < s.outer; ++o)
                           gp->segment(o * lens[pi] * s.inner, lens[pi] * s.inner) +=
                               go.segment((o * s.len + off) * s.inner, lens[pi] * s.inner);
                       off += lens[pi];
                     }
                   });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Index axis, Index begin, Index end) {
  Graph<Scalar>& g = graph_of({&a}, "slice");
  const AxisSplit s = split_axis("slice", a.shape(), axis);
  if (begin < 0 || end > s.len || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const Index len = end - begin;
  Tensor<Scalar> out(out_shape);
  const Scalar* src = a.value().data().data();
  for (Index o = 0; o < s.outer; ++o)
    std::copy_n(src + (o * s.len + begin) * s.inner, len * s.inner,
                out.data().data() + o * len * s.inner);
  const auto ia = a.id();
  return g.record("slice", {ia}, std::move(out),
                  [ia, s, begin, len](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    for (Index o = 0; o < s.outer; ++o)
                      ga->segment((o * s.len + begin) * s.inner, len * s.inner) +=
                          go.segment(o * len * s.inner, len * s.inner);
                  });
}

template <typename Scalar>
Var<Scalar> take_rows(const Var<Scalar>& a, std::span<const Index> rows) {
  Graph<Scalar>& g = graph_of({&a}, "take_rows");
  if (a.shape().empty()) throw ShapeError("take_rows: scalar input");
  if (rows.empty()) throw ShapeError("take_rows: empty row list");
  const Index n = a.shape()[0];
  const Index width = a.value().size() / n;
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Tensor<Scalar> out(out_shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n)
      throw ShapeError("take_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       to_string(a.shape()));
    out.data().segment(static_cast<Index>(r) * width, width) =
        a.value().data().segment(rows[r] * width, width);
  }
  const auto ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return g.record("take_rows", {ia}, std::move(out),
                  [ia, idx, width](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    auto* ga = gr.grad_of(ia);
                    if (!ga) return;
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      ga->segment(idx[r] * width, width) +=
                          go.segment(static_cast<Index>(r) * width, width);
                  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Graph<Scalar>& g = graph_of({&a}, "reshape");
  if (numel(shape) != a.value().size()) shape_mismatch("reshape", a.shape(), shape);
  const auto ia = a.id();
  return g.record("reshape", {ia}, Tensor<Scalar>(std::move(shape), a.value().data()),
                  [ia](Graph<Scalar>& gr, const Storage<Scalar>& go) {
                    if (auto* ga = gr.grad_of(ia)) *ga += go;
                  });
}

// ---------------------------------------------------------------------------

#define OWDFA_INSTANTIATE(S)                                                          \
  template Var<S> add(const Var<S>&, const Var<S>&);                                 \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                 \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                 \
  template Var<S> div(const Var<S>&, const Var<S>&);                                 \
  template Var<S> scale(const Var<S>&, S);                                           \
  template Var<S> add_scalar(const Var<S>&, S);                                      \
  template Var<S> exp(const Var<S>&);                                                \
  template Var<S> log(const Var<S>&);                                                \
  template Var<S> relu(const Var<S>&);                                               \
  template Var<S> sum(const Var<S>&);                                                \
  template Var<S> sum(const Var<S>&, Index);                                         \
  template Var<S> mean(const Var<S>&);                                               \
  template Var<S> mean(const Var<S>&, Index);                                        \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                              \
  template Var<S> add_bias(const Var<S>&, const Var<S>&);                            \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&);               \
  template Var<S> avg_pool2d(const Var<S>&, Index);                                  \
  template Var<S> adaptive_avg_pool2d(const Var<S>&, Index);                         \
  template Var<S> upsample_repeat(const Var<S>&, Index);                             \
  template Var<S> softmax(const Var<S>&);                                            \
  template Var<S> log_softmax(const Var<S>&);                                        \
  template Var<S> l2_norm(const Var<S>&, Index);                                     \
  template Var<S> concat(std::span<const Var<S>>, Index);                            \
  template Var<S> slice(const Var<S>&, Index, Index, Index);                         \
  template Var<S> take_rows(const Var<S>&, std::span<const Index>);                  \
  template Var<S> reshape(const Var<S>&, Shape);

OWDFA_INSTANTIATE(float)
OWDFA_INSTANTIATE(double)

#undef OWDFA_INSTANTIATE

}  // namespace owdfa
