#pragma once

// Reverse-mode differentiation over Tensor<Scalar>. Networks here process one
// sample per graph; batching is done by summing per-sample parameter gradients
// in sample order, which keeps training bitwise reproducible.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sdgan/tensor.hpp"

namespace sdgan::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  bool trainable = true;
};

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Eigen::Index size() const { return value().size(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

template <typename Scalar>
class Graph {
 public:
  using T = Tensor<Scalar>;
  using BackwardFn = std::function<void(Graph&, const T& out_grad)>;

  // With record=false nothing is retained for differentiation.
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<Scalar> input(T value, bool requires_grad = false) {
    return push(std::move(value), record_ && requires_grad, nullptr);
  }

  Var<Scalar> param(const Parameter<Scalar>& p) {
    const bool rg = record_ && p.trainable;
    auto v = push(p.value, rg, nullptr);
    if (rg) params_.emplace_back(v.id, &p);
    return v;
  }

  Var<Scalar> constant(Scalar c) { return input(T::constant({1}, c)); }

  template <typename Parents>
  Var<Scalar> node_from(T value, const Parents& parents, BackwardFn fn) {
    bool rg = false;
    if (record_)
      for (const auto& p : parents) rg = rg || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
    return push(std::move(value), rg, rg ? std::move(fn) : BackwardFn{});
  }

  Var<Scalar> node(T value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn) {
    return node_from(std::move(value), parents, std::move(fn));
  }

  const T& value(Var<Scalar> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  void accumulate(Var<Scalar> v, const T& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad.data() += g.data();
  }

  void accumulate(Var<Scalar> v, T&& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = std::move(g);
    else
      n.grad.data() += g.data();
  }

  // Seeds d(root)/d(root) = seed (ones if empty) and propagates.
  void backward(Var<Scalar> root, const T* seed = nullptr) {
    require(record_, ErrorKind::InvalidArgument, "backward on a non-recording graph");
    auto& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.requires_grad) return;
    r.grad = seed ? *seed : T::constant(r.value.shape(), Scalar(1));
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      const T g = std::move(n.grad);
      n.grad = T();
      n.backward(*this, g);
      n.grad = g;
    }
  }

  // Gradient w.r.t. a node after backward (zeros if it never received one).
  T grad(Var<Scalar> v) const {
    const auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.grad.size() ? n.grad : T(n.value.shape());
  }

  // Parameter gradients in binding order. A parameter bound twice appears twice.
  std::vector<std::pair<const Parameter<Scalar>*, T>> param_grads() const {
    std::vector<std::pair<const Parameter<Scalar>*, T>> out;
    out.reserve(params_.size());
    for (const auto& [id, p] : params_) out.emplace_back(p, grad(Var<Scalar>{const_cast<Graph*>(this), id}));
    return out;
  }

 private:
  struct Node {
    T value;
    T grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(T value, bool rg, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), T(), rg, std::move(fn)});
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, const Parameter<Scalar>*>> params_;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return a.graph->node(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(a, dy);
    g.accumulate(b, dy);
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
  return a.graph->node(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(a, dy);
    if (b.requires_grad()) g.accumulate(b, Tensor<Scalar>(dy.shape(), -dy.data()));
  });
}

template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  return a.graph->node(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    if (a.requires_grad()) g.accumulate(a, Tensor<Scalar>(dy.shape(), dy.data().cwiseProduct(b.value().data())));
    if (b.requires_grad()) g.accumulate(b, Tensor<Scalar>(dy.shape(), dy.data().cwiseProduct(a.value().data())));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar k) {
  Tensor<Scalar> out(a.shape(), a.value().data() * k);
  return a.graph->node(std::move(out), {a}, [a, k](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(a, Tensor<Scalar>(dy.shape(), dy.data() * k));
  });
}

template <typename Scalar>
Var<Scalar> add_constant(Var<Scalar> a, Scalar k) {
  Tensor<Scalar> out(a.shape(), (a.value().data().array() + k).matrix());
  return a.graph->node(std::move(out), {a}, [a](Graph<Scalar>& g, const Tensor<Scalar>& dy) { g.accumulate(a, dy); });
}

// alpha is a one-element tensor; y = alpha * x.
template <typename Scalar>
Var<Scalar> scale_by(Var<Scalar> x, Var<Scalar> alpha) {
  require(alpha.size() == 1, ErrorKind::ShapeMismatch, "scale_by expects a scalar");
  const Scalar k = alpha.value()[0];
  Tensor<Scalar> out(x.shape(), x.value().data() * k);
  return x.graph->node(std::move(out), {x, alpha}, [x, alpha, k](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    if (x.requires_grad()) g.accumulate(x, Tensor<Scalar>(dy.shape(), dy.data() * k));
    if (alpha.requires_grad()) g.accumulate(alpha, Tensor<Scalar>::constant({1}, dy.data().dot(x.value().data())));
  });
}

namespace detail {

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(Var<Scalar> x, F f, DF df) {
  const auto& xv = x.value().data();
  Tensor<Scalar> out(x.shape(), xv.unaryExpr(f));
  return x.graph->node(std::move(out), {x}, [x, df](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto& xv = x.value().data();
    typename Tensor<Scalar>::Vector d(xv.size());
    for (Eigen::Index i = 0; i < xv.size(); ++i) d[i] = dy[i] * df(xv[i]);
    g.accumulate(x, Tensor<Scalar>(dy.shape(), std::move(d)));
  });
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
}

template <typename Scalar>
Scalar softplus(Scalar v) {
  return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> silu(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v * detail::sigmoid(v); },
      [](Scalar v) {
        const Scalar s = detail::sigmoid(v);
        return s * (Scalar(1) + v * (Scalar(1) - s));
      });
}

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope = Scalar(0.2)) {
  return detail::unary(
      x, [slope](Scalar v) { return v > 0 ? v : slope * v; }, [slope](Scalar v) { return v > 0 ? Scalar(1) : slope; });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v > 0 ? v : Scalar(0); }, [](Scalar v) { return v > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return detail::sigmoid(v); },
      [](Scalar v) {
        const Scalar s = detail::sigmoid(v);
        return s * (Scalar(1) - s);
      });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v * v; }, [](Scalar v) { return Scalar(2) * v; });
}

// (x + eps)^(-1/2)
template <typename Scalar>
Var<Scalar> rsqrt(Var<Scalar> x, Scalar eps) {
  return detail::unary(
      x, [eps](Scalar v) { return Scalar(1) / std::sqrt(v + eps); },
      [eps](Scalar v) { return Scalar(-0.5) / ((v + eps) * std::sqrt(v + eps)); });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out = Tensor<Scalar>::constant({1}, x.value().data().sum());
  return x.graph->node(std::move(out), {x}, [x](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(x, Tensor<Scalar>::constant(x.shape(), dy[0]));
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const auto n = static_cast<Scalar>(x.size());
  return scale(sum(x), Scalar(1) / n);
}

template <typename Scalar>
Var<Scalar> mse(Var<Scalar> a, Var<Scalar> b) {
  return mean(square(a - b));
}

// Binary cross-entropy on a single logit: softplus(l) - t*l.
template <typename Scalar>
Var<Scalar> bce_with_logit(Var<Scalar> logit, Scalar target) {
  require(logit.size() == 1, ErrorKind::ShapeMismatch, "bce expects one logit");
  const Scalar l = logit.value()[0];
  Tensor<Scalar> out = Tensor<Scalar>::constant({1}, detail::softplus(l) - target * l);
  return logit.graph->node(std::move(out), {logit}, [logit, l, target](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(logit, Tensor<Scalar>::constant({1}, dy[0] * (detail::sigmoid(l) - target)));
  });
}

template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, int label) {
  const auto& z = logits.value().data();
  require(label >= 0 && label < z.size(), ErrorKind::InvalidArgument, "label out of range");
  const Scalar m = z.maxCoeff();
  typename Tensor<Scalar>::Vector p = (z.array() - m).exp().matrix();
  const Scalar s = p.sum();
  p /= s;
  Tensor<Scalar> out = Tensor<Scalar>::constant({1}, -(z[label] - m - std::log(s)));
  return logits.graph->node(std::move(out), {logits},
                            [logits, p, label](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
                              typename Tensor<Scalar>::Vector d = p;
                              d[label] -= Scalar(1);
                              g.accumulate(logits, Tensor<Scalar>(logits.shape(), d * dy[0]));
                            });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return x.graph->node(std::move(out), {x}, [x](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(x, dy.reshaped(x.shape()));
  });
}

// Contiguous range of the flattened tensor, returned as a vector.
template <typename Scalar>
Var<Scalar> slice(Var<Scalar> x, Eigen::Index start, Eigen::Index len) {
  require(start >= 0 && start + len <= x.size(), ErrorKind::ShapeMismatch, "slice out of range");
  Tensor<Scalar> out({static_cast<int>(len)}, x.value().data().segment(start, len));
  return x.graph->node(std::move(out), {x}, [x, start, len](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    Tensor<Scalar> d(x.shape());
    d.data().segment(start, len) = dy.data();
    g.accumulate(x, std::move(d));
  });
}

// Concatenates along the leading axis (channels for CHW, rows for matrices).
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat of nothing");
  Shape shape = parts.front().shape();
  shape[0] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    shape[0] += s[0];
    s[0] = shape[0];
    Shape ref = shape;
    require(s == ref, ErrorKind::ShapeMismatch, "concat trailing dims differ");
  }
  Tensor<Scalar> out(shape);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.data().segment(off, p.size()) = p.value().data();
    off += p.size();
  }
  return parts.front().graph->node_from(std::move(out), parts, [parts](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) g.accumulate(p, Tensor<Scalar>(p.shape(), dy.data().segment(o, p.size())));
      o += p.size();
    }
  });
}

// v (d) -> (rows, d)
template <typename Scalar>
Var<Scalar> broadcast_rows(Var<Scalar> v, int rows) {
  const auto d = v.size();
  Tensor<Scalar> out({rows, static_cast<int>(d)});
  out.matrix(rows, d) = v.value().data().transpose().replicate(rows, 1);
  return v.graph->node(std::move(out), {v}, [v, rows, d](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(v, Tensor<Scalar>(v.shape(), dy.matrix(rows, d).colwise().sum().transpose()));
  });
}

template <typename Scalar>
Var<Scalar> row(Var<Scalar> m, int i) {
  require(m.value().rank() == 2, ErrorKind::ShapeMismatch, "row expects a matrix");
  const int d = m.shape()[1];
  return slice(m, static_cast<Eigen::Index>(i) * d, d);
}

// ---------------------------------------------------------------------------
// Dense and convolutional layers

// y = W x (+ b), W is (out, in).
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, const Var<Scalar>* b = nullptr) {
  const int out_dim = w.shape()[0];
  const int in_dim = w.shape()[1];
  require(x.size() == in_dim, ErrorKind::ShapeMismatch,
          "linear input " + std::to_string(x.size()) + " vs weight " + shape_string(w.shape()));
  Tensor<Scalar> out({out_dim});
  out.data().noalias() = w.value().matrix(out_dim, in_dim) * x.value().data();
  if (b) out.data() += b->value().data();
  std::vector<Var<Scalar>> parents{x, w};
  if (b) parents.push_back(*b);
  auto fn = [x, w, parents, out_dim, in_dim](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    if (x.requires_grad())
      g.accumulate(x, Tensor<Scalar>(x.shape(), w.value().matrix(out_dim, in_dim).transpose() * dy.data()));
    if (w.requires_grad()) {
      Tensor<Scalar> dw(w.shape());
      dw.matrix(out_dim, in_dim).noalias() = dy.data() * x.value().data().transpose();
      g.accumulate(w, std::move(dw));
    }
    if (parents.size() == 3) g.accumulate(parents[2], dy);
  };
  return x.graph->node_from(std::move(out), parents, std::move(fn));
}

namespace detail {

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;

  ConvGeometry(int c, int h, int w, int k, int s, int p)
      : channels(c), height(h), width(w), kernel(k), stride(s), pad(p),
        out_h((h + 2 * p - k) / s + 1), out_w((w + 2 * p - k) / s + 1) {}

  Eigen::Index rows() const { return static_cast<Eigen::Index>(channels) * kernel * kernel; }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(out_h) * out_w; }
};

template <typename Scalar>
RowMatrixX<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g) {
  RowMatrixX<Scalar> cols = RowMatrixX<Scalar>::Zero(g.rows(), g.cols());
  const Scalar* src = x.ptr();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        Scalar* dst = cols.data() + ((static_cast<Eigen::Index>(c) * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* srow = src + (static_cast<Eigen::Index>(c) * g.height + iy) * g.width;
          Scalar* drow = dst + static_cast<Eigen::Index>(oy) * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ox] = srow[ix];
          }
        }
      }
  return cols;
}

template <typename Scalar>
void col2im(const RowMatrixX<Scalar>& cols, const ConvGeometry& g, Tensor<Scalar>& dx) {
  Scalar* dst = dx.ptr();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Scalar* src = cols.data() + ((static_cast<Eigen::Index>(c) * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          Scalar* drow = dst + (static_cast<Eigen::Index>(c) * g.height + iy) * g.width;
          const Scalar* srow = src + static_cast<Eigen::Index>(oy) * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
}

}  // namespace detail

// x (C,H,W), w (O,C,k,k), optional bias (O). Zero padding.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, const Var<Scalar>* b, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 3 && ws.size() == 4 && ws[1] == xs[0] && ws[2] == ws[3], ErrorKind::ShapeMismatch,
          "conv2d input " + shape_string(xs) + " weight " + shape_string(ws));
  const detail::ConvGeometry geo(xs[0], xs[1], xs[2], ws[2], stride, pad);
  const int out_c = ws[0];

  RowMatrixX<Scalar> cols = detail::im2col(x.value(), geo);
  Tensor<Scalar> out({out_c, geo.out_h, geo.out_w});
  out.matrix(out_c, geo.cols()).noalias() = w.value().matrix(out_c, geo.rows()) * cols;
  if (b) out.matrix(out_c, geo.cols()).colwise() += b->value().data();

  if (!w.requires_grad()) cols.resize(0, 0);
  std::vector<Var<Scalar>> parents{x, w};
  if (b) parents.push_back(*b);
  auto fn = [x, w, parents, geo, out_c, cols = std::move(cols)](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto dym = dy.matrix(out_c, geo.cols());
    if (w.requires_grad()) {
      Tensor<Scalar> dw(w.shape());
      dw.matrix(out_c, geo.rows()).noalias() = dym * cols.transpose();
      g.accumulate(w, std::move(dw));
    }
    if (parents.size() == 3 && parents[2].requires_grad())
      g.accumulate(parents[2], Tensor<Scalar>(parents[2].shape(), dym.rowwise().sum()));
    if (x.requires_grad()) {
      RowMatrixX<Scalar> dcols(geo.rows(), geo.cols());
      dcols.noalias() = w.value().matrix(out_c, geo.rows()).transpose() * dym;
      Tensor<Scalar> dx(x.shape());
      detail::col2im(dcols, geo, dx);
      g.accumulate(x, std::move(dx));
    }
  };
  return x.graph->node_from(std::move(out), parents, std::move(fn));
}

template <typename Scalar>
Var<Scalar> upsample2x(Var<Scalar> x) {
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor<Scalar> out({c, 2 * h, 2 * w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(k, y, xx) = x.value().at(k, y / 2, xx / 2);
  return x.graph->node(std::move(out), {x}, [x, c, h, w](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(x.shape());
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) dx.at(k, y / 2, xx / 2) += dy.at(k, y, xx);
    g.accumulate(x, std::move(dx));
  });
}

// y[c] = x[c] * s[c]
template <typename Scalar>
Var<Scalar> channel_scale(Var<Scalar> x, Var<Scalar> s) {
  const int c = x.shape()[0];
  require(s.size() == c, ErrorKind::ShapeMismatch, "channel_scale: " + shape_string(s.shape()));
  const Eigen::Index hw = x.size() / c;
  Tensor<Scalar> out(x.shape());
  out.matrix(c, hw) = s.value().data().asDiagonal() * x.value().matrix(c, hw);
  return x.graph->node(std::move(out), {x, s}, [x, s, c, hw](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto dym = dy.matrix(c, hw);
    if (x.requires_grad()) {
      Tensor<Scalar> dx(x.shape());
      dx.matrix(c, hw) = s.value().data().asDiagonal() * dym;
      g.accumulate(x, std::move(dx));
    }
    if (s.requires_grad())
      g.accumulate(s, Tensor<Scalar>(s.shape(), dym.cwiseProduct(x.value().matrix(c, hw)).rowwise().sum()));
  });
}

template <typename Scalar>
Var<Scalar> add_channel_bias(Var<Scalar> x, Var<Scalar> b) {
  const int c = x.shape()[0];
  require(b.size() == c, ErrorKind::ShapeMismatch, "add_channel_bias");
  const Eigen::Index hw = x.size() / c;
  Tensor<Scalar> out = x.value();
  out.matrix(c, hw).colwise() += b.value().data();
  return x.graph->node(std::move(out), {x, b}, [x, b, c, hw](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.accumulate(x, dy);
    if (b.requires_grad()) g.accumulate(b, Tensor<Scalar>(b.shape(), dy.matrix(c, hw).rowwise().sum()));
  });
}

// (O,I,k,k) -> (O,I): sum of squares over the kernel window.
template <typename Scalar>
Var<Scalar> kernel_square_sum(Var<Scalar> w) {
  const int o = w.shape()[0], i = w.shape()[1], kk = w.shape()[2] * w.shape()[3];
  Tensor<Scalar> out({o, i});
  out.data() = w.value().matrix(static_cast<Eigen::Index>(o) * i, kk).rowwise().squaredNorm();
  return w.graph->node(std::move(out), {w}, [w, o, i, kk](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    Tensor<Scalar> dw(w.shape());
    dw.matrix(static_cast<Eigen::Index>(o) * i, kk) =
        (Scalar(2) * w.value().matrix(static_cast<Eigen::Index>(o) * i, kk)).array().colwise() * dy.data().array();
    g.accumulate(w, std::move(dw));
  });
}

// (C,H,W) -> (C,H,W) with each pixel's channel vector scaled to unit length.
template <typename Scalar>
Var<Scalar> channel_normalize(Var<Scalar> x, Scalar eps = Scalar(1e-10)) {
  const int c = x.shape()[0];
  const Eigen::Index hw = x.size() / c;
  const auto xm = x.value().matrix(c, hw);
  typename Tensor<Scalar>::Vector norms = xm.colwise().norm().transpose();
  Tensor<Scalar> out(x.shape());
  out.matrix(c, hw) = xm * (norms.array() + eps).inverse().matrix().asDiagonal();
  return x.graph->node(std::move(out), {x}, [x, c, hw, norms, eps](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto xm = x.value().matrix(c, hw);
    const auto dym = dy.matrix(c, hw);
    Tensor<Scalar> dx(x.shape());
    auto dxm = dx.matrix(c, hw);
    for (Eigen::Index p = 0; p < hw; ++p) {
      const Scalar n = norms[p];
      const Scalar inv = Scalar(1) / (n + eps);
      dxm.col(p) = dym.col(p) * inv;
      if (n > 0) {
        const Scalar proj = dym.col(p).dot(xm.col(p));
        dxm.col(p) -= xm.col(p) * (proj * inv * inv / n);
      }
    }
    g.accumulate(x, std::move(dx));
  });
}

// Per-region channel means: x (C,H,W), labels (H*W) in [0,R) -> (C,R,1).
template <typename Scalar>
Var<Scalar> region_average_pool(Var<Scalar> x, const std::vector<int>& labels, int regions) {
  const int c = x.shape()[0];
  const Eigen::Index hw = x.size() / c;
  require(static_cast<Eigen::Index>(labels.size()) == hw, ErrorKind::ShapeMismatch, "region label map size");
  std::vector<Scalar> counts(static_cast<std::size_t>(regions), Scalar(0));
  for (int l : labels) {
    require(l >= 0 && l < regions, ErrorKind::InvalidArgument, "region label out of range");
    counts[static_cast<std::size_t>(l)] += 1;
  }
  const auto xm = x.value().matrix(c, hw);
  Tensor<Scalar> out({c, regions, 1});
  auto om = out.matrix(c, regions);
  for (Eigen::Index p = 0; p < hw; ++p) om.col(labels[static_cast<std::size_t>(p)]) += xm.col(p);
  for (int r = 0; r < regions; ++r)
    if (counts[static_cast<std::size_t>(r)] > 0) om.col(r) /= counts[static_cast<std::size_t>(r)];
  return x.graph->node(std::move(out), {x},
                       [x, labels, counts, c, hw, regions](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
                         const auto dym = dy.matrix(c, regions);
                         Tensor<Scalar> dx(x.shape());
                         auto dxm = dx.matrix(c, hw);
                         for (Eigen::Index p = 0; p < hw; ++p) {
                           const int r = labels[static_cast<std::size_t>(p)];
                           dxm.col(p) = dym.col(r) / counts[static_cast<std::size_t>(r)];
                         }
                         g.accumulate(x, std::move(dx));
                       });
}

// Inverse of region pooling: s (C,R,1) painted back onto an (H,W) label map.
template <typename Scalar>
Var<Scalar> region_broadcast(Var<Scalar> s, const std::vector<int>& labels, int height, int width) {
  const int c = s.shape()[0];
  const int regions = s.shape()[1];
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  require(static_cast<Eigen::Index>(labels.size()) == hw, ErrorKind::ShapeMismatch, "region label map size");
  Tensor<Scalar> out({c, height, width});
  auto om = out.matrix(c, hw);
  const auto sm = s.value().matrix(c, regions);
  for (Eigen::Index p = 0; p < hw; ++p) om.col(p) = sm.col(labels[static_cast<std::size_t>(p)]);
  return s.graph->node(std::move(out), {s}, [s, labels, c, hw, regions](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto dym = dy.matrix(c, hw);
    Tensor<Scalar> ds(s.shape());
    auto dsm = ds.matrix(c, regions);
    for (Eigen::Index p = 0; p < hw; ++p) dsm.col(labels[static_cast<std::size_t>(p)]) += dym.col(p);
    g.accumulate(s, std::move(ds));
  });
}

}  // namespace sdgan::nn
