#pragma once

#include <Eigen/Core>

#include <cassert>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "osdg/numerics/tensor.hpp"

namespace osdg {

/// A learnable tensor together with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T(0)); }
};

enum class OpKind {
  Constant,
  Variable,
  Parameter,
  MatMul,
  Conv2d,
  Conv1d,
  Relu,
  Sigmoid,
  Softmax,
  Log,
  Reciprocal,
  Add,
  Mul,
  AddRow,
  AddChannel,
  MulChannel,
  MulCol,
  Scale,
  AddScalar,
  Sum,
  SumLast,
  Mean,
  MeanSpatial,
  Concat,
  Reshape,
  GradReverse,
  RowNorm,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Log: return "log";
    case OpKind::Reciprocal: return "reciprocal";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::AddChannel: return "add_channel";
    case OpKind::MulChannel: return "mul_channel";
    case OpKind::MulCol: return "mul_col";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sum: return "sum";
    case OpKind::SumLast: return "sum_last";
    case OpKind::Mean: return "mean";
    case OpKind::MeanSpatial: return "mean_spatial";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::GradReverse: return "grad_reverse";
    case OpKind::RowNorm: return "row_norm";
  }
  return "?";
}

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Records forward primitives and replays them in reverse for gradients.
/// With recording disabled the tape only evaluates values (inference).
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    OpKind op;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Param<T>* param = nullptr;
    Backward backward;
  };

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> v) { return push(OpKind::Constant, std::move(v), false, {}); }

  /// Leaf that receives a gradient (used by gradient checks on inputs).
  Var<T> variable(Tensor<T> v) { return push(OpKind::Variable, std::move(v), record_, {}); }

  Var<T> param(Param<T>& p) {
    Var<T> v = push(OpKind::Parameter, p.value, record_, {});
    nodes_[v.id()].param = &p;
    return v;
  }

  Var<T> push(OpKind op, Tensor<T> value, bool needs_grad, Backward bw) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.needs_grad = needs_grad && record_;
    if (n.needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs_grad(const Var<T>& v) const { return node(v.id()).needs_grad; }

  /// Gradient accumulator of a node, allocated on first use.
  Tensor<T>& grad_of(int id) {
    Node& n = node(id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& grad(const Var<T>& v) { return grad_of(v.id()); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node, then adds
  /// parameter gradients into their Param::grad.
  void backward(const Var<T>& loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    backward_order_.clear();
    grad_of(loss.id())[0] = T(1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.empty()) continue;
      backward_order_.push_back(i);
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  /// Node ids visited by the last backward pass, in visiting order.
  const std::vector<int>& backward_order() const { return backward_order_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  bool record_;
  std::vector<Node> nodes_;
  std::vector<int> backward_order_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}

namespace ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs)
    if (v.tape().needs_grad(v)) return true;
  return false;
}

// Accumulate into input gradient only when that input participates.
template <typename T, typename F>
void with_grad(Tape<T>& t, const Var<T>& in, F&& f) {
  if (t.needs_grad(in)) f(t.grad_of(in.id()));
}

template <typename T>
void check_same_tape(const Var<T>& a, const Var<T>& b) {
  require(&a.tape() == &b.tape(), "ops on vars from different tapes");
}

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, kh, kw, sh, sw, ph, pw, ho, wo;
  std::size_t ck() const { return cin * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.sh + ki) - static_cast<long>(g.ph);
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.sw + kj) - static_cast<long>(g.pw);
            T v = T(0);
            if (ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w))
              v = x[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)];
            row[oi * g.wo + oj] = v;
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.sh + ki) - static_cast<long>(g.ph);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.sw + kj) - static_cast<long>(g.pw);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] +=
                row[oi * g.wo + oj];
          }
        }
      }
}

// Shared 2-D convolution kernel; conv1d routes through it with h = 1.
template <typename T>
Var<T> conv_impl(OpKind kind, const Var<T>& x, const Var<T>& w, const Var<T>* b, ConvGeom g,
                 Shape out_shape) {
  Tape<T>& t = x.tape();
  const std::size_t ck = g.ck(), p = g.positions();
  const std::size_t in_sz = g.cin * g.h * g.w, out_sz = g.cout * p;
  auto cols = std::make_shared<std::vector<T>>(g.batch * ck * p);
  Tensor<T> out(std::move(out_shape));
  CMapM<T> W(w.value().data(), static_cast<long>(g.cout), static_cast<long>(ck));
  for (std::size_t n = 0; n < g.batch; ++n) {
    T* col = cols->data() + n * ck * p;
    im2col(x.value().data() + n * in_sz, g, col);
    MapM<T> O(out.data() + n * out_sz, static_cast<long>(g.cout), static_cast<long>(p));
    O.noalias() = W * CMapM<T>(col, static_cast<long>(ck), static_cast<long>(p));
    if (b) {
      const T* bias = b->value().data();
      for (std::size_t c = 0; c < g.cout; ++c) O.row(static_cast<long>(c)).array() += bias[c];
    }
  }
  const bool ng = b ? any_grad({x, w, *b}) : any_grad({x, w});
  const int xid = x.id(), wid = w.id(), bid = b ? b->id() : -1;
  return t.push(kind, std::move(out), ng, [=](Tape<T>& tp, int self) {
    const Tensor<T>& dy = tp.node(self).grad;
    const bool gx = tp.node(xid).needs_grad, gw = tp.node(wid).needs_grad;
    const bool gb = bid >= 0 && tp.node(bid).needs_grad;
    std::vector<T> dcol(gx ? ck * p : 0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      CMapM<T> DY(dy.data() + n * out_sz, static_cast<long>(g.cout), static_cast<long>(p));
      const T* col = cols->data() + n * ck * p;
      if (gw) {
        MapM<T> DW(tp.grad_of(wid).data(), static_cast<long>(g.cout), static_cast<long>(ck));
        DW.noalias() += DY * CMapM<T>(col, static_cast<long>(ck), static_cast<long>(p)).transpose();
      }
      if (gb) {
        T* db = tp.grad_of(bid).data();
        for (std::size_t c = 0; c < g.cout; ++c) db[c] += DY.row(static_cast<long>(c)).sum();
      }
      if (gx) {
        CMapM<T> Wm(tp.node(wid).value.data(), static_cast<long>(g.cout), static_cast<long>(ck));
        MapM<T> DC(dcol.data(), static_cast<long>(ck), static_cast<long>(p));
        DC.noalias() = Wm.transpose() * DY;
        col2im_add(dcol.data(), g, tp.grad_of(xid).data() + n * in_sz);
      }
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(OpKind kind, const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tape<T>& t = x.tape();
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  const int xid = x.id();
  return t.push(kind, std::move(out), t.needs_grad(x), [=](Tape<T>& tp, int self) {
    const auto& n = tp.node(self);
    const auto& xin = tp.node(xid).value;
    auto& dx = tp.grad_of(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i] * deriv(xin[i], n.value[i]);
  });
}

}  // namespace detail

using detail::require;

/// C = A · B for A [m,k], B [k,n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  using namespace detail;
  check_same_tape(a, b);
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const long m = static_cast<long>(a.dim(0)), k = static_cast<long>(a.dim(1)),
             n = static_cast<long>(b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  MapM<T>(out.data(), m, n).noalias() = CMapM<T>(a.value().data(), m, k) * CMapM<T>(b.value().data(), k, n);
  const int aid = a.id(), bid = b.id();
  return a.tape().push(OpKind::MatMul, std::move(out), any_grad({a, b}), [=](Tape<T>& tp, int self) {
    CMapM<T> DC(tp.node(self).grad.data(), m, n);
    if (tp.node(aid).needs_grad)
      MapM<T>(tp.grad_of(aid).data(), m, k).noalias() +=
          DC * CMapM<T>(tp.node(bid).value.data(), k, n).transpose();
    if (tp.node(bid).needs_grad)
      MapM<T>(tp.grad_of(bid).data(), k, n).noalias() +=
          CMapM<T>(tp.node(aid).value.data(), m, k).transpose() * DC;
  });
}

/// 2-D convolution. x [B,Cin,H,W], w [Cout,Cin,kh,kw], optional bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, std::size_t pad,
              std::size_t stride = 1) {
  require(x.value().rank() == 4 && w.value().rank() == 4 && x.dim(1) == w.dim(1),
          "conv2d: bad shapes " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                     stride, stride, pad, pad, 0, 0};
  require(g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw, "conv2d: kernel larger than input");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (bias) require(bias->value().size() == g.cout, "conv2d: bias size");
  return detail::conv_impl(OpKind::Conv2d, x, w, bias, g, {g.batch, g.cout, g.ho, g.wo});
}

/// 1-D convolution. x [B,Cin,L], w [Cout,Cin,k], optional bias [Cout].
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, std::size_t pad,
              std::size_t stride) {
  require(x.value().rank() == 3 && w.value().rank() == 3 && x.dim(1) == w.dim(1),
          "conv1d: bad shapes " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
  detail::ConvGeom g{x.dim(0), x.dim(1), 1, x.dim(2), w.dim(0), 1, w.dim(2),
                     1, stride, 0, pad, 1, 0};
  require(g.w + 2 * pad >= g.kw, "conv1d: kernel larger than input");
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (bias) require(bias->value().size() == g.cout, "conv1d: bias size");
  return detail::conv_impl(OpKind::Conv1d, x, w, bias, g, {g.batch, g.cout, g.wo});
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      OpKind::Relu, x, [](T v) { return v > T(0) ? v : T(0); },
      [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      OpKind::Sigmoid, x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Natural log with the argument floored at the smallest normal value.
template <typename T>
Var<T> log(const Var<T>& x) {
  static constexpr T floor = std::numeric_limits<T>::min();
  return detail::unary(
      OpKind::Log, x, [](T v) { return std::log(std::max(v, floor)); },
      [](T in, T) { return T(1) / std::max(in, floor); });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  return detail::unary(
      OpKind::Reciprocal, x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  return detail::unary(
      OpKind::Scale, x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary(
      OpKind::AddScalar, x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename T>
Var<T> grad_reverse(const Var<T>& x, T lambda = T(1)) {
  return detail::unary(
      OpKind::GradReverse, x, [](T v) { return v; }, [lambda](T, T) { return -lambda; });
}

/// Copy of x with no gradient path back to it.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return x.tape().constant(x.value());
}

/// Row-wise softmax over the last dimension of a 2-D tensor.
template <typename T>
Var<T> softmax(const Var<T>& x) {
  require(x.value().rank() == 2, "softmax: expects [B,K]");
  const std::size_t rows = x.dim(0), k = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * k;
    T* o = out.data() + r * k;
    const T mx = *std::max_element(in, in + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] = static_cast<T>(o[j] / z);
  }
  const int xid = x.id();
  return x.tape().push(OpKind::Softmax, std::move(out), x.tape().needs_grad(x),
                       [=](Tape<T>& tp, int self) {
                         const auto& n = tp.node(self);
                         auto& dx = tp.grad_of(xid);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const T* y = n.value.data() + r * k;
                           const T* dy = n.grad.data() + r * k;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dy[j]) * y[j];
                           for (std::size_t j = 0; j < k; ++j)
                             dx[r * k + j] += y[j] * static_cast<T>(dy[j] - dot);
                         }
                       });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape().push(OpKind::Add, std::move(out), detail::any_grad({a, b}), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    for (int id : {aid, bid}) {
      if (!tp.node(id).needs_grad) continue;
      auto& d = tp.grad_of(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape().push(OpKind::Mul, std::move(out), detail::any_grad({a, b}), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    const auto& av = tp.node(aid).value;
    const auto& bv = tp.node(bid).value;
    if (tp.node(aid).needs_grad) {
      auto& d = tp.grad_of(aid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * bv[i];
    }
    if (tp.node(bid).needs_grad) {
      auto& d = tp.grad_of(bid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

namespace detail {

// out[b, c, s] = x[b, c, s] (op) v[b or 0, c]; `inner` = trailing extent s.
template <typename T>
Var<T> broadcast_binary(OpKind kind, const Var<T>& x, const Var<T>& v, std::size_t outer,
                        std::size_t mid, std::size_t inner, bool per_batch, bool multiply) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  const T* vv = v.value().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t m = 0; m < mid; ++m) {
      const T s = vv[(per_batch ? o * mid : 0) + m];
      const std::size_t base = (o * mid + m) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        out[base + i] = multiply ? xv[base + i] * s : xv[base + i] + s;
    }
  const int xid = x.id(), vid = v.id();
  return x.tape().push(kind, std::move(out), any_grad({x, v}), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    const auto& xval = tp.node(xid).value;
    const auto& vval = tp.node(vid).value;
    const bool gx = tp.node(xid).needs_grad, gv = tp.node(vid).needs_grad;
    T* dx = gx ? tp.grad_of(xid).data() : nullptr;
    T* dv = gv ? tp.grad_of(vid).data() : nullptr;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t m = 0; m < mid; ++m) {
        const std::size_t vi = (per_batch ? o * mid : 0) + m;
        const std::size_t base = (o * mid + m) * inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          if (multiply) {
            if (dx) dx[base + i] += dy[base + i] * vval[vi];
            acc += static_cast<double>(dy[base + i]) * xval[base + i];
          } else {
            if (dx) dx[base + i] += dy[base + i];
            acc += dy[base + i];
          }
        }
        if (dv) dv[vi] += static_cast<T>(acc);
      }
  });
}

}  // namespace detail

/// x [B,n] + b [n] broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& b) {
  require(x.value().rank() == 2 && b.value().size() == x.dim(1), "add_row: bad shapes");
  return detail::broadcast_binary(OpKind::AddRow, x, b, x.dim(0), x.dim(1), 1, false, false);
}

/// x [B,C,...] + v [B,C] broadcast over trailing positions.
template <typename T>
Var<T> add_channel(const Var<T>& x, const Var<T>& v) {
  require(x.value().rank() >= 2 && v.value().rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1),
          "add_channel: bad shapes " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  const std::size_t inner = x.value().size() / (x.dim(0) * x.dim(1));
  return detail::broadcast_binary(OpKind::AddChannel, x, v, x.dim(0), x.dim(1), inner, true, false);
}

/// x [B,C,...] * g [B,C] broadcast over trailing positions.
template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& g) {
  require(x.value().rank() >= 2 && g.value().rank() == 2 && g.dim(0) == x.dim(0) && g.dim(1) == x.dim(1),
          "mul_channel: bad shapes " + shape_str(x.shape()) + " * " + shape_str(g.shape()));
  const std::size_t inner = x.value().size() / (x.dim(0) * x.dim(1));
  return detail::broadcast_binary(OpKind::MulChannel, x, g, x.dim(0), x.dim(1), inner, true, true);
}

/// x [B,n] * c [B,1]: scales each row.
template <typename T>
Var<T> mul_col(const Var<T>& x, const Var<T>& c) {
  require(x.value().rank() == 2 && c.value().size() == x.dim(0), "mul_col: bad shapes");
  return detail::broadcast_binary(OpKind::MulCol, x, c, x.dim(0), 1, x.dim(1), true, true);
}

/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out({1}, static_cast<T>(sum_wide<T>(x.value().span())));
  const int xid = x.id();
  return x.tape().push(OpKind::Sum, std::move(out), x.tape().needs_grad(x), [=](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad[0];
    auto& dx = tp.grad_of(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const double n = static_cast<double>(x.value().size());
  Tensor<T> out({1}, static_cast<T>(sum_wide<T>(x.value().span()) / n));
  const int xid = x.id();
  return x.tape().push(OpKind::Mean, std::move(out), x.tape().needs_grad(x), [=](Tape<T>& tp, int self) {
    const T g = static_cast<T>(tp.node(self).grad[0] / n);
    auto& dx = tp.grad_of(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

/// [B,n] -> [B,1] row sums.
template <typename T>
Var<T> sum_last(const Var<T>& x) {
  require(x.value().rank() == 2, "sum_last: expects [B,n]");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor<T> out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r)
    out[r] = static_cast<T>(sum_wide<T>(x.value().span().subspan(r * n, n)));
  const int xid = x.id();
  return x.tape().push(OpKind::SumLast, std::move(out), x.tape().needs_grad(x), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    auto& dx = tp.grad_of(xid);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += dy[r];
  });
}

/// Global average pool: [B,C,...] -> [B,C].
template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
  require(x.value().rank() >= 3, "mean_spatial: expects [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), inner = x.value().size() / (b * c);
  Tensor<T> out({b, c});
  for (std::size_t i = 0; i < b * c; ++i)
    out[i] = static_cast<T>(sum_wide<T>(x.value().span().subspan(i * inner, inner)) / inner);
  const int xid = x.id();
  return x.tape().push(OpKind::MeanSpatial, std::move(out), x.tape().needs_grad(x),
                       [=](Tape<T>& tp, int self) {
                         const auto& dy = tp.node(self).grad;
                         auto& dx = tp.grad_of(xid);
                         for (std::size_t i = 0; i < b * c; ++i) {
                           const T g = dy[i] / static_cast<T>(inner);
                           for (std::size_t k = 0; k < inner; ++k) dx[i * inner + k] += g;
                         }
                       });
}

/// Concatenate two [B,n] and [B,m] along the last axis.
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(0) == b.dim(0), "concat: bad shapes");
  const std::size_t rows = a.dim(0), n = a.dim(1), m = b.dim(1);
  Tensor<T> out({rows, n + m});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * n, n, out.data() + r * (n + m));
    std::copy_n(b.value().data() + r * m, m, out.data() + r * (n + m) + n);
  }
  const int aid = a.id(), bid = b.id();
  return a.tape().push(OpKind::Concat, std::move(out), detail::any_grad({a, b}), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    const bool ga = tp.node(aid).needs_grad, gb = tp.node(bid).needs_grad;
    for (std::size_t r = 0; r < rows; ++r) {
      if (ga) {
        auto& da = tp.grad_of(aid);
        for (std::size_t j = 0; j < n; ++j) da[r * n + j] += dy[r * (n + m) + j];
      }
      if (gb) {
        auto& db = tp.grad_of(bid);
        for (std::size_t j = 0; j < m; ++j) db[r * m + j] += dy[r * (n + m) + n + j];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const int xid = x.id();
  return x.tape().push(OpKind::Reshape, std::move(out), x.tape().needs_grad(x), [=](Tape<T>& tp, int self) {
    const auto& dy = tp.node(self).grad;
    auto& dx = tp.grad_of(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, scale(b, T(-1)));
}

/// Standardises every row of a [B,n] tensor to zero mean and unit variance.
template <typename T>
Var<T> row_norm(const Var<T>& x, T eps = T(1e-5)) {
  require(x.value().rank() == 2 && x.dim(1) >= 2, "row_norm: expects [B,n] with n >= 2");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor<T> out(x.shape());
  std::vector<T> inv_sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * n;
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv_sd[r] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>((xr[j] - mu) * inv_sd[r]);
  }
  const int xid = x.id();
  return x.tape().push(OpKind::RowNorm, std::move(out), x.tape().needs_grad(x), [=](Tape<T>& tp, int self) {
    const auto& y = tp.node(self).value;
    const auto& dy = tp.node(self).grad;
    auto& dx = tp.grad_of(xid);
    for (std::size_t r = 0; r < rows; ++r) {
      double mdy = 0.0, mdyy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mdy += dy[r * n + j];
        mdyy += static_cast<double>(dy[r * n + j]) * y[r * n + j];
      }
      mdy /= static_cast<double>(n);
      mdyy /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j)
        dx[r * n + j] += static_cast<T>(inv_sd[r] * (dy[r * n + j] - mdy - y[r * n + j] * mdyy));
    }
  });
}

/// x [B,in] · W [in,out] + b [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>* b) {
  Var<T> y = matmul(x, w);
  return b ? add_row(y, *b) : y;
}

}  // namespace ad
}  // namespace osdg
