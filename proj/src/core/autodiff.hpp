// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "core/kernels.hpp"
#include "core/tensor.hpp"

namespace maxico::ad {

// Reverse-mode tape. Nodes are appended in forward order, so walking the
// tape backwards is already a topological order. One graph per sample per
// step; freed wholesale afterwards.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::function<void(Graph&)> backward;
  };

  int add(Tensor<T> value, bool requires_grad,
          std::function<void(Graph&)> backward = nullptr) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad,
                          std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(int i) const { return nodes_[i].value; }
  Node& node(int i) { return nodes_[i]; }

  bool has_grad(int i) const { return !nodes_[i].grad.empty(); }

  // Gradient buffer, zero-initialised to the value's shape on first use.
  Tensor<T>& grad_buf(int i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward_from(int loss) {
    check_arg(nodes_[loss].value.size() == 1,
              "backward requires a scalar loss node");
    grad_buf(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int idx = -1;

  bool defined() const { return g != nullptr; }
  const Tensor<T>& val() const { return g->value(idx); }
  const Tensor<T>& grad() const { return g->node(idx).grad; }
  bool requires_grad() const { return g->node(idx).requires_grad; }
};

template <typename T>
Var<T> constant(Graph<T>& g, Tensor<T> v) {
  return {&g, g.add(std::move(v), false)};
}

template <typename T>
Var<T> leaf(Graph<T>& g, Tensor<T> v, bool requires_grad) {
  return {&g, g.add(std::move(v), requires_grad)};
}

template <typename T>
void backward(Var<T> loss) {
  loss.g->backward_from(loss.idx);
}

namespace detail {

template <typename T>
inline void axpy(Tensor<T>& dst, const Tensor<T>& src, T a = T(1)) {
  for (int64_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_arg(a.val().same_shape(b.val()),
            "add: shape mismatch " + a.val().shape_str() + " vs " +
                b.val().shape_str());
  Tensor<T> y = a.val();
  detail::axpy(y, b.val());
  bool req = a.requires_grad() || b.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx, bi = b.idx;
    g.node(self).backward = [self, ai, bi](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      if (gr.node(ai).requires_grad) detail::axpy(gr.grad_buf(ai), gy);
      if (gr.node(bi).requires_grad) detail::axpy(gr.grad_buf(bi), gy);
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_arg(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor<T> y = a.val();
  detail::axpy(y, b.val(), T(-1));
  bool req = a.requires_grad() || b.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx, bi = b.idx;
    g.node(self).backward = [self, ai, bi](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      if (gr.node(ai).requires_grad) detail::axpy(gr.grad_buf(ai), gy);
      if (gr.node(bi).requires_grad) detail::axpy(gr.grad_buf(bi), gy, T(-1));
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_arg(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor<T> y(a.val().shape());
  for (int64_t i = 0; i < y.size(); ++i) y[i] = a.val()[i] * b.val()[i];
  bool req = a.requires_grad() || b.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx, bi = b.idx;
    g.node(self).backward = [self, ai, bi](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& av = gr.value(ai);
      const Tensor<T>& bv = gr.value(bi);
      if (gr.node(ai).requires_grad) {
        Tensor<T>& da = gr.grad_buf(ai);
        for (int64_t i = 0; i < gy.size(); ++i) da[i] += gy[i] * bv[i];
      }
      if (gr.node(bi).requires_grad) {
        Tensor<T>& db = gr.grad_buf(bi);
        for (int64_t i = 0; i < gy.size(); ++i) db[i] += gy[i] * av[i];
      }
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Graph<T>& g = *a.g;
  Tensor<T> y(a.val().shape());
  for (int64_t i = 0; i < y.size(); ++i) y[i] = a.val()[i] * c;
  bool req = a.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx;
    g.node(self).backward = [self, ai, c](Graph<T>& gr) {
      detail::axpy(gr.grad_buf(ai), gr.node(self).grad, c);
    };
  }
  return {&g, self};
}

// y[r,c] = x[r,c] + v[c], v broadcast over the leading dims.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> v) {
  Graph<T>& g = *x.g;
  const int d = v.val().dim(0);
  check_arg(x.val().dim(x.val().rank() - 1) == d, "add_rowvec: width mismatch");
  const int64_t rows = x.val().size() / d;
  Tensor<T> y = x.val();
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < d; ++c) y[r * d + c] += v.val()[c];
  bool req = x.requires_grad() || v.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx, vi = v.idx;
    g.node(self).backward = [self, xi, vi, rows, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      if (gr.node(xi).requires_grad) detail::axpy(gr.grad_buf(xi), gy);
      if (gr.node(vi).requires_grad) {
        Tensor<T>& dv = gr.grad_buf(vi);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < d; ++c) dv[c] += gy[r * d + c];
      }
    };
  }
  return {&g, self};
}

// y[r,c] = x[r,c] * v[c]. The dense-alignment broadcast.
template <typename T>
Var<T> mul_rowvec(Var<T> x, Var<T> v) {
  Graph<T>& g = *x.g;
  const int d = v.val().dim(0);
  check_arg(x.val().dim(x.val().rank() - 1) == d,
            "mul_rowvec: channel width mismatch, features " +
                x.val().shape_str() + " vs vector " + v.val().shape_str());
  const int64_t rows = x.val().size() / d;
  Tensor<T> y(x.val().shape());
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < d; ++c) y[r * d + c] = x.val()[r * d + c] * v.val()[c];
  bool req = x.requires_grad() || v.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx, vi = v.idx;
    g.node(self).backward = [self, xi, vi, rows, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& xv = gr.value(xi);
      const Tensor<T>& vv = gr.value(vi);
      if (gr.node(xi).requires_grad) {
        Tensor<T>& dx = gr.grad_buf(xi);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < d; ++c) dx[r * d + c] += gy[r * d + c] * vv[c];
      }
      if (gr.node(vi).requires_grad) {
        Tensor<T>& dv = gr.grad_buf(vi);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < d; ++c) dv[c] += gy[r * d + c] * xv[r * d + c];
      }
    };
  }
  return {&g, self};
}

// y = x * s with s a scalar node (shape {1}).
template <typename T>
Var<T> mul_scalar_var(Var<T> x, Var<T> s) {
  Graph<T>& g = *x.g;
  check_arg(s.val().size() == 1, "mul_scalar_var: s must be scalar");
  const T sv = s.val()[0];
  Tensor<T> y(x.val().shape());
  for (int64_t i = 0; i < y.size(); ++i) y[i] = x.val()[i] * sv;
  bool req = x.requires_grad() || s.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx, si = s.idx;
    g.node(self).backward = [self, xi, si](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const T s0 = gr.value(si)[0];
      if (gr.node(xi).requires_grad)
        detail::axpy(gr.grad_buf(xi), gy, s0);
      if (gr.node(si).requires_grad) {
        const Tensor<T>& xv = gr.value(xi);
        T acc = T(0);
        for (int64_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
        gr.grad_buf(si)[0] += acc;
      }
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> reciprocal(Var<T> s) {
  Graph<T>& g = *s.g;
  Tensor<T> y(s.val().shape());
  for (int64_t i = 0; i < y.size(); ++i) y[i] = T(1) / s.val()[i];
  bool req = s.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int si = s.idx;
    g.node(self).backward = [self, si](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& yv = gr.value(self);
      Tensor<T>& ds = gr.grad_buf(si);
      for (int64_t i = 0; i < gy.size(); ++i) ds[i] += -gy[i] * yv[i] * yv[i];
    };
  }
  return {&g, self};
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  Graph<T>& g = *a.g;
  check_arg(a.val().rank() == 2 && b.val().rank() == 2, "matmul: rank-2 only");
  const int m = trans_a ? a.val().dim(1) : a.val().dim(0);
  const int ka = trans_a ? a.val().dim(0) : a.val().dim(1);
  const int kb = trans_b ? b.val().dim(1) : b.val().dim(0);
  const int n = trans_b ? b.val().dim(0) : b.val().dim(1);
  check_arg(ka == kb, "matmul: inner dimensions disagree, " +
                          a.val().shape_str() + " vs " + b.val().shape_str());
  Tensor<T> y({m, n});
  gemm(trans_a, trans_b, m, n, ka, T(1), a.val().data(), b.val().data(), T(0),
       y.data());
  bool req = a.requires_grad() || b.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx, bi = b.idx;
    g.node(self).backward = [self, ai, bi, trans_a, trans_b, m, n,
                             ka](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& av = gr.value(ai);
      const Tensor<T>& bv = gr.value(bi);
      if (gr.node(ai).requires_grad) {
        Tensor<T>& da = gr.grad_buf(ai);
        if (!trans_a) {
          // dA = G op(B)^T
          gemm(false, !trans_b, m, ka, n, T(1), gy.data(), bv.data(), T(1),
               da.data());
        } else if (!trans_b) {
          // y = A^T B: dA = B G^T
          gemm(false, true, ka, m, n, T(1), bv.data(), gy.data(), T(1),
               da.data());
        } else {
          // y = A^T B^T: dA = B^T G^T
          gemm(true, true, ka, m, n, T(1), bv.data(), gy.data(), T(1),
               da.data());
        }
      }
      if (gr.node(bi).requires_grad) {
        Tensor<T>& db = gr.grad_buf(bi);
        if (!trans_b) {
          // dB = op(A)^T G
          gemm(!trans_a, false, ka, n, m, T(1), av.data(), gy.data(), T(1),
               db.data());
        } else if (!trans_a) {
          // y = A B^T: dB = G^T A
          gemm(true, false, n, ka, m, T(1), gy.data(), av.data(), T(1),
               db.data());
        } else {
          // y = A^T B^T: dB = G^T A^T
          gemm(true, true, n, ka, m, T(1), gy.data(), av.data(), T(1),
               db.data());
        }
      }
    };
  }
  return {&g, self};
}

// x {n, din} -> {n, dout}; bias optional (pass Var{} to skip).
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b = {}) {
  Var<T> y = matmul(x, w);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions and spatial ops
// ---------------------------------------------------------------------------

// x {H,W,Cin}, w {kh,kw,Cin,Cout} (contiguous, im2col-compatible), b {Cout}.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  check_arg(x.val().rank() == 3, "conv2d expects {H,W,C} input");
  check_arg(w.val().rank() == 4, "conv2d expects {kh,kw,Cin,Cout} weights");
  const int kh = w.val().dim(0), kw = w.val().dim(1);
  const int cin = w.val().dim(2), cout = w.val().dim(3);
  check_arg(x.val().dim(2) == cin,
            "conv2d: input channels " + std::to_string(x.val().dim(2)) +
                " do not match weight channels " + std::to_string(cin));
  Tensor<T> col;
  int oh = 0, ow = 0;
  im2col(x.val(), kh, kw, stride, pad, col, oh, ow);
  const int rows = oh * ow, klen = kh * kw * cin;
  Tensor<T> y({oh, ow, cout});
  gemm(false, false, rows, cout, klen, T(1), col.data(), w.val().data(), T(0),
       y.data());
  if (b.defined()) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cout; ++c)
        y[static_cast<int64_t>(r) * cout + c] += b.val()[c];
  }
  bool req = x.requires_grad() || w.requires_grad() ||
             (b.defined() && b.requires_grad());
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx, wi = w.idx, bi = b.defined() ? b.idx : -1;
    const int h = x.val().dim(0), wdt = x.val().dim(1);
    g.node(self).backward = [self, xi, wi, bi, col = std::move(col), kh, kw,
                             cin, cout, stride, pad, h, wdt, rows,
                             klen](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;  // {oh,ow,cout}
      if (gr.node(wi).requires_grad) {
        gemm(true, false, klen, cout, rows, T(1), col.data(), gy.data(), T(1),
             gr.grad_buf(wi).data());
      }
      if (bi >= 0 && gr.node(bi).requires_grad) {
        Tensor<T>& db = gr.grad_buf(bi);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cout; ++c)
            db[c] += gy[static_cast<int64_t>(r) * cout + c];
      }
      if (gr.node(xi).requires_grad) {
        Tensor<T> dcol({rows, klen});
        gemm(false, true, rows, klen, cout, T(1), gy.data(),
             gr.value(wi).data(), T(0), dcol.data());
        Tensor<T> dx;
        col2im(dcol, h, wdt, cin, kh, kw, stride, pad, dx);
        detail::axpy(gr.grad_buf(xi), dx);
      }
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> maxpool2(Var<T> x) {
  Graph<T>& g = *x.g;
  const int h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  check_arg(h % 2 == 0 && w % 2 == 0, "maxpool2 requires even spatial dims");
  const int oh = h / 2, ow = w / 2;
  Tensor<T> y({oh, ow, c});
  std::vector<int64_t> arg(static_cast<size_t>(oh) * ow * c);
  const T* src = x.val().data();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < c; ++ch) {
        int64_t best = (static_cast<int64_t>(2 * oy) * w + 2 * ox) * c + ch;
        T bv = src[best];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int64_t i =
                (static_cast<int64_t>(2 * oy + dy) * w + 2 * ox + dx) * c + ch;
            if (src[i] > bv) { bv = src[i]; best = i; }
          }
        int64_t o = (static_cast<int64_t>(oy) * ow + ox) * c + ch;
        y[o] = bv;
        arg[static_cast<size_t>(o)] = best;
      }
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi, arg = std::move(arg)](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t o = 0; o < gy.size(); ++o) dx[arg[static_cast<size_t>(o)]] += gy[o];
    };
  }
  return {&g, self};
}

namespace detail {

// align-corners source coordinate; exact for linear ramps.
inline double src_coord(int o, int out_n, int in_n) {
  if (out_n == 1) return 0.0;
  return static_cast<double>(o) * (in_n - 1) / (out_n - 1);
}

}  // namespace detail

template <typename T>
Var<T> resize_bilinear(Var<T> x, int oh, int ow) {
  Graph<T>& g = *x.g;
  const int h = x.val().dim(0), w = x.val().dim(1), c = x.val().dim(2);
  Tensor<T> y({oh, ow, c});
  const T* src = x.val().data();
  for (int oy = 0; oy < oh; ++oy) {
    const double sy = detail::src_coord(oy, oh, h);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const T fy = static_cast<T>(sy - y0);
    for (int ox = 0; ox < ow; ++ox) {
      const double sx = detail::src_coord(ox, ow, w);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const T fx = static_cast<T>(sx - x0);
      const T* p00 = src + (static_cast<int64_t>(y0) * w + x0) * c;
      const T* p01 = src + (static_cast<int64_t>(y0) * w + x1) * c;
      const T* p10 = src + (static_cast<int64_t>(y1) * w + x0) * c;
      const T* p11 = src + (static_cast<int64_t>(y1) * w + x1) * c;
      T* out = y.data() + (static_cast<int64_t>(oy) * ow + ox) * c;
      const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
      const T w10 = fy * (T(1) - fx), w11 = fy * fx;
      for (int ch = 0; ch < c; ++ch)
        out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi, oh, ow, h, w, c](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int oy = 0; oy < oh; ++oy) {
        const double sy = detail::src_coord(oy, oh, h);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const T fy = static_cast<T>(sy - y0);
        for (int ox = 0; ox < ow; ++ox) {
          const double sx = detail::src_coord(ox, ow, w);
          const int x0 = static_cast<int>(sx);
          const int x1 = std::min(x0 + 1, w - 1);
          const T fx = static_cast<T>(sx - x0);
          const T* go = gy.data() + (static_cast<int64_t>(oy) * ow + ox) * c;
          const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
          const T w10 = fy * (T(1) - fx), w11 = fy * fx;
          T* d00 = dx.data() + (static_cast<int64_t>(y0) * w + x0) * c;
          T* d01 = dx.data() + (static_cast<int64_t>(y0) * w + x1) * c;
          T* d10 = dx.data() + (static_cast<int64_t>(y1) * w + x0) * c;
          T* d11 = dx.data() + (static_cast<int64_t>(y1) * w + x1) * c;
          for (int ch = 0; ch < c; ++ch) {
            d00[ch] += w00 * go[ch];
            d01[ch] += w01 * go[ch];
            d10[ch] += w10 * go[ch];
            d11[ch] += w11 * go[ch];
          }
        }
      }
    };
  }
  return {&g, self};
}

// ---------------------------------------------------------------------------
// Normalisation and nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  Graph<T>& g = *x.g;
  const int d = x.val().dim(x.val().rank() - 1);
  check_arg(gamma.val().size() == d && beta.val().size() == d,
            "layer_norm: affine parameter width mismatch");
  const int64_t rows = x.val().size() / d;
  Tensor<T> y(x.val().shape());
  Tensor<T> xhat(x.val().shape());
  std::vector<T> rstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().data() + r * d;
    T mean = T(0);
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    T var = T(0);
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= d;
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[static_cast<size_t>(r)] = rs;
    for (int i = 0; i < d; ++i) {
      const T xh = (xr[i] - mean) * rs;
      xhat[r * d + i] = xh;
      y[r * d + i] = gamma.val()[i] * xh + beta.val()[i];
    }
  }
  bool req = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx, gi = gamma.idx, bi = beta.idx;
    g.node(self).backward = [self, xi, gi, bi, xhat = std::move(xhat),
                             rstd = std::move(rstd), rows, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& gv = gr.value(gi);
      if (gr.node(gi).requires_grad) {
        Tensor<T>& dg = gr.grad_buf(gi);
        for (int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < d; ++i)
            dg[i] += gy[r * d + i] * xhat[r * d + i];
      }
      if (gr.node(bi).requires_grad) {
        Tensor<T>& db = gr.grad_buf(bi);
        for (int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < d; ++i) db[i] += gy[r * d + i];
      }
      if (gr.node(xi).requires_grad) {
        Tensor<T>& dx = gr.grad_buf(xi);
        for (int64_t r = 0; r < rows; ++r) {
          T sum_dxh = T(0), sum_dxh_xh = T(0);
          for (int i = 0; i < d; ++i) {
            const T dxh = gy[r * d + i] * gv[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat[r * d + i];
          }
          const T inv_d = T(1) / d;
          for (int i = 0; i < d; ++i) {
            const T dxh = gy[r * d + i] * gv[i];
            dx[r * d + i] += rstd[static_cast<size_t>(r)] *
                (dxh - inv_d * sum_dxh - xhat[r * d + i] * inv_d * sum_dxh_xh);
          }
        }
      }
    };
  }
  return {&g, self};
}

// Softmax over the last dimension.
template <typename T>
Var<T> softmax_last(Var<T> x) {
  Graph<T>& g = *x.g;
  const int d = x.val().dim(x.val().rank() - 1);
  const int64_t rows = x.val().size() / d;
  Tensor<T> y(x.val().shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().data() + r * d;
    T mx = xr[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
    T sum = T(0);
    for (int i = 0; i < d; ++i) {
      const T e = std::exp(xr[i] - mx);
      y[r * d + i] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int i = 0; i < d; ++i) y[r * d + i] *= inv;
  }
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi, rows, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& yv = gr.value(self);
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (int i = 0; i < d; ++i) dot += gy[r * d + i] * yv[r * d + i];
        for (int i = 0; i < d; ++i)
          dx[r * d + i] += yv[r * d + i] * (gy[r * d + i] - dot);
      }
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> y(x.val().shape());
  for (int64_t i = 0; i < y.size(); ++i)
    y[i] = x.val()[i] > T(0) ? x.val()[i] : T(0);
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& xv = gr.value(xi);
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t i = 0; i < gy.size(); ++i)
        if (xv[i] > T(0)) dx[i] += gy[i];
    };
  }
  return {&g, self};
}

// erf form so the derivative is analytic.
template <typename T>
Var<T> gelu(Var<T> x) {
  Graph<T>& g = *x.g;
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  Tensor<T> y(x.val().shape());
  for (int64_t i = 0; i < y.size(); ++i) {
    const double v = static_cast<double>(x.val()[i]);
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi](Graph<T>& gr) {
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& xv = gr.value(xi);
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t i = 0; i < gy.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx[i] += gy[i] * static_cast<T>(cdf + v * pdf);
      }
    };
  }
  return {&g, self};
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  Graph<T>& g = *x.g;
  Tensor<T> y = x.val().reshaped(shape);
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t i = 0; i < gy.size(); ++i) dx[i] += gy[i];
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_arg(a.val().rank() == b.val().rank(), "concat_last: rank mismatch");
  const int rank = a.val().rank();
  for (int i = 0; i + 1 < rank; ++i)
    check_arg(a.val().dim(i) == b.val().dim(i),
              "concat_last: leading dims differ");
  const int da = a.val().dim(rank - 1), db = b.val().dim(rank - 1);
  const int64_t rows = a.val().size() / da;
  std::vector<int> shape = a.val().shape();
  shape[static_cast<size_t>(rank - 1)] = da + db;
  Tensor<T> y(shape);
  for (int64_t r = 0; r < rows; ++r) {
    for (int i = 0; i < da; ++i) y[r * (da + db) + i] = a.val()[r * da + i];
    for (int i = 0; i < db; ++i)
      y[r * (da + db) + da + i] = b.val()[r * db + i];
  }
  bool req = a.requires_grad() || b.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ai = a.idx, bi = b.idx;
    g.node(self).backward = [self, ai, bi, rows, da, db](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      if (gr.node(ai).requires_grad) {
        Tensor<T>& dst = gr.grad_buf(ai);
        for (int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < da; ++i) dst[r * da + i] += gy[r * (da + db) + i];
      }
      if (gr.node(bi).requires_grad) {
        Tensor<T>& dst = gr.grad_buf(bi);
        for (int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < db; ++i)
            dst[r * db + i] += gy[r * (da + db) + da + i];
      }
    };
  }
  return {&g, self};
}

// Split the last dim into `parts` equal chunks (multi-head attention).
template <typename T>
std::vector<Var<T>> split_last(Var<T> x, int parts) {
  Graph<T>& g = *x.g;
  const int rank = x.val().rank();
  const int d = x.val().dim(rank - 1);
  check_arg(d % parts == 0, "split_last: width not divisible");
  const int dc = d / parts;
  const int64_t rows = x.val().size() / d;
  std::vector<int> shape = x.val().shape();
  shape[static_cast<size_t>(rank - 1)] = dc;
  std::vector<Var<T>> out;
  for (int p = 0; p < parts; ++p) {
    Tensor<T> y(shape);
    for (int64_t r = 0; r < rows; ++r)
      for (int i = 0; i < dc; ++i) y[r * dc + i] = x.val()[r * d + p * dc + i];
    bool req = x.requires_grad();
    int self = g.add(std::move(y), req);
    if (req) {
      int xi = x.idx;
      g.node(self).backward = [self, xi, rows, d, dc, p](Graph<T>& gr) {
        const Tensor<T>& gy = gr.node(self).grad;
        Tensor<T>& dx = gr.grad_buf(xi);
        for (int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < dc; ++i) dx[r * d + p * dc + i] += gy[r * dc + i];
      };
    }
    out.push_back({&g, self});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and lookups
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.g;
  T s = T(0);
  for (int64_t i = 0; i < x.val().size(); ++i) s += x.val()[i];
  bool req = x.requires_grad();
  int self = g.add(Tensor<T>({1}, {s}), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi](Graph<T>& gr) {
      const T gy = gr.node(self).grad[0];
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += gy;
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const T inv = T(1) / static_cast<T>(x.val().size());
  return scale(sum_all(x), inv);
}

// {n,d} -> {d}; text mean-pooling.
template <typename T>
Var<T> mean_rows(Var<T> x) {
  Graph<T>& g = *x.g;
  check_arg(x.val().rank() == 2, "mean_rows expects {n,d}");
  const int n = x.val().dim(0), d = x.val().dim(1);
  Tensor<T> y({d});
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < d; ++i) y[i] += x.val()[static_cast<int64_t>(r) * d + i];
  for (int i = 0; i < d; ++i) y[i] /= static_cast<T>(n);
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi, n, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      Tensor<T>& dx = gr.grad_buf(xi);
      const T inv = T(1) / static_cast<T>(n);
      for (int r = 0; r < n; ++r)
        for (int i = 0; i < d; ++i) dx[static_cast<int64_t>(r) * d + i] += gy[i] * inv;
    };
  }
  return {&g, self};
}

template <typename T>
Var<T> embedding(Graph<T>& g, const std::vector<int>& ids, Var<T> table) {
  check_arg(table.val().rank() == 2, "embedding table must be {V,d}");
  const int v = table.val().dim(0), d = table.val().dim(1);
  const int n = static_cast<int>(ids.size());
  Tensor<T> y({n, d});
  for (int r = 0; r < n; ++r) {
    check_arg(ids[static_cast<size_t>(r)] >= 0 && ids[static_cast<size_t>(r)] < v,
              "embedding id out of range");
    const T* row = table.val().data() + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d;
    for (int i = 0; i < d; ++i) y[static_cast<int64_t>(r) * d + i] = row[i];
  }
  bool req = table.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int ti = table.idx;
    g.node(self).backward = [self, ti, ids, d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      Tensor<T>& dt = gr.grad_buf(ti);
      for (size_t r = 0; r < ids.size(); ++r)
        for (int i = 0; i < d; ++i)
          dt[static_cast<int64_t>(ids[r]) * d + i] += gy[static_cast<int64_t>(r) * d + i];
    };
  }
  return {&g, self};
}

// Row-wise renormalisation to sum 1 (after upsampling soft labels).
template <typename T>
Var<T> renorm_last(Var<T> x) {
  Graph<T>& g = *x.g;
  const int d = x.val().dim(x.val().rank() - 1);
  const int64_t rows = x.val().size() / d;
  Tensor<T> y(x.val().shape());
  std::vector<T> inv_sum(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (int i = 0; i < d; ++i) s += x.val()[r * d + i];
    check(s > T(0), ErrorCode::numeric, "renorm_last: non-positive row sum");
    const T inv = T(1) / s;
    inv_sum[static_cast<size_t>(r)] = inv;
    for (int i = 0; i < d; ++i) y[r * d + i] = x.val()[r * d + i] * inv;
  }
  bool req = x.requires_grad();
  int self = g.add(std::move(y), req);
  if (req) {
    int xi = x.idx;
    g.node(self).backward = [self, xi, inv_sum = std::move(inv_sum), rows,
                             d](Graph<T>& gr) {
      const Tensor<T>& gy = gr.node(self).grad;
      const Tensor<T>& yv = gr.value(self);
      Tensor<T>& dx = gr.grad_buf(xi);
      for (int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (int i = 0; i < d; ++i) dot += gy[r * d + i] * yv[r * d + i];
        for (int i = 0; i < d; ++i)
          dx[r * d + i] += inv_sum[static_cast<size_t>(r)] * (gy[r * d + i] - dot);
      }
    };
  }
  return {&g, self};
}

}  // namespace maxico::ad
