// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "core/tensor.hpp"

namespace maxico {

// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major, no padding between
// rows. Loop orders are chosen so the innermost loop runs over contiguous
// memory and auto-vectorizes.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
          const T* a, const T* b, T beta, T* c) {
  if (beta == T(0)) {
    std::fill(c, c + static_cast<int64_t>(m) * n, T(0));
  } else if (beta != T(1)) {
    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] *= beta;
  }
  if (!trans_a && !trans_b) {
    // C[i,j] += A[i,p] B[p,j]
    for (int i = 0; i < m; ++i) {
      T* ci = c + static_cast<int64_t>(i) * n;
      const T* ai = a + static_cast<int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const T s = alpha * ai[p];
        const T* bp = b + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += s * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // C[i,j] += A[i,p] B[j,p]
    for (int i = 0; i < m; ++i) {
      const T* ai = a + static_cast<int64_t>(i) * k;
      T* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<int64_t>(j) * k;
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += alpha * acc;
      }
    }
  } else if (trans_a && !trans_b) {
    // C[i,j] += A[p,i] B[p,j]
    for (int p = 0; p < k; ++p) {
      const T* ap = a + static_cast<int64_t>(p) * m;
      const T* bp = b + static_cast<int64_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const T s = alpha * ap[i];
        T* ci = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += s * bp[j];
      }
    }
  } else {
    // C[i,j] += A[p,i] B[j,p]
    for (int i = 0; i < m; ++i) {
      T* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<int64_t>(j) * k;
        T acc = T(0);
        for (int p = 0; p < k; ++p) acc += a[static_cast<int64_t>(p) * m + i] * bj[p];
        ci[j] += alpha * acc;
      }
    }
  }
}

// Patch extraction for convolution. x is {H,W,C}; the output row for pixel
// (y,x) holds the (kh,kw,C) window in that order, zero padded. Kernel
// stride doubles as the patch-embedding extractor (k == stride, pad 0).
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad,
            Tensor<T>& col, int& out_h, int& out_w) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  out_h = (h + 2 * pad - kh) / stride + 1;
  out_w = (w + 2 * pad - kw) / stride + 1;
  const int row_len = kh * kw * c;
  if (col.size() != static_cast<int64_t>(out_h) * out_w * row_len)
    col = Tensor<T>({out_h * out_w, row_len});
  T* dst = col.data();
  const T* src = x.data();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      T* row = dst + (static_cast<int64_t>(oy) * out_w + ox) * row_len;
      for (int dy = 0; dy < kh; ++dy) {
        const int iy = oy * stride - pad + dy;
        for (int dx = 0; dx < kw; ++dx) {
          const int ix = ox * stride - pad + dx;
          T* cell = row + (static_cast<int64_t>(dy) * kw + dx) * c;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            for (int ch = 0; ch < c; ++ch) cell[ch] = T(0);
          } else {
            const T* px = src + (static_cast<int64_t>(iy) * w + ix) * c;
            for (int ch = 0; ch < c; ++ch) cell[ch] = px[ch];
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds column gradients back onto the image.
template <typename T>
void col2im(const Tensor<T>& col, int h, int w, int c, int kh, int kw,
            int stride, int pad, Tensor<T>& x) {
  if (x.size() != static_cast<int64_t>(h) * w * c) x = Tensor<T>({h, w, c});
  std::fill(x.data(), x.data() + x.size(), T(0));
  const int out_h = (h + 2 * pad - kh) / stride + 1;
  const int out_w = (w + 2 * pad - kw) / stride + 1;
  const int row_len = kh * kw * c;
  const T* src = col.data();
  T* dst = x.data();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const T* row = src + (static_cast<int64_t>(oy) * out_w + ox) * row_len;
      for (int dy = 0; dy < kh; ++dy) {
        const int iy = oy * stride - pad + dy;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int ix = ox * stride - pad + dx;
          if (ix < 0 || ix >= w) continue;
          const T* cell = row + (static_cast<int64_t>(dy) * kw + dx) * c;
          T* px = dst + (static_cast<int64_t>(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) px[ch] += cell[ch];
        }
      }
    }
  }
}

}  // namespace maxico
