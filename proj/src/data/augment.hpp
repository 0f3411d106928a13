// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace maxico {

// One dihedral-group transform: horizontal flip, then vertical flip, then
// rot90 quarter-turns counter-clockwise. Covers the flip/rotation
// augmentation set; images, masks, and soft labels move identically.
struct D4 {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // quarter turns CCW, in {0,1,2,3}

  bool identity() const { return !hflip && !vflip && rot90 == 0; }
};

inline D4 sample_d4(Rng& rng) {
  D4 t;
  t.hflip = rng.bernoulli(0.5);
  t.vflip = rng.bernoulli(0.5);
  t.rot90 = static_cast<int>(rng.uniform_int(4));
  return t;
}

namespace detail {

// Maps output coordinates back to input coordinates for d4_apply on an
// n x n grid (square inputs keep their shape under every group element).
inline void d4_source(const D4& t, int n, int oy, int ox, int& iy, int& ix) {
  // Invert the rotation: output = R^k(flipped), so flipped = R^-k(output).
  int fy = oy, fx = ox;
  for (int r = 0; r < t.rot90 % 4; ++r) {
    // inverse of CCW out(y,x) = in(x, n-1-y) is in(y,x) = out(n-1-x, y)
    const int ny = fx, nx = n - 1 - fy;
    fy = ny;
    fx = nx;
  }
  iy = t.vflip ? n - 1 - fy : fy;
  ix = t.hflip ? n - 1 - fx : fx;
}

}  // namespace detail

// Applies t to a {n,n} or {n,n,C} tensor.
template <typename T>
Tensor<T> d4_apply(const Tensor<T>& x, const D4& t) {
  check_arg(x.rank() == 2 || x.rank() == 3, "d4_apply expects {n,n[,C]}");
  const int n = x.dim(0);
  check_arg(x.dim(1) == n, "d4_apply requires a square grid");
  const int c = x.rank() == 3 ? x.dim(2) : 1;
  Tensor<T> out(x.shape());
  for (int oy = 0; oy < n; ++oy)
    for (int ox = 0; ox < n; ++ox) {
      int iy, ix;
      detail::d4_source(t, n, oy, ox, iy, ix);
      const T* src = x.data() + (static_cast<int64_t>(iy) * n + ix) * c;
      T* dst = out.data() + (static_cast<int64_t>(oy) * n + ox) * c;
      for (int k = 0; k < c; ++k) dst[k] = src[k];
    }
  return out;
}

// Applies the group inverse of t (d4_apply_inverse(d4_apply(x,t),t) == x).
template <typename T>
Tensor<T> d4_apply_inverse(const Tensor<T>& x, const D4& t) {
  // Inverse of (hflip, vflip, R^k) is (R^(4-k), vflip, hflip); expressed in
  // apply()'s flip-then-rotate order the two factor groups swap cleanly:
  Tensor<T> y = d4_apply(x, D4{false, false, (4 - t.rot90 % 4) % 4});
  return d4_apply(y, D4{t.hflip, t.vflip, 0});
}

}  // namespace maxico
