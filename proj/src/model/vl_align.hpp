// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "model/backbones.hpp"
#include "model/model_config.hpp"

namespace maxico {

// Test hook: when set, the learned maps (tap projections, transformer
// layers, text MLPs) are bypassed so the aggregation/propagation algebra
// can be checked in isolation. Requires d_vit == d_align == d_text.
struct AlignOptions {
  bool identity_hook = false;
};

// Skip-connected aggregation of ViT taps, deepest first:
//   X_l = Trans_l(W_l x_l);  X_i = Trans_i(W_i x_i + X_{i+1}) for i < l.
// tap_ids names each tap's parameter index so that configurations using a
// subset of taps (deepest-only mode) share the deep tap's parameters.
template <typename T>
std::vector<ad::Var<T>> aggregate_visual(Ctx<T>& ctx,
                                         const std::vector<ad::Var<T>>& taps,
                                         const std::vector<int>& tap_ids,
                                         const ModelConfig& cfg,
                                         const AlignOptions& opts = {}) {
  const int l = static_cast<int>(taps.size());
  check_arg(l >= 1, "aggregate_visual requires at least one tap");
  check_arg(static_cast<int>(tap_ids.size()) == l,
            "tap_ids must match tap count");
  std::vector<ad::Var<T>> xs(static_cast<size_t>(l));
  for (int i = l; i >= 1; --i) {
    const std::string id = std::to_string(tap_ids[static_cast<size_t>(i - 1)]);
    ad::Var<T> t = taps[static_cast<size_t>(i - 1)];
    if (!opts.identity_hook) {
      auto wx = ctx.param("align.wx" + id, {cfg.d_vit, cfg.d_align},
                          Init::glorot(cfg.d_vit, cfg.d_align));
      t = ad::matmul(t, wx);
    }
    if (i < l) t = ad::add(t, xs[static_cast<size_t>(i)]);
    xs[static_cast<size_t>(i - 1)] =
        opts.identity_hook
            ? t
            : transformer_block(ctx, t, cfg.vit_heads, "align.trans" + id);
  }
  return xs;
}

namespace detail {

// 2-layer MLP with GELU on a vector {din} -> {dout}.
template <typename T>
ad::Var<T> text_mlp(Ctx<T>& ctx, ad::Var<T> y, int din, int dout,
                    const std::string& p) {
  auto row = ad::reshape(y, {1, din});
  auto h = ad::linear(row, ctx.param(p + ".w1", {din, dout}, Init::glorot(din, dout)),
                      ctx.param(p + ".b1", {dout}, Init::zeros()));
  h = ad::linear(ad::gelu(h),
                 ctx.param(p + ".w2", {dout, dout}, Init::glorot(dout, dout)),
                 ctx.param(p + ".b2", {dout}, Init::zeros()));
  return ad::reshape(h, {dout});
}

}  // namespace detail

// MLP propagation of the text embedding down the tap chain:
//   Y_l = MLP_l(y);  Y_i = MLP_i(Y_{i+1}) for i < l.
template <typename T>
std::vector<ad::Var<T>> propagate_text(Ctx<T>& ctx, ad::Var<T> y,
                                       const std::vector<int>& tap_ids,
                                       const ModelConfig& cfg,
                                       const AlignOptions& opts = {}) {
  const int l = static_cast<int>(tap_ids.size());
  check_arg(l >= 1, "propagate_text requires at least one tap");
  std::vector<ad::Var<T>> ys(static_cast<size_t>(l));
  ad::Var<T> cur = y;
  for (int i = l; i >= 1; --i) {
    if (!opts.identity_hook) {
      const int din = (i == l) ? cfg.d_text : cfg.d_align;
      const std::string id =
          std::to_string(tap_ids[static_cast<size_t>(i - 1)]);
      cur = detail::text_mlp(ctx, cur, din, cfg.d_align, "align.mlp" + id);
    }
    ys[static_cast<size_t>(i - 1)] = cur;
  }
  return ys;
}

// Dense alignment: reshape tokens to their spatial grid and multiply every
// position by the text channel vector (fixed reshape/broadcast, no params).
template <typename T>
ad::Var<T> dense_align(ad::Var<T> x, ad::Var<T> y) {
  check_arg(x.val().rank() == 2, "dense_align expects token matrix {n,d}");
  check_arg(y.val().rank() == 1, "dense_align expects text vector {d}");
  const int n = x.val().dim(0), d = x.val().dim(1);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  check_arg(side * side == n,
            "token count " + std::to_string(n) + " is not a square grid");
  return ad::mul_rowvec(ad::reshape(x, {side, side, d}), y);
}

}  // namespace maxico
