// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "model/backbones.hpp"
#include "model/model_config.hpp"

namespace maxico {

// Bilinear resize of the aligned map to a CNN level's grid followed by a
// learned 1x1 channel projection.
template <typename T>
ad::Var<T> project_vit_to_scale(Ctx<T>& ctx, ad::Var<T> z, int level,
                                int target_h, int target_w, int target_c) {
  check_arg(z.val().rank() == 3, "project_vit_to_scale expects {h,w,d}");
  const int d = z.val().dim(2);
  auto r = ad::resize_bilinear(z, target_h, target_w);
  return conv1(ctx, r, d, target_c, "fusion.proj" + std::to_string(level));
}

// One blend weight per training step, shared across levels.
inline double sample_beta(const FusionConfig& cfg, Rng& rng) {
  check_arg(cfg.mode == FusionMode::npf,
            "sample_beta is only defined for NPF mode");
  cfg.validate();
  return rng.uniform(cfg.r1, cfg.r2);
}

// Non-parametric fusion: F = beta*F_cnn + (1-beta)*F_vit. The endpoints
// beta=1 and beta=0 reproduce the inputs bit-exactly.
template <typename T>
ad::Var<T> fuse_npf(ad::Var<T> f_cnn, ad::Var<T> f_vit, T beta) {
  check_arg(beta >= T(0) && beta <= T(1), "beta must lie in [0,1]");
  check_arg(f_cnn.val().same_shape(f_vit.val()),
            "fuse_npf shape mismatch: " + f_cnn.val().shape_str() + " vs " +
                f_vit.val().shape_str());
  return ad::add(ad::scale(f_cnn, beta), ad::scale(f_vit, T(1) - beta));
}

// Parametric fusion: channel attention over the layer-normed concatenation.
//   X = LayerNorm([F_cnn, F_vit]);  Q,K,V = 1x1 convs of X
//   A = colsoftmax(K^T Q / alpha);  out = W(V A), W: 2C -> C.
// alpha is a learnable per-level scalar initialised to sqrt(H*W) so the
// channel-correlation logits start at O(1).
template <typename T>
ad::Var<T> fuse_pf(Ctx<T>& ctx, ad::Var<T> f_cnn, ad::Var<T> f_vit,
                   int level) {
  check_arg(f_cnn.val().same_shape(f_vit.val()),
            "fuse_pf shape mismatch: " + f_cnn.val().shape_str() + " vs " +
                f_vit.val().shape_str());
  const int h = f_cnn.val().dim(0), w = f_cnn.val().dim(1);
  const int c = f_cnn.val().dim(2), c2 = 2 * c;
  const int npix = h * w;
  const std::string p = "fusion.pf" + std::to_string(level);
  auto x = ad::layer_norm(
      ad::concat_last(f_cnn, f_vit),
      ctx.param(p + ".ln.gamma", {c2}, Init::ones()),
      ctx.param(p + ".ln.beta", {c2}, Init::zeros()));
  auto q = ad::reshape(conv1(ctx, x, c2, c2, p + ".q"), {npix, c2});
  auto k = ad::reshape(conv1(ctx, x, c2, c2, p + ".k"), {npix, c2});
  auto v = ad::reshape(conv1(ctx, x, c2, c2, p + ".v"), {npix, c2});
  auto alpha = ctx.param(p + ".alpha", {1},
                         Init::constant(std::sqrt(static_cast<double>(npix))));
  // Rows of sm are the columns of the column-normalised attention matrix
  // softmax_cols(K^T Q / alpha), so V * sm^T applies it without a transpose op.
  auto logits = ad::mul_scalar_var(ad::matmul(q, k, true, false),
                                   ad::reciprocal(alpha));
  auto sm = ad::softmax_last(logits);
  auto out = ad::reshape(ad::matmul(v, sm, false, true), {h, w, c2});
  return conv1(ctx, out, c2, c, p + ".w");
}

// Per-scale prediction heads over the fused pyramid: the level-1 head emits
// the final P, deeper heads emit the multi-scale set {Q_s}; R rides along
// from the CNN branch when present.
template <typename T>
struct PredictionBundle {
  ad::Var<T> p;                // {H,W,K}
  std::vector<ad::Var<T>> qs;  // levels 2..N, each {H_j,W_j,K}
  ad::Var<T> r;                // {H,W,K}; undefined when the CNN branch is off
};

template <typename T>
PredictionBundle<T> decode(Ctx<T>& ctx, const std::vector<ad::Var<T>>& fused,
                           ad::Var<T> r, int num_classes) {
  check_arg(!fused.empty(), "decode requires at least one fused level");
  PredictionBundle<T> out;
  for (size_t j = 0; j < fused.size(); ++j) {
    const int cj = fused[j].val().dim(2);
    auto head = ad::softmax_last(conv3(ctx, fused[j], cj, num_classes,
                                       "head.scale" + std::to_string(j + 1)));
    if (j == 0)
      out.p = head;
    else
      out.qs.push_back(head);
  }
  out.r = r;
  return out;
}

}  // namespace maxico
