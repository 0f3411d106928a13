// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "model/backbones.hpp"
#include "model/fusion.hpp"
#include "model/model_config.hpp"
#include "model/vl_align.hpp"

namespace maxico {

// Declares the frozen-by-config parameter groups on a fresh store so that
// lazily created parameters are born non-trainable.
template <typename T>
void configure_frozen(ParamStore<T>& store, const ModelConfig& cfg) {
  if (cfg.text_frozen) store.declare_frozen_prefix("text.");
  if (cfg.vit_frozen) store.declare_frozen_prefix("vit.");
}

namespace detail {

// Tokens {n,d} back onto their square spatial grid {side,side,d}.
template <typename T>
ad::Var<T> tokens_to_grid(ad::Var<T> x) {
  const int n = x.val().dim(0), d = x.val().dim(1);
  const int side =
      static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  check_arg(side * side == n,
            "token count " + std::to_string(n) + " is not a square grid");
  return ad::reshape(x, {side, side, d});
}

}  // namespace detail

// Full forward pass for one sample.
//
// The three architecture flags compose so that enabling one strictly adds
// computation on top of the previous configuration (shared parameters keep
// their names and shapes across configurations):
//   multi_scale_arch: all transformer taps drive an N-level pyramid with
//     auxiliary heads {Q_s}; off, only the deepest tap drives a single
//     full-resolution head.
//   text_enabled: the caption embedding is propagated per level and applied
//     as a dense channel modulation; off, the aligned visual map passes
//     through unchanged (captions are ignored and may be empty).
//   vit_cnn_fusion: a U-Net branch runs alongside, each level blends both
//     branches (NPF uses `beta`, PF ignores it), and the branch prediction R
//     is exposed; off, the transformer path alone feeds the heads and R is
//     left undefined.
//
// `beta` is the NPF blend for this step (training: sampled once per step by
// the caller; evaluation: FusionConfig::beta_infer).
template <typename T>
PredictionBundle<T> forward_network(Ctx<T>& ctx, const Tensor<T>& image,
                                    const std::vector<int>& caption_ids,
                                    const ModelConfig& cfg, double beta,
                                    const AlignOptions& opts = {}) {
  cfg.validate();
  cfg.fusion.validate();
  check_arg(image.rank() == 3 && image.dim(2) == 3,
            "image must be {H,W,3}, got " + image.shape_str());
  cfg.validate_image(image.dim(0), image.dim(1));
  for (int64_t i = 0; i < image.size(); ++i)
    check_arg(image[i] >= T(0) && image[i] <= T(1),
              "image pixels must lie in [0,1]");

  auto img = ad::constant(ctx.g, image);

  // Transformer taps, deepest-anchored: with L fused levels the level-j map
  // comes from tap (total - L + j), so every configuration includes the final
  // layer and the deepest tap's parameters are shared across ablations.
  auto taps_all = vit_encode(ctx, img, cfg);
  const int total_taps = static_cast<int>(taps_all.size());
  const int levels = cfg.multi_scale_arch ? cfg.n_levels : 1;
  check_arg(levels <= total_taps, "more pyramid levels than transformer taps");
  std::vector<ad::Var<T>> taps(static_cast<size_t>(levels));
  std::vector<int> tap_ids(static_cast<size_t>(levels));
  for (int j = 0; j < levels; ++j) {
    const int id = total_taps - levels + 1 + j;
    tap_ids[static_cast<size_t>(j)] = id;
    taps[static_cast<size_t>(j)] = taps_all[static_cast<size_t>(id - 1)];
  }

  // Skip-connected aggregation, then dense text modulation per level.
  auto xs = aggregate_visual(ctx, taps, tap_ids, cfg, opts);
  std::vector<ad::Var<T>> zs(static_cast<size_t>(levels));
  if (cfg.text_enabled) {
    auto y = text_encode(ctx, caption_ids, cfg);
    auto ys = propagate_text(ctx, y, tap_ids, cfg, opts);
    for (int j = 0; j < levels; ++j)
      zs[static_cast<size_t>(j)] = dense_align(xs[static_cast<size_t>(j)],
                                               ys[static_cast<size_t>(j)]);
  } else {
    for (int j = 0; j < levels; ++j)
      zs[static_cast<size_t>(j)] = detail::tokens_to_grid(xs[static_cast<size_t>(j)]);
  }

  // Project each aligned map to its level geometry; blend with the CNN
  // branch when fusion is on (levels past the cutoff pass the CNN through).
  std::vector<ad::Var<T>> fused(static_cast<size_t>(levels));
  ad::Var<T> r;
  if (cfg.vit_cnn_fusion) {
    auto pyr = cnn_forward(ctx, img, cfg);
    r = pyr.r;
    for (int j = 1; j <= levels; ++j) {
      auto fc = pyr.features[static_cast<size_t>(j - 1)];
      if (j > cfg.fusion.levels) {
        fused[static_cast<size_t>(j - 1)] = fc;
        continue;
      }
      auto fv = project_vit_to_scale(ctx, zs[static_cast<size_t>(j - 1)], j,
                                     fc.val().dim(0), fc.val().dim(1),
                                     fc.val().dim(2));
      fused[static_cast<size_t>(j - 1)] =
          cfg.fusion.mode == FusionMode::npf
              ? fuse_npf(fc, fv, static_cast<T>(beta))
              : fuse_pf(ctx, fc, fv, j);
    }
  } else {
    const int h = image.dim(0), w = image.dim(1);
    for (int j = 1; j <= levels; ++j)
      fused[static_cast<size_t>(j - 1)] = project_vit_to_scale(
          ctx, zs[static_cast<size_t>(j - 1)], j, h >> (j - 1), w >> (j - 1),
          cfg.channels[static_cast<size_t>(j - 1)]);
  }

  return decode(ctx, fused, r, cfg.num_classes);
}

}  // namespace maxico
