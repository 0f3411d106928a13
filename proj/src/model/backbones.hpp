// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "model/model_config.hpp"
#include "model/vocab.hpp"

namespace maxico {

// ---------------------------------------------------------------------------
// Shared transformer building blocks (token matrices {n, d})
// ---------------------------------------------------------------------------

template <typename T>
ad::Var<T> multi_head_attention(Ctx<T>& ctx, ad::Var<T> x, int heads,
                                const std::string& p) {
  const int d = x.val().dim(1);
  auto q = ad::linear(x, ctx.param(p + ".wq", {d, d}, Init::glorot(d, d)),
                      ctx.param(p + ".bq", {d}, Init::zeros()));
  auto k = ad::linear(x, ctx.param(p + ".wk", {d, d}, Init::glorot(d, d)),
                      ctx.param(p + ".bk", {d}, Init::zeros()));
  auto v = ad::linear(x, ctx.param(p + ".wv", {d, d}, Init::glorot(d, d)),
                      ctx.param(p + ".bv", {d}, Init::zeros()));
  auto qh = ad::split_last(q, heads);
  auto kh = ad::split_last(k, heads);
  auto vh = ad::split_last(v, heads);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(d / heads));
  ad::Var<T> merged;
  for (int h = 0; h < heads; ++h) {
    auto scores = ad::scale(ad::matmul(qh[h], kh[h], false, true), inv_sqrt_dh);
    auto out = ad::matmul(ad::softmax_last(scores), vh[h]);
    merged = h == 0 ? out : ad::concat_last(merged, out);
  }
  return ad::linear(merged,
                    ctx.param(p + ".wo", {d, d}, Init::glorot(d, d)),
                    ctx.param(p + ".bo", {d}, Init::zeros()));
}

// One standard pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
template <typename T>
ad::Var<T> transformer_block(Ctx<T>& ctx, ad::Var<T> x, int heads,
                             const std::string& p) {
  const int d = x.val().dim(1);
  const int hidden = 4 * d;
  auto h1 = ad::layer_norm(x, ctx.param(p + ".ln1.gamma", {d}, Init::ones()),
                           ctx.param(p + ".ln1.beta", {d}, Init::zeros()));
  x = ad::add(x, multi_head_attention(ctx, h1, heads, p + ".attn"));
  auto h2 = ad::layer_norm(x, ctx.param(p + ".ln2.gamma", {d}, Init::ones()),
                           ctx.param(p + ".ln2.beta", {d}, Init::zeros()));
  auto m = ad::linear(
      h2, ctx.param(p + ".mlp.w1", {d, hidden}, Init::glorot(d, hidden)),
      ctx.param(p + ".mlp.b1", {hidden}, Init::zeros()));
  m = ad::linear(
      ad::gelu(m),
      ctx.param(p + ".mlp.w2", {hidden, d}, Init::glorot(hidden, d)),
      ctx.param(p + ".mlp.b2", {d}, Init::zeros()));
  return ad::add(x, m);
}

// Convolution helpers ({H,W,C} maps). Glorot fans use the k*k*C convention.
template <typename T>
ad::Var<T> conv3(Ctx<T>& ctx, ad::Var<T> x, int cin, int cout,
                 const std::string& p) {
  auto w = ctx.param(p + ".w", {3, 3, cin, cout}, Init::glorot(9 * cin, 9 * cout));
  auto b = ctx.param(p + ".b", {cout}, Init::zeros());
  return ad::conv2d(x, w, b, 1, 1);
}

template <typename T>
ad::Var<T> conv1(Ctx<T>& ctx, ad::Var<T> x, int cin, int cout,
                 const std::string& p) {
  auto w = ctx.param(p + ".w", {1, 1, cin, cout}, Init::glorot(cin, cout));
  auto b = ctx.param(p + ".b", {cout}, Init::zeros());
  return ad::conv2d(x, w, b, 1, 0);
}

// ---------------------------------------------------------------------------
// Toy ViT: patch embed + learned positional embedding + 12 pre-norm blocks,
// features tapped after layers 3, 6, 9, 12.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<ad::Var<T>> vit_encode(Ctx<T>& ctx, ad::Var<T> image,
                                   const ModelConfig& cfg) {
  const int h = image.val().dim(0), w = image.val().dim(1);
  cfg.validate_image(h, w);
  auto pw = ctx.param(
      "vit.patch.w", {cfg.patch, cfg.patch, 3, cfg.d_vit},
      Init::glorot(cfg.patch * cfg.patch * 3, cfg.d_vit));
  auto pb = ctx.param("vit.patch.b", {cfg.d_vit}, Init::zeros());
  auto tok3 = ad::conv2d(image, pw, pb, cfg.patch, 0);
  const int n = tok3.val().dim(0) * tok3.val().dim(1);
  auto x = ad::reshape(tok3, {n, cfg.d_vit});
  x = ad::add(x, ctx.param("vit.pos", {n, cfg.d_vit}, Init::normal(0.02)));
  std::vector<ad::Var<T>> taps;
  for (int layer = 1; layer <= cfg.vit_layers; ++layer) {
    x = transformer_block(ctx, x, cfg.vit_heads,
                          "vit.block" + std::to_string(layer));
    if (layer % 3 == 0) taps.push_back(x);  // layers 3, 6, 9, 12
  }
  return taps;
}

// ---------------------------------------------------------------------------
// Toy text encoder: seeded embedding table + mean pooling + projection.
// Frozen by default (configured via ParamStore frozen prefixes).
// ---------------------------------------------------------------------------

template <typename T>
ad::Var<T> text_encode(Ctx<T>& ctx, const std::vector<int>& token_ids,
                       const ModelConfig& cfg) {
  check_arg(!token_ids.empty(), "text_encode requires a non-empty caption");
  const int vocab = static_cast<int>(caption_vocabulary().size());
  auto table = ctx.param("text.embed", {vocab, cfg.text_embed_dim},
                         Init::normal(1.0));
  auto pooled = ad::mean_rows(ad::embedding(ctx.g, token_ids, table));
  auto proj = ctx.param("text.proj", {cfg.text_embed_dim, cfg.d_text},
                        Init::glorot(cfg.text_embed_dim, cfg.d_text));
  auto y = ad::matmul(ad::reshape(pooled, {1, cfg.text_embed_dim}), proj);
  return ad::reshape(y, {cfg.d_text});
}

// ---------------------------------------------------------------------------
// U-Net CNN branch. Returns decoder-side features at every level (level 1 =
// full resolution) plus the branch prediction R (softmax over classes).
// ---------------------------------------------------------------------------

template <typename T>
struct CnnPyramid {
  std::vector<ad::Var<T>> features;  // features[j-1] is level j, {H_j,W_j,C_j}
  ad::Var<T> r;                      // {H,W,K}
};

template <typename T>
CnnPyramid<T> cnn_forward(Ctx<T>& ctx, ad::Var<T> image,
                          const ModelConfig& cfg) {
  const int n = cfg.n_levels;
  cfg.validate_image(image.val().dim(0), image.val().dim(1));
  std::vector<ad::Var<T>> enc;
  ad::Var<T> x = image;
  for (int j = 1; j <= n; ++j) {
    const int cin = j == 1 ? 3 : cfg.channels[static_cast<size_t>(j - 2)];
    const int cout = cfg.channels[static_cast<size_t>(j - 1)];
    const std::string p = "cnn.enc" + std::to_string(j);
    x = ad::relu(conv3(ctx, x, cin, cout, p + ".conv1"));
    x = ad::relu(conv3(ctx, x, cout, cout, p + ".conv2"));
    enc.push_back(x);
    if (j < n) x = ad::maxpool2(x);
  }
  std::vector<ad::Var<T>> feats(static_cast<size_t>(n));
  feats[static_cast<size_t>(n - 1)] = enc[static_cast<size_t>(n - 1)];
  ad::Var<T> deep = enc[static_cast<size_t>(n - 1)];
  for (int j = n - 1; j >= 1; --j) {
    const int cj = cfg.channels[static_cast<size_t>(j - 1)];
    const int cdeep = cfg.channels[static_cast<size_t>(j)];
    const auto& skip = enc[static_cast<size_t>(j - 1)];
    const std::string p = "cnn.dec" + std::to_string(j);
    auto up = ad::resize_bilinear(deep, skip.val().dim(0), skip.val().dim(1));
    up = conv1(ctx, up, cdeep, cj, p + ".reduce");
    deep = ad::relu(conv3(ctx, ad::concat_last(skip, up), 2 * cj, cj, p + ".conv"));
    feats[static_cast<size_t>(j - 1)] = deep;
  }
  const int c1 = cfg.channels[0];
  auto r = ad::softmax_last(
      conv3(ctx, feats[0], c1, cfg.num_classes, "cnn.head"));
  return {std::move(feats), r};
}

}  // namespace maxico
