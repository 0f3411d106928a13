// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "core/autodiff.hpp"
#include "core/error.hpp"
#include "core/tensor.hpp"
#include "model/fusion.hpp"
#include "model/model_config.hpp"

namespace maxico {

inline constexpr double kDiceSmooth = 1e-5;

// Class-id mask {H,W} -> per-pixel probability map {H,W,K}.
template <typename T>
Tensor<T> one_hot(const Tensor<int>& ids, int num_classes) {
  check_arg(ids.rank() == 2, "one_hot expects an {H,W} id mask");
  Tensor<T> out({ids.dim(0), ids.dim(1), num_classes});
  for (int64_t i = 0; i < ids.size(); ++i) {
    const int k = ids[i];
    check_arg(k >= 0 && k < num_classes,
              "class id " + std::to_string(k) + " out of range");
    out[i * num_classes + k] = T(1);
  }
  return out;
}

// Nearest-neighbour downsample of a class-id mask by an integer factor,
// sampling each destination cell at its source-centre pixel (hard labels
// stay hard).
inline Tensor<int> downsample_ids_nearest(const Tensor<int>& ids, int factor) {
  check_arg(ids.rank() == 2, "downsample expects an {H,W} id mask");
  check_arg(factor >= 1, "downsample factor must be >= 1");
  const int h = ids.dim(0), w = ids.dim(1);
  check_arg(h % factor == 0 && w % factor == 0,
            "mask dims must divide by the downsample factor");
  Tensor<int> out({h / factor, w / factor});
  for (int y = 0; y < h / factor; ++y)
    for (int x = 0; x < w / factor; ++x)
      out.at(y, x) = ids.at(y * factor + factor / 2, x * factor + factor / 2);
  return out;
}

// Combined segmentation loss: 0.5 * Dice loss + 0.5 * cross-entropy.
//   Dice loss = (1/K) * sum_k [1 - (2*sum_i p*t + eps) / (sum_i p + sum_i t + eps)]
//   CE        = (1/R) * sum_i sum_k -t * log(max(p, tiny))
// with R = pixel count. The target is a probability map of the prediction's
// shape; it may be soft (pseudo-labels) and is not required to be normalized
// (hardened labels can be multi-hot at ties). Gradients flow to the
// prediction only; targets are constants.
template <typename T>
ad::Var<T> dice_ce(ad::Var<T> pred, Tensor<T> target) {
  ad::Graph<T>& g = *pred.g;
  const Tensor<T>& p = pred.val();
  check_arg(p.rank() >= 2, "dice_ce expects {...,K} probabilities");
  check_arg(p.same_shape(target), "dice_ce: pred " + p.shape_str() +
                                      " vs target " + target.shape_str());
  const int k_classes = p.dim(p.rank() - 1);
  const int64_t rows = p.size() / k_classes;
  constexpr T tiny = std::numeric_limits<T>::min();

  std::vector<T> num(static_cast<size_t>(k_classes)),
      den(static_cast<size_t>(k_classes));
  for (int k = 0; k < k_classes; ++k) {
    T spt = T(0), sp = T(0), st = T(0);
    for (int64_t i = 0; i < rows; ++i) {
      const T pv = p[i * k_classes + k], tv = target[i * k_classes + k];
      spt += pv * tv;
      sp += pv;
      st += tv;
    }
    num[static_cast<size_t>(k)] = T(2) * spt + static_cast<T>(kDiceSmooth);
    den[static_cast<size_t>(k)] = sp + st + static_cast<T>(kDiceSmooth);
  }
  T dice_loss = T(0);
  for (int k = 0; k < k_classes; ++k)
    dice_loss += T(1) - num[static_cast<size_t>(k)] / den[static_cast<size_t>(k)];
  dice_loss /= static_cast<T>(k_classes);

  T ce = T(0);
  for (int64_t i = 0; i < rows; ++i) {
    T row_sum = T(0);
    for (int k = 0; k < k_classes; ++k) {
      const T pv = p[i * k_classes + k];
      row_sum += pv;
      const T tv = target[i * k_classes + k];
      if (tv != T(0)) ce -= tv * std::log(std::max(pv, tiny));
    }
    check_arg(std::abs(static_cast<double>(row_sum) - 1.0) <= 1e-4,
              "dice_ce: prediction row not normalized");
  }
  ce /= static_cast<T>(rows);

  Tensor<T> out({1});
  out[0] = T(0.5) * dice_loss + T(0.5) * ce;
  const bool req = pred.requires_grad();
  int self = g.add(std::move(out), req);
  if (req) {
    int pi = pred.idx;
    g.node(self).backward = [self, pi, k_classes, rows, num, den,
                             t = std::move(target)](ad::Graph<T>& gr) {
      const T gy = gr.node(self).grad[0];
      const Tensor<T>& pv = gr.value(pi);
      Tensor<T>& gp = gr.grad_buf(pi);
      const T inv_k = T(1) / static_cast<T>(k_classes);
      const T inv_r = T(1) / static_cast<T>(rows);
      for (int64_t i = 0; i < rows; ++i)
        for (int k = 0; k < k_classes; ++k) {
          const int64_t at = i * k_classes + k;
          const T nk = num[static_cast<size_t>(k)];
          const T dk = den[static_cast<size_t>(k)];
          T grad = T(0.5) * inv_k * (nk - T(2) * t[at] * dk) / (dk * dk);
          if (pv[at] > tiny) grad -= T(0.5) * inv_r * t[at] / pv[at];
          gp[at] += gy * grad;
        }
    };
  }
  return {&g, self};
}

template <typename T>
ad::Var<T> dice_ce(ad::Var<T> pred, const Tensor<int>& mask) {
  return dice_ce(pred, one_hot<T>(mask, pred.val().dim(pred.val().rank() - 1)));
}

// Multi-scale supervision:
//   L = a1*L(P,T) + a2*L(R,T) + a3*(1/|S|)*sum_s L(Q_s, T_s)
// where T_s is the mask nearest-downsampled to Q_s's grid. With ms_loss off
// only the a1 term remains (the deep-supervision terms are the "Loss" module
// of the ablation grid). The R term is skipped when the CNN branch is off;
// empty S contributes 0.
template <typename T>
ad::Var<T> multiscale_supervised_loss(const PredictionBundle<T>& bundle,
                                      const Tensor<int>& mask,
                                      const LossWeights& w, bool ms_loss) {
  w.validate();
  auto loss = ad::scale(dice_ce(bundle.p, mask), static_cast<T>(w.alpha1));
  if (!ms_loss) return loss;
  if (bundle.r.defined())
    loss = ad::add(loss,
                   ad::scale(dice_ce(bundle.r, mask), static_cast<T>(w.alpha2)));
  if (!bundle.qs.empty()) {
    const T mean_w =
        static_cast<T>(w.alpha3) / static_cast<T>(bundle.qs.size());
    ad::Var<T> qsum;
    for (size_t s = 0; s < bundle.qs.size(); ++s) {
      const int factor = mask.dim(0) / bundle.qs[s].val().dim(0);
      auto term = dice_ce(bundle.qs[s], downsample_ids_nearest(mask, factor));
      qsum = s == 0 ? term : ad::add(qsum, term);
    }
    loss = ad::add(loss, ad::scale(qsum, mean_w));
  }
  return loss;
}

// Consistency loss: mean dice_ce of every current-iteration contributor
// against the (constant) voted pseudo-label.
template <typename T>
ad::Var<T> unsupervised_loss(const std::vector<ad::Var<T>>& contributors,
                             const Tensor<T>& pseudo) {
  check_arg(!contributors.empty(),
            "unsupervised_loss requires at least one contributor");
  ad::Var<T> sum;
  for (size_t i = 0; i < contributors.size(); ++i) {
    auto term = dice_ce(contributors[i], pseudo);
    sum = i == 0 ? term : ad::add(sum, term);
  }
  return ad::scale(sum, T(1) / static_cast<T>(contributors.size()));
}

// Gaussian warm-up ramp: lambda_max * exp(-5 * (1 - min(t/T_w, 1))^2),
// constant at lambda_max once t reaches warmup_steps.
inline double lambda_schedule(int64_t t, const LossWeights& w) {
  w.validate();
  check_arg(t >= 0, "lambda_schedule requires t >= 0");
  const double frac =
      std::min(static_cast<double>(t) / static_cast<double>(w.warmup_steps), 1.0);
  return w.lambda_max * std::exp(-5.0 * (1.0 - frac) * (1.0 - frac));
}

// L_final = L_sup + lambda(t) * L_unsup; NaN in either term is a training
// halt signal.
template <typename T>
ad::Var<T> final_loss(ad::Var<T> l_sup, ad::Var<T> l_unsup, int64_t t,
                      const LossWeights& w) {
  check(!std::isnan(static_cast<double>(l_sup.val()[0])),
        ErrorCode::numeric, "supervised loss is NaN");
  check(!std::isnan(static_cast<double>(l_unsup.val()[0])),
        ErrorCode::numeric, "unsupervised loss is NaN");
  return ad::add(l_sup,
                 ad::scale(l_unsup, static_cast<T>(lambda_schedule(t, w))));
}

}  // namespace maxico
