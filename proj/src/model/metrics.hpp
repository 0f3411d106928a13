// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace maxico {

// Argmax over the class axis of an {H,W,K} probability map; ties resolve to
// the lowest class id.
template <typename T>
Tensor<int> argmax_classes(const Tensor<T>& probs) {
  check_arg(probs.rank() == 3, "argmax_classes expects {H,W,K}");
  const int k_classes = probs.dim(2);
  Tensor<int> out({probs.dim(0), probs.dim(1)});
  for (int64_t i = 0; i < out.size(); ++i) {
    int best = 0;
    T best_v = probs[i * k_classes];
    for (int k = 1; k < k_classes; ++k) {
      const T v = probs[i * k_classes + k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    out[i] = best;
  }
  return out;
}

namespace detail {

struct ClassCounts {
  int64_t inter = 0, pred = 0, target = 0;
};

inline ClassCounts class_counts(const Tensor<int>& pred,
                                const Tensor<int>& target, int k) {
  ClassCounts c;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == k, t = target[i] == k;
    c.inter += p && t;
    c.pred += p;
    c.target += t;
  }
  return c;
}

}  // namespace detail

// Mean over foreground classes (1..K-1) of 2|P∩T| / (|P|+|T|); a class
// empty in both maps scores 1.0.
inline double dice_score(const Tensor<int>& pred, const Tensor<int>& target,
                         int num_classes) {
  check_arg(pred.same_shape(target), "dice_score: shape mismatch");
  check_arg(num_classes >= 2, "dice_score requires K >= 2");
  double sum = 0;
  for (int k = 1; k < num_classes; ++k) {
    const auto c = detail::class_counts(pred, target, k);
    sum += (c.pred + c.target) == 0
               ? 1.0
               : 2.0 * static_cast<double>(c.inter) /
                     static_cast<double>(c.pred + c.target);
  }
  return sum / (num_classes - 1);
}

// Mean over foreground classes of |P∩T| / |P∪T|; empty-empty scores 1.0.
inline double miou_score(const Tensor<int>& pred, const Tensor<int>& target,
                         int num_classes) {
  check_arg(pred.same_shape(target), "miou_score: shape mismatch");
  check_arg(num_classes >= 2, "miou_score requires K >= 2");
  double sum = 0;
  for (int k = 1; k < num_classes; ++k) {
    const auto c = detail::class_counts(pred, target, k);
    const int64_t uni = c.pred + c.target - c.inter;
    sum += uni == 0 ? 1.0
                    : static_cast<double>(c.inter) / static_cast<double>(uni);
  }
  return sum / (num_classes - 1);
}

struct SampleScore {
  std::string id;
  double dice = 0, miou = 0;
};

struct EvalReport {
  double dice_percent = 0, miou_percent = 0;
  std::vector<SampleScore> per_sample;
  uint64_t config_fingerprint = 0;
  uint64_t seed = 0;
};

}  // namespace maxico
