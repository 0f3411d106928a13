// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "data/dataset.hpp"
#include "model/metrics.hpp"
#include "model/network.hpp"
#include "model/vocab.hpp"

namespace maxico {

// Deterministic evaluation: no augmentation, fixed blend beta_infer, argmax
// hardening of the final prediction. Consumes no RNG.
template <typename T>
EvalReport evaluate(ParamStore<T>& store, const ModelConfig& model,
                    const Dataset& ds, uint64_t seed, uint64_t fingerprint) {
  check_arg(!ds.empty(), "evaluate requires a non-empty dataset");
  EvalReport report;
  report.seed = seed;
  report.config_fingerprint = fingerprint;
  double dice_sum = 0, miou_sum = 0;
  for (const auto& s : ds) {
    check_arg(s.has_mask, "evaluate: sample '" + s.id + "' has no mask");
    ad::Graph<T> g;
    Ctx<T> ctx{g, store, /*training=*/false};
    auto bundle =
        forward_network(ctx, s.image.template cast<T>(),
                        tokenize_caption(s.caption), model,
                        model.fusion.beta_infer);
    const Tensor<int> pred = argmax_classes(bundle.p.val());
    SampleScore score;
    score.id = s.id;
    score.dice = dice_score(pred, s.mask, model.num_classes);
    score.miou = miou_score(pred, s.mask, model.num_classes);
    dice_sum += score.dice;
    miou_sum += score.miou;
    report.per_sample.push_back(std::move(score));
  }
  report.dice_percent = 100.0 * dice_sum / static_cast<double>(ds.size());
  report.miou_percent = 100.0 * miou_sum / static_cast<double>(ds.size());
  return report;
}

}  // namespace maxico
