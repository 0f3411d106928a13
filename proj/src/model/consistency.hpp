// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "core/autodiff.hpp"
#include "core/serialize.hpp"
#include "core/tensor.hpp"
#include "model/fusion.hpp"
#include "model/model_config.hpp"

namespace maxico {

// One consistency condition theta = [model, scale, time]. history == 0 tags
// the current iteration; k >= 1 is the k-th most recent buffered output.
enum class ModelAxis { fused_final, cnn_branch };

struct ConsistencyCondition {
  ModelAxis model = ModelAxis::fused_final;
  int scale = 1;    // 1 = full resolution
  int history = 0;  // 0 = current iteration, k >= 1 = historical
};

// A condition with its full-resolution soft output. Current-iteration
// contributors keep their graph handle (gradient path for the consistency
// loss); historical ones are detached values only.
template <typename T>
struct Contributor {
  ConsistencyCondition cond;
  ad::Var<T> output;  // defined iff cond.history == 0
  Tensor<T> probs;    // always usable (detached copy for historical entries)
};

// Ring buffer of per-sample detached soft labels from strictly earlier
// iterations, keyed by sample id. Single-writer (the trainer), refreshed
// each time a sample is visited.
template <typename T>
class TemporalBuffer {
 public:
  explicit TemporalBuffer(int depth = 1) : depth_(depth) {
    check_arg(depth >= 1, "temporal buffer depth must be >= 1");
  }

  void store(const std::string& id, Tensor<T> probs, int64_t iteration) {
    auto& ring = entries_[id];
    check(ring.empty() || ring.front().first <= iteration, ErrorCode::state,
          "temporal buffer iterations must be non-decreasing");
    ring.emplace_front(iteration, std::move(probs));
    while (static_cast<int>(ring.size()) > depth_) ring.pop_back();
  }

  // Entries for this sample, newest first; all must be strictly older than
  // the current iteration.
  std::vector<Tensor<T>> fetch(const std::string& id,
                               int64_t current_iteration) const {
    std::vector<Tensor<T>> out;
    auto it = entries_.find(id);
    if (it == entries_.end()) return out;
    for (const auto& [iter, probs] : it->second) {
      check(iter < current_iteration, ErrorCode::state,
            "temporal buffer entry is not strictly older than the current "
            "iteration");
      out.push_back(probs);
    }
    return out;
  }

  int depth() const { return depth_; }
  size_t num_samples() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void serialize(std::ostream& os) const {
    io::write_pod<int32_t>(os, depth_);
    io::write_pod<uint64_t>(os, entries_.size());
    for (const auto& [id, ring] : entries_) {
      io::write_string(os, id);
      io::write_pod<uint64_t>(os, ring.size());
      for (const auto& [iter, probs] : ring) {
        io::write_pod<int64_t>(os, iter);
        io::write_tensor(os, probs);
      }
    }
  }

  static TemporalBuffer deserialize(std::istream& is) {
    TemporalBuffer buf(io::read_pod<int32_t>(is));
    const auto n = io::read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
      const std::string id = io::read_string(is);
      const auto m = io::read_pod<uint64_t>(is);
      auto& ring = buf.entries_[id];
      for (uint64_t j = 0; j < m; ++j) {
        const auto iter = io::read_pod<int64_t>(is);
        ring.emplace_back(iter, io::read_tensor<T>(is));
      }
    }
    return buf;
  }

  bool operator==(const TemporalBuffer& o) const {
    if (depth_ != o.depth_ || entries_.size() != o.entries_.size())
      return false;
    for (const auto& [id, ring] : entries_) {
      auto it = o.entries_.find(id);
      if (it == o.entries_.end() || it->second.size() != ring.size())
        return false;
      for (size_t j = 0; j < ring.size(); ++j) {
        if (ring[j].first != it->second[j].first) return false;
        if (!bit_equal(ring[j].second, it->second[j].second)) return false;
      }
    }
    return true;
  }

 private:
  int depth_;
  std::map<std::string, std::deque<std::pair<int64_t, Tensor<T>>>> entries_;
};

// Bilinear upsample of a low-scale soft output to full resolution followed
// by per-pixel re-normalization.
template <typename T>
ad::Var<T> upsample_soft(ad::Var<T> q, int h, int w) {
  return ad::renorm_last(ad::resize_bilinear(q, h, w));
}

// Builds the condition set Theta for one unlabeled sample:
//   {P}                            always (anchor)
//   {Q_s upsampled, s = 2..N}      when intra_model
//   {R}                            when inter_model
//   {buffered historical labels}   when temporal
// Enabling an axis only ever adds conditions. `historical` holds the
// buffer's strictly-older soft labels (newest first) in the current step's
// augmentation frame.
template <typename T>
std::vector<Contributor<T>> enumerate_conditions(
    const AxisToggles& toggles, const PredictionBundle<T>& bundle,
    const std::vector<Tensor<T>>& historical) {
  check_arg(toggles.any(),
            "semi-supervised mode requires at least one consistency axis");
  const int h = bundle.p.val().dim(0), w = bundle.p.val().dim(1);
  std::vector<Contributor<T>> theta;
  theta.push_back(
      {{ModelAxis::fused_final, 1, 0}, bundle.p, bundle.p.val()});
  if (toggles.intra_model) {
    for (size_t s = 0; s < bundle.qs.size(); ++s) {
      auto up = upsample_soft(bundle.qs[s], h, w);
      theta.push_back({{ModelAxis::fused_final, static_cast<int>(s) + 2, 0},
                       up, up.val()});
    }
  }
  if (toggles.inter_model) {
    check_arg(bundle.r.defined(),
              "inter-model axis requires the CNN branch prediction");
    theta.push_back({{ModelAxis::cnn_branch, 1, 0}, bundle.r, bundle.r.val()});
  }
  if (toggles.temporal) {
    for (size_t k = 0; k < historical.size(); ++k) {
      check_arg(historical[k].same_shape(bundle.p.val()),
                "buffered soft label shape mismatch");
      theta.push_back({{ModelAxis::fused_final, 1, static_cast<int>(k) + 1},
                       ad::Var<T>{}, historical[k]});
    }
  }
  return theta;
}

// Per-entry thresholding: M(h,w,k) = 1 iff P(h,w,k) >= 0.5 (ties round up).
template <typename T>
Tensor<T> harden(const Tensor<T>& soft) {
  Tensor<T> hard(soft.shape());
  for (int64_t i = 0; i < soft.size(); ++i)
    hard[i] = soft[i] >= T(0.5) ? T(1) : T(0);
  return hard;
}

// Probabilistic pseudo-label: per-entry mean of the hard labels, so every
// value lies exactly on the n/|Theta| grid.
template <typename T>
Tensor<T> vote(const std::vector<Tensor<T>>& hard_labels) {
  check_arg(!hard_labels.empty(), "vote requires at least one hard label");
  Tensor<T> acc(hard_labels[0].shape());
  for (const auto& m : hard_labels) {
    check_arg(m.same_shape(acc), "vote: hard label shape mismatch");
    for (int64_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  // The accumulated counts are exact integers, so a direct division lands
  // every entry on the correctly-rounded n/|Theta| grid point.
  const T n = static_cast<T>(hard_labels.size());
  for (int64_t i = 0; i < acc.size(); ++i) acc[i] /= n;
  return acc;
}

// harden + vote over a condition set (historical entries included).
template <typename T>
Tensor<T> pseudo_label(const std::vector<Contributor<T>>& theta) {
  std::vector<Tensor<T>> hard;
  hard.reserve(theta.size());
  for (const auto& c : theta) hard.push_back(harden(c.probs));
  return vote(hard);
}

// Graph outputs of the current-iteration contributors (the consistency
// loss's gradient receivers; buffered entries never appear here).
template <typename T>
std::vector<ad::Var<T>> current_outputs(
    const std::vector<Contributor<T>>& theta) {
  std::vector<ad::Var<T>> out;
  for (const auto& c : theta)
    if (c.cond.history == 0) out.push_back(c.output);
  return out;
}

// Diagnostic L2 (Frobenius) distance between two soft outputs; logged, not
// optimized.
template <typename T>
double consistency_gap(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.same_shape(b), "consistency_gap: shape mismatch");
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace maxico
