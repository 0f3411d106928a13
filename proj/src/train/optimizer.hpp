// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "core/tensor.hpp"

namespace maxico {

// Cosine-annealing schedule over total_steps, optionally split into several
// identical cycles (warm restarts).
inline double cosine_lr(double base_lr, int64_t step, int64_t total_steps,
                        int cycles = 1) {
  check_arg(total_steps >= 1 && cycles >= 1 && cycles <= total_steps,
            "invalid cosine schedule parameters");
  const int64_t cycle_len = (total_steps + cycles - 1) / cycles;
  const double frac =
      static_cast<double>(step % cycle_len) / static_cast<double>(cycle_len);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * frac));
}

// Adam with bias correction and global-norm gradient clipping.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update; returns the pre-clip global gradient norm.
  double step(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
              double lr, double clip_norm) {
    double sq = 0;
    for (const auto& [_, g] : grads)
      for (int64_t i = 0; i < g.size(); ++i)
        sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    const double norm = std::sqrt(sq);
    const double clip =
        (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      auto& entry = store.at(name);
      check(entry.trainable, ErrorCode::state,
            "gradient for frozen parameter '" + name + "'");
      auto& m = fetch_state(m_, name, g);
      auto& v = fetch_state(v_, name, g);
      for (int64_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        const double mi =
            beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
        const double vi =
            beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        entry.value[i] -= static_cast<T>(lr * (mi / bc1) /
                                         (std::sqrt(vi / bc2) + eps_));
      }
    }
    return norm;
  }

  int64_t updates() const { return t_; }

  void serialize(std::ostream& os) const {
    io::write_pod<int64_t>(os, t_);
    write_map(os, m_);
    write_map(os, v_);
  }
  void deserialize(std::istream& is) {
    t_ = io::read_pod<int64_t>(is);
    m_ = read_map(is);
    v_ = read_map(is);
  }

  bool state_equal(const Adam& o) const {
    if (t_ != o.t_ || m_.size() != o.m_.size() || v_.size() != o.v_.size())
      return false;
    for (const auto& [n, t] : m_) {
      auto it = o.m_.find(n);
      if (it == o.m_.end() || !bit_equal(t, it->second)) return false;
    }
    for (const auto& [n, t] : v_) {
      auto it = o.v_.find(n);
      if (it == o.v_.end() || !bit_equal(t, it->second)) return false;
    }
    return true;
  }

 private:
  static Tensor<T>& fetch_state(std::map<std::string, Tensor<T>>& m,
                                const std::string& name, const Tensor<T>& g) {
    auto it = m.find(name);
    if (it == m.end()) it = m.emplace(name, Tensor<T>(g.shape())).first;
    check_arg(it->second.same_shape(g), "optimizer state shape mismatch");
    return it->second;
  }

  static void write_map(std::ostream& os,
                        const std::map<std::string, Tensor<T>>& m) {
    io::write_pod<uint64_t>(os, m.size());
    for (const auto& [name, t] : m) {
      io::write_string(os, name);
      io::write_tensor(os, t);
    }
  }
  static std::map<std::string, Tensor<T>> read_map(std::istream& is) {
    std::map<std::string, Tensor<T>> m;
    const auto n = io::read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
      std::string name = io::read_string(is);
      m.emplace(std::move(name), io::read_tensor<T>(is));
    }
    return m;
  }

  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

// Epoch sampler: seeded shuffle, reshuffled when exhausted. Serializable so
// resumed runs continue the exact same visit order.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(int n, Rng rng) : n_(n), rng_(rng) {
    check_arg(n >= 1, "sampler needs a non-empty dataset");
  }

  std::vector<int> next(int batch) {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      if (pos_ >= order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  int size() const { return n_; }

  void serialize(std::ostream& os) const {
    io::write_pod<int32_t>(os, n_);
    io::write_pod<uint64_t>(os, pos_);
    io::write_pod<uint64_t>(os, order_.size());
    for (int v : order_) io::write_pod<int32_t>(os, v);
    io::write_string(os, rng_.serialize());
  }
  void deserialize(std::istream& is) {
    n_ = io::read_pod<int32_t>(is);
    pos_ = io::read_pod<uint64_t>(is);
    order_.resize(io::read_pod<uint64_t>(is));
    for (auto& v : order_) v = io::read_pod<int32_t>(is);
    rng_.deserialize(io::read_string(is));
  }

 private:
  void reshuffle() {
    order_.resize(static_cast<size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
    pos_ = 0;
  }

  int n_ = 0;
  size_t pos_ = 0;
  std::vector<int> order_;
  Rng rng_;
};

}  // namespace maxico
