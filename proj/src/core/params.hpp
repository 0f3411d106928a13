// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace maxico {

// Parameter initialiser description. Every parameter is initialised from its
// own RNG stream keyed by (init_seed, parameter name), so the values a module
// gets never depend on which other modules exist or the order they build in.
struct Init {
  enum class Kind { zeros, ones, glorot, normal, uniform };
  Kind kind = Kind::zeros;
  double a = 0.0, b = 0.0;

  static Init zeros() { return {Kind::zeros, 0, 0}; }
  static Init ones() { return {Kind::ones, 0, 0}; }
  static Init glorot(int fan_in, int fan_out) {
    return {Kind::glorot, static_cast<double>(fan_in),
            static_cast<double>(fan_out)};
  }
  static Init normal(double stddev) { return {Kind::normal, stddev, 0}; }
  static Init uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static Init constant(double v) { return {Kind::uniform, v, v}; }
};

template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  explicit ParamStore(uint64_t init_seed) : init_seed_(init_seed) {}

  // Returns the parameter, creating and initialising it on first use.
  Entry& fetch(const std::string& name, const std::vector<int>& shape,
               const Init& init) {
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      check_arg(it->second.value.shape() == shape,
                "parameter '" + name + "' refetched with different shape");
      return it->second;
    }
    Tensor<T> t(shape);
    Rng rng(mix_seed(init_seed_, name));
    switch (init.kind) {
      case Init::Kind::zeros:
        break;
      case Init::Kind::ones:
        for (int64_t i = 0; i < t.size(); ++i) t[i] = T(1);
        break;
      case Init::Kind::glorot: {
        const double lim = std::sqrt(6.0 / (init.a + init.b));
        for (int64_t i = 0; i < t.size(); ++i)
          t[i] = static_cast<T>(rng.uniform(-lim, lim));
        break;
      }
      case Init::Kind::normal:
        for (int64_t i = 0; i < t.size(); ++i)
          t[i] = static_cast<T>(rng.normal() * init.a);
        break;
      case Init::Kind::uniform:
        for (int64_t i = 0; i < t.size(); ++i)
          t[i] = static_cast<T>(rng.uniform(init.a, init.b));
        break;
    }
    bool trainable = true;
    for (const auto& pre : frozen_prefixes_)
      if (name.rfind(pre, 0) == 0) trainable = false;
    auto [pos, _] = entries_.emplace(name, Entry{std::move(t), trainable});
    return pos->second;
  }

  // Parameters whose names start with a declared prefix are created frozen.
  void declare_frozen_prefix(const std::string& prefix) {
    frozen_prefixes_.push_back(prefix);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    check_arg(it != entries_.end(), "unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    check_arg(it != entries_.end(), "unknown parameter '" + name + "'");
    return it->second;
  }

  void freeze_prefix(const std::string& prefix) {
    for (auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) e.trainable = false;
  }

  // Ordered (std::map) so that iteration order is stable across runs.
  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  uint64_t init_seed() const { return init_seed_; }

 private:
  uint64_t init_seed_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> frozen_prefixes_;
};

// Binds a ParamStore into one sample's graph. Modules call ctx.param(...)
// to get leaf nodes; after backward() the trainer drains per-name gradients
// in name order via accumulate_grads.
template <typename T>
struct Ctx {
  ad::Graph<T>& g;
  ParamStore<T>& store;
  bool training = true;

  std::map<std::string, int> bound = {};

  ad::Var<T> param(const std::string& name, const std::vector<int>& shape,
                   const Init& init) {
    auto it = bound.find(name);
    if (it != bound.end()) return {&g, it->second};
    auto& entry = store.fetch(name, shape, init);
    ad::Var<T> v = ad::leaf(g, entry.value, training && entry.trainable);
    bound.emplace(name, v.idx);
    return v;
  }

  // Adds this graph's parameter gradients into `acc` (created zeroed on
  // first touch). Deterministic: bound is name-ordered.
  void accumulate_grads(std::map<std::string, Tensor<T>>& acc) const {
    for (const auto& [name, idx] : bound) {
      const auto& node = g.node(idx);
      if (!node.requires_grad || node.grad.empty()) continue;
      auto it = acc.find(name);
      if (it == acc.end())
        it = acc.emplace(name, Tensor<T>(node.value.shape())).first;
      for (int64_t i = 0; i < node.grad.size(); ++i)
        it->second[i] += node.grad[i];
    }
  }
};

}  // namespace maxico
