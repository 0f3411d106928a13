// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace maxico {

// Dense row-major tensor. Spatial feature maps use {H, W, C} (channels
// last), token matrices {n, d}, vectors {d}, scalars {1}.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_arg(static_cast<int64_t>(data_.size()) == numel(shape_),
              "tensor data size does not match shape " + shape_str());
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      check_arg(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D and 3-D accessors (row-major).
  T& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  const T& at(int i, int j) const {
    return data_[static_cast<size_t>(i) * dim(1) + j];
  }
  T& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  const T& at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    check_arg(numel(shape) == size(),
              "reshape to incompatible size " + shape_string(shape) +
                  " from " + shape_str());
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
  }
  std::string shape_str() const { return shape_string(shape_); }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace maxico
