// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

#include "timbre/common.hpp"

namespace timbre {

// Dense row-major tensor, rank <= 4. Value semantics; the autodiff tape and
// parameter store both traffic in these.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(size_t(numel()), T(0));
  }
  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(int64_t(data_.size()) == numel());
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const {
    int64_t n = 1;
    for (auto d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
  }
  int rank() const { return int(shape_.size()); }
  int64_t dim(int i) const { return shape_[size_t(i)]; }
  const std::vector<int64_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[size_t(i)]; }
  const T& operator[](int64_t i) const { return data_[size_t(i)]; }

  T& at(int64_t i, int64_t j) { return data_[size_t(i * shape_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data_[size_t(i * shape_[1] + j)]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return data_[size_t((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data_[size_t((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[size_t(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[size_t(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<int64_t> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    assert(t.numel() == numel());
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t = Tensor<U>(shape_);
    for (int64_t i = 0; i < numel(); ++i) t[i] = U(data_[size_t(i)]);
    return t;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EMat<T>>;

// View a contiguous block of a tensor as a rows x cols row-major matrix.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int64_t rows, int64_t cols, int64_t offset = 0) {
  return MatMap<T>(t.data() + offset, rows, cols);
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int64_t rows, int64_t cols, int64_t offset = 0) {
  return ConstMatMap<T>(t.data() + offset, rows, cols);
}

}  // namespace timbre
