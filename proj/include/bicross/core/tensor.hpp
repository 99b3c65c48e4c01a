#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bicross/core/error.hpp"

namespace bicross {

// Dense row-major array of doubles. Feature maps are {C, H, W}, dense 2-D
// maps are {H, W}, matrices {rows, cols}, vectors {n}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw InvalidInput("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 3-D access for {C, H, W} tensors.
  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) {
      throw InvalidInput("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  // this += s * o
  void axpy(double s, const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw InvalidInput("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }

 private:
  void check_same(const Tensor& o) const {
    if (shape_ != o.shape_) {
      throw InvalidInput("shape mismatch " + shape_string(shape_) + " vs " + shape_string(o.shape_));
    }
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

using Mask = std::vector<unsigned char>;

}  // namespace bicross
