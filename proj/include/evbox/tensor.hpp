#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "evbox/common.hpp"

namespace evbox {

inline long numel(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense rank-N array in row-major order. The scalar type is a template
// parameter so the same kernels can run in float (production) and double
// (gradient-check harness).
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(numel(shape_)), S(0));
  }

  Tensor(std::vector<int> shape, S fill) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(numel(shape_)), fill);
  }

  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<long>(data_.size()) != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, S v) { return Tensor(std::move(shape), v); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long size() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }
  const std::vector<int>& shape() const { return shape_; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  S operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // Strided element access for the common ranks.
  S& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  S at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  S& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  S at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  S& at(int n, int c, int y, int x) {
    return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  S at(int n, int c, int y, int x) const {
    return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(out));
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
    for (int d : shape_) {
      if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape_));
    }
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

}  // namespace evbox
