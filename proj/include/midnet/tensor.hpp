// Dense row-major n-d tensor with shared storage.
//
// Copying a Tensor is shallow (both copies view the same buffer);
// use clone() for an independent copy. All graph operations allocate
// fresh outputs and never write through their inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace midnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), T(0))) {
    for (auto d : shape_)
      if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(shape_));
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<std::int64_t>(data_->size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor: value count does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }

  T& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  // NHWC convenience index.
  std::int64_t idx4(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c) const {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

  void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // Same buffer, new shape (element count must match).
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                  " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t{shape_};
    for (std::int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>((*data_)[static_cast<std::size_t>(i)]);
    return t;
  }

  bool all_finite() const {
    for (std::int64_t i = 0; i < numel(); ++i)
      if (!std::isfinite(static_cast<double>((*data_)[static_cast<std::size_t>(i)]))) return false;
    return true;
  }

 private:
  template <typename U>
  friend class Tensor;

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace midnet
