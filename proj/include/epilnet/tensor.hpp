#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "epilnet/errors.hpp"

namespace epilnet {

struct Shape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t length = 0;

  std::size_t numel() const noexcept { return batch * channels * length; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense (batch, channels, length) array in row-major order with an optional
/// gradient buffer of the same extent.
template <typename T>
class SignalTensor {
 public:
  using value_type = T;

  SignalTensor() = default;
  explicit SignalTensor(Shape shape, T fill = T(0))
      : shape_(shape), values_(shape.numel(), fill) {}
  SignalTensor(Shape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.numel()) throw ShapeError("tensor values", shape_.numel(), values_.size());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t batch() const noexcept { return shape_.batch; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t length() const noexcept { return shape_.length; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& at(std::size_t b, std::size_t c, std::size_t t) noexcept {
    return values_[(b * shape_.channels + c) * shape_.length + t];
  }
  T at(std::size_t b, std::size_t c, std::size_t t) const noexcept {
    return values_[(b * shape_.channels + c) * shape_.length + t];
  }
  T& operator[](std::size_t i) noexcept { return values_[i]; }
  T operator[](std::size_t i) const noexcept { return values_[i]; }

  // Contiguous slice of one (batch, channel) row.
  std::span<T> row(std::size_t b, std::size_t c) noexcept {
    return {values_.data() + (b * shape_.channels + c) * shape_.length, shape_.length};
  }
  std::span<const T> row(std::size_t b, std::size_t c) const noexcept {
    return {values_.data() + (b * shape_.channels + c) * shape_.length, shape_.length};
  }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() {
    if (grad_.empty()) grad_.assign(values_.size(), T(0));
    return grad_;
  }
  std::span<const T> grad() const noexcept { return grad_; }
  void drop_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

  bool all_finite() const noexcept {
    auto finite = [](T v) { return std::isfinite(v); };
    return std::all_of(values_.begin(), values_.end(), finite) &&
           std::all_of(grad_.begin(), grad_.end(), finite);
  }

  /// Same storage, different (batch, channels, length) view; element count must match.
  SignalTensor reshaped(Shape shape) const& {
    if (shape.numel() != values_.size()) throw ShapeError("reshape element count", values_.size(), shape.numel());
    SignalTensor out;
    out.shape_ = shape;
    out.values_ = values_;
    return out;
  }
  SignalTensor reshaped(Shape shape) && {
    if (shape.numel() != values_.size()) throw ShapeError("reshape element count", values_.size(), shape.numel());
    shape_ = shape;
    grad_.clear();
    return std::move(*this);
  }

  template <typename U>
  SignalTensor<U> cast() const {
    SignalTensor<U> out(shape_);
    std::transform(values_.begin(), values_.end(), out.values().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

}  // namespace epilnet
