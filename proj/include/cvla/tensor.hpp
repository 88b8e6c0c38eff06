#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cvla {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& dims);
std::string shape_string(const Shape& dims);

/// Dense row-major array of reals. T is double in verification mode and float in fast mode.
///
/// A zero extent is representable (an empty tensor) so that file readers can hand
/// empty sequences to the operation that rejects them with a meaningful message.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, std::vector<T> data);

  static Tensor filled(Shape dims, T value);
  /// Builds a rank-2 tensor from nested rows; all rows must have the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor vector(std::initializer_list<T> values);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  /// Same data under new extents with an equal element count.
  Tensor reshaped(Shape dims) const&;
  Tensor reshaped(Shape dims) &&;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const;

  /// Equal dims and elementwise value equality.
  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape dims_;
  std::vector<T> data_;
};

/// True when dims match and every element has the same bit pattern.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

}  // namespace cvla
