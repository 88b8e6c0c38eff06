#include "cvla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cvla/errors.hpp"

namespace cvla {

std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << 'x';
    out << dims[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
Tensor<T>::Tensor(Shape dims) : dims_(std::move(dims)), data_(shape_size(dims_), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  if (shape_size(dims_) != data_.size()) {
    throw ShapeError("tensor dims " + shape_string(dims_) + " need " +
                     std::to_string(shape_size(dims_)) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape dims, T value) {
  std::size_t n = shape_size(dims);
  return Tensor(std::move(dims), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged rows in matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape dims) const& {
  return Tensor(std::move(dims), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape dims) && {
  return Tensor(std::move(dims), std::move(data_));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) return false;
  return a.empty() || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace cvla
