#pragma once

#include <string>
#include <vector>

#include "cvla/autodiff.hpp"
#include "cvla/random.hpp"
#include "cvla/tensor.hpp"

namespace cvla {

/// y = x · weight + bias, weight [in×out], bias [out] or empty for no bias.
struct LinearMap {
  TensorD weight;
  TensorD bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  /// weight ~ U(-1/sqrt(in), 1/sqrt(in)), bias = 0.
  static LinearMap init(std::size_t in, std::size_t out, Rng& rng);
  static LinearMap identity(std::size_t width);
  static LinearMap zeros(std::size_t in, std::size_t out);
};

enum class Activation { gelu, relu, identity };

std::string to_string(Activation a);

/// Affine layers with the activation applied between layers (never after the last one).
struct Mlp {
  std::vector<LinearMap> layers;
  Activation activation = Activation::gelu;

  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }

  /// Checks that layer extents chain; throws ShapeError otherwise.
  void validate() const;
};

template <typename T>
Var<T> linear_forward(const LinearMap& map, const Var<T>& x, ParamBinder<T>& bind);

/// x is [rows×in] or a rank-1 [in] vector (treated as one row; the result is then rank 1 too).
template <typename T>
Var<T> mlp_forward(const Mlp& mlp, const Var<T>& x, ParamBinder<T>& bind);

/// Verification-precision convenience wrapper.
TensorD mlp_forward(const Mlp& mlp, const TensorD& x);

}  // namespace cvla
