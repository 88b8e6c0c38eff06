#include "cvla/mlp.hpp"

#include <cmath>

#include "cvla/errors.hpp"

namespace cvla {

LinearMap LinearMap::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  TensorD weight({in, out});
  for (double& w : weight.data()) w = rng.uniform(-bound, bound);
  return {std::move(weight), TensorD({out})};
}

LinearMap LinearMap::identity(std::size_t width) {
  TensorD weight({width, width});
  for (std::size_t i = 0; i < width; ++i) weight.at(i, i) = 1.0;
  return {std::move(weight), TensorD({width})};
}

LinearMap LinearMap::zeros(std::size_t in, std::size_t out) {
  return {TensorD({in, out}), TensorD({out})};
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

void Mlp::validate() const {
  if (layers.empty()) throw ShapeError("mlp has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2 || (!l.bias.empty() && l.bias.size() != l.weight.dim(1))) {
      throw ShapeError("mlp layer " + std::to_string(i) + ": weight " +
                       shape_string(l.weight.dims()) + " with bias " + shape_string(l.bias.dims()));
    }
    if (i > 0 && layers[i - 1].out_features() != l.in_features()) {
      throw ShapeError("mlp layer " + std::to_string(i) + " expects " +
                       std::to_string(l.in_features()) + " inputs but layer " +
                       std::to_string(i - 1) + " produces " +
                       std::to_string(layers[i - 1].out_features()));
    }
  }
}

template <typename T>
Var<T> linear_forward(const LinearMap& map, const Var<T>& x, ParamBinder<T>& bind) {
  const Var<T> y = ad::matmul(x, bind(map.weight));
  return map.bias.empty() ? y : ad::add_bias(y, bind(map.bias));
}

template <typename T>
Var<T> mlp_forward(const Mlp& mlp, const Var<T>& x, ParamBinder<T>& bind) {
  mlp.validate();
  const bool vector_input = x.value().rank() == 1;
  Var<T> h = vector_input ? ad::reshape(x, {1, x.value().size()}) : x;
  if (h.value().rank() != 2 || h.dims()[1] != mlp.in_features()) {
    throw ShapeError("mlp expects last extent " + std::to_string(mlp.in_features()) + ", got " +
                     shape_string(x.dims()));
  }
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = linear_forward(mlp.layers[i], h, bind);
    if (i + 1 == mlp.layers.size()) break;
    switch (mlp.activation) {
      case Activation::gelu: h = ad::gelu(h); break;
      case Activation::relu: h = ad::relu(h); break;
      case Activation::identity: break;
    }
  }
  return vector_input ? ad::reshape(h, {mlp.out_features()}) : h;
}

TensorD mlp_forward(const Mlp& mlp, const TensorD& x) {
  ParamBinder<double> bind;
  return mlp_forward(mlp, Var<double>::constant(x), bind).value();
}

template Var<float> linear_forward(const LinearMap&, const Var<float>&, ParamBinder<float>&);
template Var<double> linear_forward(const LinearMap&, const Var<double>&, ParamBinder<double>&);
template Var<float> mlp_forward(const Mlp&, const Var<float>&, ParamBinder<float>&);
template Var<double> mlp_forward(const Mlp&, const Var<double>&, ParamBinder<double>&);

}  // namespace cvla
