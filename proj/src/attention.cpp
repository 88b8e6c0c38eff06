#include "cvla/attention.hpp"

#include <cmath>

namespace cvla {

AttentionProjections AttentionProjections::init(std::size_t d, Rng& rng) {
  AttentionProjections p;
  p.q = LinearMap::init(d, d, rng);
  p.k = LinearMap::init(d, d, rng);
  p.k.bias = TensorD();  // a shared key offset cancels in the softmax
  p.v = LinearMap::init(d, d, rng);
  p.o = LinearMap::init(d, d, rng);
  return p;
}

template <typename T>
Var<T> project(const std::optional<AttentionProjections>& proj, LinearMap AttentionProjections::*which,
               const Var<T>& x, ParamBinder<T>& bind) {
  if (!proj) return x;
  return linear_forward((*proj).*which, x, bind);
}

template <typename T>
T attention_scale(std::size_t d) {
  return T(1) / std::sqrt(static_cast<T>(d));
}

template Var<float> project(const std::optional<AttentionProjections>&,
                            LinearMap AttentionProjections::*, const Var<float>&,
                            ParamBinder<float>&);
template Var<double> project(const std::optional<AttentionProjections>&,
                             LinearMap AttentionProjections::*, const Var<double>&,
                             ParamBinder<double>&);
template float attention_scale<float>(std::size_t);
template double attention_scale<double>(std::size_t);

}  // namespace cvla
