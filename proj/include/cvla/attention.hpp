#pragma once

#include <optional>

#include "cvla/autodiff.hpp"
#include "cvla/mlp.hpp"
#include "cvla/random.hpp"

namespace cvla {

/// Learned D→D maps around single-head attention. The key map has no bias.
struct AttentionProjections {
  LinearMap q;
  LinearMap k;
  LinearMap v;
  LinearMap o;

  static AttentionProjections init(std::size_t d, Rng& rng);
};

/// Applies map when present; an absent map is the identity.
template <typename T>
Var<T> project(const std::optional<AttentionProjections>& proj, LinearMap AttentionProjections::*which,
               const Var<T>& x, ParamBinder<T>& bind);

/// 1/sqrt(d) in the working precision.
template <typename T>
T attention_scale(std::size_t d);

}  // namespace cvla
