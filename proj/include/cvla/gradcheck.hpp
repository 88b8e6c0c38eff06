#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cvla/autodiff.hpp"

namespace cvla {

/// Named, mutable references to stored parameters.
using ParamRefs = std::vector<std::pair<std::string, TensorD*>>;

/// A scalar computation over parameters. Parameters enter the graph through the binder.
using Objective = std::function<Var<double>(ParamBinder<double>&)>;

using GradientMap = std::map<std::string, TensorD>;

/// Reverse-mode gradient of f with respect to every listed parameter. Parameters f never
/// touches get exact zeros.
GradientMap gradients(const Objective& f, const ParamRefs& params);

/// Evaluates f without recording a graph.
double evaluate(const Objective& f);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  /// Largest relative error per parameter name.
  std::map<std::string, double> per_param;
};

/// Relative error with a max(|a|, |b|, 1e-8) denominator.
double relative_error(double analytic, double numeric);

/// Compares gradients() against central differences (f(θ+ε) - f(θ-ε)) / 2ε for every
/// coordinate of every parameter. Parameters are perturbed in place and restored bit-exactly.
FiniteDiffReport finite_diff_check(const Objective& f, const ParamRefs& params, double eps);

}  // namespace cvla
