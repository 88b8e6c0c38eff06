#include "cvla/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cvla/errors.hpp"

namespace cvla {

GradientMap gradients(const Objective& f, const ParamRefs& params) {
  ParamBinder<double> bind(/*track_gradients=*/true);
  Var<double> objective = f(bind);
  backward(objective);
  GradientMap out;
  for (const auto& [name, tensor] : params) out.emplace(name, bind.gradient(*tensor));
  return out;
}

double evaluate(const Objective& f) {
  ParamBinder<double> bind;
  Var<double> objective = f(bind);
  if (objective.value().size() != 1) {
    throw ContractError("objective must be scalar, got " + shape_string(objective.dims()));
  }
  return objective.value()[0];
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

FiniteDiffReport finite_diff_check(const Objective& f, const ParamRefs& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite difference step must be positive");
  const GradientMap analytic = gradients(f, params);
  FiniteDiffReport report;
  for (const auto& [name, tensor] : params) {
    const TensorD& grad = analytic.at(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double original = (*tensor)[i];
      (*tensor)[i] = original + eps;
      const double up = evaluate(f);
      (*tensor)[i] = original - eps;
      const double down = evaluate(f);
      (*tensor)[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(grad[i], numeric);
      worst = std::max(worst, err);
      if (report.worst_param.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic_at_worst = grad[i];
        report.numeric_at_worst = numeric;
      }
    }
    report.per_param[name] = worst;
  }
  return report;
}

}  // namespace cvla
