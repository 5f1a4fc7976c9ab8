#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pathe/autodiff.hpp"

namespace pathe::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator: gradients smaller than
// `floor` in magnitude are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares tape gradients of the scalar `f` against central differences
// (f(x+eps) - f(x-eps)) / (2 eps) for every element of `inputs`. `f` builds a
// fresh computation on the given tape each call and must be deterministic.
inline GradCheckResult grad_check(
    const std::function<Var<double>(Tape<double>&)>& f, const std::vector<Parameter<double>*>& inputs,
    double eps = 1e-5, double floor = 1e-6) {
  for (auto* p : inputs) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> out = f(tape);
    tape.backward(out);
  }
  GradCheckResult result;
  for (auto* p : inputs) {
    const Tensor<double> analytic = p->grad();
    auto values = p->value().data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      double plus, minus;
      {
        Tape<double> tape;
        plus = f(tape).value().item();
      }
      values[i] = saved - eps;
      {
        Tape<double> tape;
        minus = f(tape).value().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric, floor);
      ++result.checked;
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p->name();
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& f,
                                  ParameterSet<double>& params, double eps = 1e-5,
                                  double floor = 1e-6) {
  std::vector<Parameter<double>*> inputs;
  for (auto& p : params) inputs.push_back(p.get());
  return grad_check(f, inputs, eps, floor);
}

}  // namespace pathe::ad
