#include "pathe/optim.hpp"

#include <cmath>

namespace pathe::ad {

template <typename T>
void Adam<T>::step(ParameterSet<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (T g : params[i].grad().data()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in parameter '" + params[i].name() + "'");
      }
    }
  }
  if (m_.size() < params.size()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double step_size = options_.lr / correction1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].value().data();
    auto grads = params[i].grad().data();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != values.size()) {
      m.assign(values.size(), T{0});
      v.assign(values.size(), T{0});
    }
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g * g);
      const double denom = std::sqrt(v[j] / correction2) + options_.eps;
      values[j] = static_cast<T>(values[j] - step_size * m[j] / denom);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace pathe::ad
