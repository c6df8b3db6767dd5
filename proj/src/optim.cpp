#include "sager/optim.hpp"

#include <cmath>

namespace sager {

double decayed_lr(double initial, double decay, std::size_t epoch) {
  return initial * std::pow(decay, static_cast<double>(epoch));
}

template <typename T>
void Adam<T>::step(ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto g : params[i].grad.values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingError("non-finite gradient in parameter " + params[i].name);
      }
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& h = p.group == ParamGroup::kEmbedding ? embedding_ : main_;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    const T lr_t = static_cast<T>(h.lr * std::sqrt(c2) / c1);
    const T eps_t = static_cast<T>(h.eps * std::sqrt(c2));
    auto* w = p.value.data();
    auto* m = p.m.data();
    auto* v = p.v.data();
    const auto* g = p.grad.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps_t);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace sager
