#include <cmath>

#include "tgvunet/training.hpp"

namespace tgvunet {

void adam_step(std::span<Param* const> params, double lr, const AdamConfig& cfg) {
  for (Param* p : params) {
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1 - std::pow(cfg.beta1, t);
    const double c2 = 1 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (1 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1 - cfg.beta2) * g * g;
      p->value[i] -= lr * (p->m[i] / c1) / (std::sqrt(p->v[i] / c2) + cfg.eps);
    }
  }
}

void sgd_step(std::span<Param* const> params, double lr) {
  for (Param* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) p->value[i] -= lr * p->grad[i];
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace tgvunet
