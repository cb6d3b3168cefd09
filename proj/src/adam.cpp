#include "tsn/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsn {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam: state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, step got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) continue;
    if (grads[i]->shape() != params[i]->shape() || state.first_moment[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("adam: shape mismatch for parameter " + std::to_string(i) + ": " +
                                  to_string(params[i]->shape()) + " vs gradient " +
                                  to_string(grads[i]->shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) continue;
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    p.check_finite("adam");
  }
}

}  // namespace tsn
