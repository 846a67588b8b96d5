#include "ssat/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ssat {

void optimizer_step(OptimizerState& state, NamedTensors& params) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) {
      throw std::logic_error("optimizer_step: missing gradient for parameter '" +
                             name + "'");
    }
  }
  state.step += 1;
  for (auto& [name, p] : params) {
    float* v = p.data();
    const float* g = p.grad();
    const int64_t n = p.numel();
    if (state.kind == OptimizerKind::SGD) {
      for (int64_t i = 0; i < n; ++i) v[i] -= state.learning_rate * g[i];
    } else {
      auto& [m1, m2] = state.moments[name];
      if (m1.empty()) {
        m1.assign(static_cast<size_t>(n), 0.0f);
        m2.assign(static_cast<size_t>(n), 0.0f);
      } else if (static_cast<int64_t>(m1.size()) != n) {
        throw std::logic_error("optimizer_step: moment shape mismatch for '" + name + "'");
      }
      const float b1 = state.beta1, b2 = state.beta2;
      const float corr1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
      const float corr2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
      for (int64_t i = 0; i < n; ++i) {
        float gi = g[i];
        m1[static_cast<size_t>(i)] = b1 * m1[static_cast<size_t>(i)] + (1.0f - b1) * gi;
        m2[static_cast<size_t>(i)] = b2 * m2[static_cast<size_t>(i)] + (1.0f - b2) * gi * gi;
        float mhat = m1[static_cast<size_t>(i)] / corr1;
        float vhat = m2[static_cast<size_t>(i)] / corr2;
        v[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
      }
    }
    p.zero_grad();
  }
}

}  // namespace ssat
