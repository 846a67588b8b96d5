#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssat/rng.hpp"
#include "ssat/tensor.hpp"

namespace ssat::testutil {

inline Tensor rand_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                          float hi = 1.0f, bool requires_grad = false) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<float> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

inline bool same_bytes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (pa[i] != pb[i]) return false;
  }
  return true;
}

inline std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace ssat::testutil
