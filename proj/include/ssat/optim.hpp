#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

enum class OptimizerKind { SGD, Adam };

/// Adam state is keyed by parameter name, so the same state object keeps
/// working across checkpoint save/load round trips.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  int64_t step = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments;
};

/// One update over all params. Every param must hold a gradient; grads are
/// zeroed after the update.
void optimizer_step(OptimizerState& state, NamedTensors& params);

}  // namespace ssat
