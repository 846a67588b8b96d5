#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssat/attack.hpp"
#include "ssat/jsonio.hpp"
#include "ssat/scenes.hpp"

namespace ssat {

struct ModelSize {
  int base_width = 16;
  float width_multiplier = 1.0f;
};

/// One JSON file that pins a full recipe. Unknown fields anywhere are
/// rejected. Sub-configs that omit their own seed inherit the top-level one;
/// every random stream downstream namespaces itself from it.
struct RunConfig {
  SceneConfig scene_config;
  ModelSize target_model;
  ModelSize generator_model;
  PretrainConfig pretrain_config;
  AttackSpec attack_spec;
  AttackTrainConfig train_config;
  std::vector<int> eval_samples;
  int n_train = 1000;
  int n_test = 200;
  std::string output_dir = "out";
  uint64_t seed = 42;
};

RunConfig run_config_from_json(const json& j);
json run_config_to_json(const RunConfig& rc);

/// Worker cap: SSAT_THREADS if set (>= 1), else hardware concurrency.
int worker_threads();

/// Exit codes: 0 success, 1 runtime/experiment failure, 2 config/usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace ssat
