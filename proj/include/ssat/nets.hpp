#pragma once

#include <cstdint>
#include <string>

#include "ssat/optim.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

enum class ModelKind { TargetFCN, GeneratorUNet };

struct ModelConfig {
  ModelKind kind = ModelKind::TargetFCN;
  int in_channels = 3;
  int num_classes = 8;
  int base_width = 16;
  float width_multiplier = 1.0f;  // one of 1.0, 0.5, 0.25

  /// Hidden width at encoder level 0..2: round(base_width * 2^level * multiplier), min 4.
  int channels(int level) const;
  void validate() const;
};

struct Model {
  ModelConfig config;
  NamedTensors params;
  bool frozen = false;
  uint64_t seed = 0;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
};

/// Segmentation target: 3-level strided encoder with additive skip fusion on
/// the way back up, logits at input resolution. Kaiming-uniform init from seed.
Model build_target_fcn(const ModelConfig& config, uint64_t seed);

/// Perturbation generator: UNet-style encoder/decoder with skip
/// concatenations and two sibling 1x1 heads (3-channel perturbation,
/// num_classes regularizer logits) on the shared final feature map.
Model build_generator_unet(const ModelConfig& config, uint64_t seed);

struct GeneratorOutput {
  Tensor raw_perturbation;    // n x 3 x h x w, pre-scaling
  Tensor regularizer_logits;  // n x num_classes x h x w
};

/// Logits n x num_classes x h x w; h and w must divide by 8.
Tensor forward_target(const Model& model, const Tensor& image);

GeneratorOutput forward_generator(const Model& model, const Tensor& image);

/// Marks the model frozen and detaches its params from gradient tracking.
void freeze(Model& model);

int64_t count_params(const Model& model);

/// Binary checkpoint ("SSAT" magic, version 1) plus a JSON sidecar at
/// path + ".json" holding {kind, in_channels, num_classes, base_width,
/// width_multiplier, seed}. Atomic (temp file + rename).
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace ssat
