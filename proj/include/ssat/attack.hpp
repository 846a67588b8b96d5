#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssat/jsonio.hpp"
#include "ssat/labelmap.hpp"
#include "ssat/nets.hpp"
#include "ssat/scenes.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

enum class AttackType { Vanish, Embed, Displace };
enum class SuccessMode { Strict, VanishMode, EmbedMode };

std::string attack_type_name(AttackType t);
AttackType attack_type_from_name(const std::string& name);
std::string success_mode_name(SuccessMode m);
SuccessMode success_mode_from_name(const std::string& name);

/// Stencil for the fake object of Embed/Displace attacks: a fractional
/// rectangle, a union of procedural ellipse blobs, or an external 0/255 PGM.
struct MaskSource {
  enum class Kind { None, Rect, Blobs, File };
  Kind kind = Kind::None;
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // Rect, fractions of w/h
  int count = 0;                         // Blobs
  uint64_t seed = 0;                     // Blobs
  std::string path;                      // File
};

struct TargetMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> bits;  // 0/1, row-major

  TargetMask() = default;
  TargetMask(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), bits(static_cast<size_t>(h_) * w_, fill) {}

  bool test(int y, int x) const { return bits[static_cast<size_t>(y) * w + x] != 0; }
  void set(int y, int x, bool v) { bits[static_cast<size_t>(y) * w + x] = v ? 1 : 0; }
  int64_t count() const;
  bool operator==(const TargetMask& o) const = default;
};

/// The manipulated label map the attack steers predictions toward, plus the
/// mask of pixels it is supposed to change.
struct StealthyLabels {
  LabelMap labels;
  TargetMask mask;
};

struct AttackSpec {
  AttackType attack_type = AttackType::Vanish;
  std::vector<int> target_classes;  // Vanish / Displace
  int fake_class = -1;              // Embed / Displace
  MaskSource mask_source;           // Embed / Displace
  std::optional<SuccessMode> success_mode;  // default depends on attack_type

  SuccessMode effective_success_mode() const;
  void validate(int num_classes) const;
};

json attack_spec_to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const json& j);

TargetMask render_mask(const MaskSource& src, int h, int w);

StealthyLabels map_vanish(const Tensor& logits_chw,
                          const std::vector<int>& target_classes);
StealthyLabels map_embed(const Tensor& logits_chw, const TargetMask& mask,
                         int fake_class);
StealthyLabels map_displace(const Tensor& logits_chw,
                            const std::vector<int>& target_classes,
                            const TargetMask& mask, int fake_class);

/// Dispatch on spec.attack_type; embed_mask may be null for Vanish.
StealthyLabels map_labels(const Tensor& logits_chw, const AttackSpec& spec,
                          const TargetMask* embed_mask);

/// Whether one on-mask pixel counts as manipulated under the given mode.
bool manipulated_pixel_ok(const AttackSpec& spec, SuccessMode mode,
                          uint8_t adv_label, uint8_t stealthy_label);

/// p_hat = xi * tanh(raw); max-norm <= xi by construction.
Tensor scale_perturbation(const Tensor& raw, float xi);

/// clamp(image + p, 0, 255).
Tensor apply_perturbation(const Tensor& image, const Tensor& p);

/// Sum over images and pixels of [T_k*w_t + (1-T_k)*w_nt] * CE vs the
/// stealthy labels. Deliberately its own softmax implementation, not a call
/// into cross_entropy_pixelwise, so the two can be checked against each other.
Tensor adversarial_loss(const Tensor& logits_nchw,
                        const std::vector<StealthyLabels>& stealthy, float w_t,
                        float w_nt);

/// Plain pixelwise CE of the regularizer logits vs ground truth.
Tensor regularizer_loss(const Tensor& logits_nchw, const std::vector<LabelMap>& y);

Tensor total_loss(const Tensor& adv, const Tensor& reg, float lambda0);

struct AttackTrainConfig {
  float lr = 1e-4f;
  int batch = 8;
  float lambda0 = 1e-2f;
  float xi = 10.0f;
  int epochs = 10;
  uint64_t seed = 0;
  float target_weight = 1.0f;
  float preserve_weight = 1.0f;
  bool regularizer_enabled = true;

  void validate() const;
};

json attack_train_config_to_json(const AttackTrainConfig& cfg);
AttackTrainConfig attack_train_config_from_json(const json& j);

struct EpochStats {
  int epoch = 0;
  float adv_loss = 0;    // per-image means over the epoch's batches
  float reg_loss = 0;
  float total_loss = 0;
  float manipulated = 0;  // rates measured on the epoch's own forward passes
  float preserved = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/// Algorithm: per batch, clean target logits (no gradients) give the stealthy
/// labels; the generator's scaled perturbation is applied and pushed through
/// the frozen target; adversarial + regularizer losses update the generator
/// only. Deterministic for a fixed config. `on_epoch`, when set, runs after
/// each epoch (e.g. to checkpoint) with the history so far.
TrainHistory train_attack(
    Model& generator, const Model& target, const Dataset& data, const AttackSpec& spec,
    const AttackTrainConfig& cfg,
    const std::function<void(int epoch, const TrainHistory&)>& on_epoch = {});

struct PretrainConfig {
  float lr = 1e-3f;
  int batch = 8;
  int epochs = 12;
  uint64_t seed = 0;
  int base_width = 16;
  float width_multiplier = 1.0f;

  void validate() const;
};

json pretrain_config_to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const json& j);

struct PretrainResult {
  Model model;
  float test_pixel_accuracy = 0;
  std::vector<float> epoch_loss;  // per-image mean CE
};

PretrainResult pretrain_target(const Dataset& data, const PretrainConfig& cfg);

/// Micro-averaged argmax accuracy vs ground truth over the given samples.
float pixel_accuracy(const Model& model, const Dataset& data,
                     const std::vector<int>& indices);

}  // namespace ssat
