#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssat/attack.hpp"

namespace ssat {

struct MetricsReport {
  // identity (filled by the harness/CLI; metric fields by evaluate_attack)
  std::string experiment_id;
  std::string generator_ckpt;
  std::string target_ckpt;
  std::string dataset;
  AttackType attack_type = AttackType::Vanish;
  SuccessMode success_mode = SuccessMode::VanishMode;
  float xi = 10.0f;
  float lambda0 = 1e-2f;
  uint64_t seed = 0;

  std::optional<float> manipulated_rate;  // absent iff n_target_pixels == 0
  float preserved_rate = 0.0f;
  int64_t n_target_pixels = 0;
  int64_t n_nontarget_pixels = 0;
  std::vector<int64_t> per_class_confusion;  // C*C, clean prediction -> adversarial
  // displace attacks report the two regions separately as well
  std::optional<float> manipulated_vanish;
  std::optional<float> manipulated_embed;
  // pixel-weighted combination of manipulated and preserved, for single-number
  // cell summaries
  std::optional<float> overall_rate;
  std::optional<float> efficiency_ratio;
  std::string fingerprint;

  // cross_evaluate marks failing cells instead of aborting the grid
  bool failed = false;
  std::string error;
};

/// Fraction of on-mask pixels counted as manipulated under the spec's
/// effective success mode. Empty mask -> absent.
std::optional<float> manipulated_rate(const LabelMap& clean_pred,
                                      const LabelMap& adv_pred,
                                      const StealthyLabels& stealthy,
                                      const AttackSpec& spec);

/// Fraction of off-mask pixels whose adversarial prediction matches the clean
/// one. All-true mask -> error (empty denominator).
float preserved_rate(const LabelMap& clean_pred, const LabelMap& adv_pred,
                     const TargetMask& mask);

/// Full no-update pipeline over the given samples; micro-averaged rates,
/// confusion counts and a config fingerprint.
MetricsReport evaluate_attack(const Model& generator, const Model& target,
                              const Dataset& data, const std::vector<int>& indices,
                              const AttackSpec& spec, float xi);

/// Axes of a cross-evaluation. Targets and datasets are paired positionally
/// (target[j] was trained on dataset[j]); cells run generators x pairs x xis.
struct ExperimentGrid {
  std::vector<std::string> generators;  // checkpoint paths
  std::vector<std::string> targets;    // checkpoint paths
  std::vector<std::string> datasets;   // dataset directories
  std::vector<float> xis;              // empty -> {10}
  AttackSpec attack_spec;
  uint64_t seed = 0;
};

json experiment_grid_to_json(const ExperimentGrid& grid);
ExperimentGrid experiment_grid_from_json(const json& j);

/// One report per cell; a failing cell is marked failed with its error text.
std::vector<MetricsReport> cross_evaluate(const ExperimentGrid& grid);

/// Trains one attack per xi (fresh generator, same seed) and evaluates it on
/// the test split. xis must be positive and ascending.
std::vector<MetricsReport> sweep_xi(const Dataset& data, const Model& target,
                                    const ModelConfig& generator_cfg,
                                    const AttackSpec& spec,
                                    const AttackTrainConfig& base_cfg,
                                    const std::vector<float>& xis);

/// Trains one attack per generator width multiplier (fresh generator, same
/// seed) and evaluates it on the test split; efficiency_ratio is filled per
/// row. widths must be descending (e.g. 1.0, 0.5, 0.25).
std::vector<MetricsReport> sweep_width(const Dataset& data, const Model& target,
                                       const ModelConfig& generator_cfg,
                                       const AttackSpec& spec,
                                       const AttackTrainConfig& cfg,
                                       const std::vector<float>& widths);

float efficiency_ratio(int64_t generator_params, int64_t target_params);
float efficiency_ratio(const Model& generator, const Model& target);

using Palette = std::vector<std::array<uint8_t, 3>>;

/// Fixed display palette for the 8-class street set.
const Palette& default_palette();

/// One pixel per label id -> P6 bytes.
std::vector<uint8_t> render_labelmap(const LabelMap& labels, const Palette& palette);

/// Exact column set, 4-decimal rates, deterministic order (as given).
void write_report_csv(const std::vector<MetricsReport>& reports,
                      const std::string& path);
std::string report_csv_string(const std::vector<MetricsReport>& reports);

/// FNV-1a 64 of a canonical description, as 16 hex digits.
std::string config_fingerprint(const std::string& canonical);

}  // namespace ssat
