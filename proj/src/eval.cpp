#include "ssat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "ssat/image_io.hpp"
#include "ssat/nn_ops.hpp"

namespace ssat {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_same_size(const LabelMap& a, const LabelMap& b, const char* who) {
  require(a.h == b.h && a.w == b.w, std::string(who) + ": label map size mismatch");
}

Tensor image_slice(const Tensor& nchw, int i) {
  const int c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
  const int64_t per = static_cast<int64_t>(c) * h * w;
  return Tensor::from_data(
      {c, h, w}, std::vector<float>(nchw.data() + i * per, nchw.data() + (i + 1) * per));
}

}  // namespace

std::optional<float> manipulated_rate(const LabelMap& clean_pred,
                                      const LabelMap& adv_pred,
                                      const StealthyLabels& stealthy,
                                      const AttackSpec& spec) {
  check_same_size(clean_pred, adv_pred, "manipulated_rate");
  check_same_size(clean_pred, stealthy.labels, "manipulated_rate");
  const SuccessMode mode = spec.effective_success_mode();
  int64_t n = 0, ok = 0;
  for (size_t p = 0; p < stealthy.mask.bits.size(); ++p) {
    if (!stealthy.mask.bits[p]) continue;
    ++n;
    ok += manipulated_pixel_ok(spec, mode, adv_pred.ids[p], stealthy.labels.ids[p]);
  }
  if (n == 0) return std::nullopt;
  return static_cast<float>(static_cast<double>(ok) / static_cast<double>(n));
}

float preserved_rate(const LabelMap& clean_pred, const LabelMap& adv_pred,
                     const TargetMask& mask) {
  check_same_size(clean_pred, adv_pred, "preserved_rate");
  require(mask.h == clean_pred.h && mask.w == clean_pred.w,
          "preserved_rate: mask size mismatch");
  int64_t n = 0, ok = 0;
  for (size_t p = 0; p < mask.bits.size(); ++p) {
    if (mask.bits[p]) continue;
    ++n;
    ok += adv_pred.ids[p] == clean_pred.ids[p];
  }
  require(n > 0, "preserved_rate: mask covers every pixel (empty denominator)");
  return static_cast<float>(static_cast<double>(ok) / static_cast<double>(n));
}

MetricsReport evaluate_attack(const Model& generator, const Model& target,
                              const Dataset& data, const std::vector<int>& indices,
                              const AttackSpec& spec, float xi) {
  const int num_classes = data.config().num_classes;
  spec.validate(num_classes);
  require(xi > 0.0f, "evaluate_attack: xi must be > 0");
  require(generator.config.num_classes == num_classes &&
              target.config.num_classes == num_classes,
          "evaluate_attack: class count mismatch between models and dataset");
  require(!indices.empty(), "evaluate_attack: no samples");

  const int h = data.config().height;
  const int w = data.config().width;
  TargetMask embed_mask;
  const TargetMask* mask_ptr = nullptr;
  if (spec.attack_type != AttackType::Vanish) {
    embed_mask = render_mask(spec.mask_source, h, w);
    mask_ptr = &embed_mask;
  }

  MetricsReport rep;
  rep.attack_type = spec.attack_type;
  rep.success_mode = spec.effective_success_mode();
  rep.xi = xi;
  rep.per_class_confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);

  int64_t n_target = 0, n_manip = 0, n_nontarget = 0, n_pres = 0;
  int64_t n_van = 0, ok_van = 0, n_emb = 0, ok_emb = 0;

  const size_t chunk = 16;
  for (size_t start = 0; start < indices.size(); start += chunk) {
    size_t end = std::min(indices.size(), start + chunk);
    std::vector<int> idx(indices.begin() + static_cast<long>(start),
                         indices.begin() + static_cast<long>(end));
    const int nb = static_cast<int>(idx.size());
    Tensor x = batch_images(data, idx);

    Graph::NoGrad ng;
    Tensor l_x = forward_target(target, x);
    GeneratorOutput go = forward_generator(generator, x);
    Tensor p = scale_perturbation(go.raw_perturbation, xi);
    Tensor xhat = apply_perturbation(x, p);
    Tensor lhat = forward_target(target, xhat);

    std::vector<LabelMap> clean_pred = argmax_labels_batch(l_x);
    std::vector<LabelMap> adv_pred = argmax_labels_batch(lhat);
    for (int i = 0; i < nb; ++i) {
      StealthyLabels st = map_labels(image_slice(l_x, i), spec, mask_ptr);
      const LabelMap& cp = clean_pred[static_cast<size_t>(i)];
      const LabelMap& ap = adv_pred[static_cast<size_t>(i)];
      for (size_t q = 0; q < st.mask.bits.size(); ++q) {
        rep.per_class_confusion[static_cast<size_t>(cp.ids[q]) * num_classes +
                                ap.ids[q]] += 1;
        if (st.mask.bits[q]) {
          ++n_target;
          n_manip += manipulated_pixel_ok(spec, rep.success_mode, ap.ids[q],
                                          st.labels.ids[q]);
          if (spec.attack_type == AttackType::Displace) {
            if (mask_ptr->bits[q]) {
              ++n_emb;
              ok_emb += ap.ids[q] == spec.fake_class;
            } else {
              ++n_van;
              ok_van += manipulated_pixel_ok(spec, SuccessMode::VanishMode, ap.ids[q],
                                             st.labels.ids[q]);
            }
          }
        } else {
          ++n_nontarget;
          n_pres += ap.ids[q] == cp.ids[q];
        }
      }
    }
  }

  rep.n_target_pixels = n_target;
  rep.n_nontarget_pixels = n_nontarget;
  if (n_target > 0) {
    rep.manipulated_rate =
        static_cast<float>(static_cast<double>(n_manip) / static_cast<double>(n_target));
  }
  require(n_nontarget > 0, "evaluate_attack: every pixel targeted, preserved rate undefined");
  rep.preserved_rate =
      static_cast<float>(static_cast<double>(n_pres) / static_cast<double>(n_nontarget));
  if (spec.attack_type == AttackType::Displace) {
    if (n_van > 0) {
      rep.manipulated_vanish =
          static_cast<float>(static_cast<double>(ok_van) / static_cast<double>(n_van));
    }
    if (n_emb > 0) {
      rep.manipulated_embed =
          static_cast<float>(static_cast<double>(ok_emb) / static_cast<double>(n_emb));
    }
  }
  rep.overall_rate = static_cast<float>(
      (static_cast<double>(n_manip) + static_cast<double>(n_pres)) /
      (static_cast<double>(n_target) + static_cast<double>(n_nontarget)));
  rep.efficiency_ratio = efficiency_ratio(generator, target);

  char xibuf[32];
  std::snprintf(xibuf, sizeof xibuf, "%g", static_cast<double>(xi));
  rep.fingerprint = config_fingerprint(
      attack_spec_to_json(spec).dump() + "|xi=" + xibuf +
      "|gen=" + std::to_string(count_params(generator)) +
      "|tgt=" + std::to_string(count_params(target)) +
      "|data=" + scene_config_to_json(data.config()).dump() +
      "|n=" + std::to_string(indices.size()));
  return rep;
}

json experiment_grid_to_json(const ExperimentGrid& grid) {
  json j;
  j["generators"] = grid.generators;
  j["targets"] = grid.targets;
  j["datasets"] = grid.datasets;
  j["xis"] = grid.xis;
  j["attack_spec"] = attack_spec_to_json(grid.attack_spec);
  j["seed"] = grid.seed;
  return j;
}

ExperimentGrid experiment_grid_from_json(const json& j) {
  check_known_keys(j, {"generators", "targets", "datasets", "xis", "attack_spec", "seed"},
                   "grid");
  ExperimentGrid g;
  if (j.contains("generators")) g.generators = j["generators"].get<std::vector<std::string>>();
  if (j.contains("targets")) g.targets = j["targets"].get<std::vector<std::string>>();
  if (j.contains("datasets")) g.datasets = j["datasets"].get<std::vector<std::string>>();
  if (j.contains("xis")) g.xis = j["xis"].get<std::vector<float>>();
  if (!j.contains("attack_spec")) throw ConfigError("grid: attack_spec missing");
  g.attack_spec = attack_spec_from_json(j["attack_spec"]);
  if (j.contains("seed")) g.seed = j["seed"].get<uint64_t>();
  if (g.generators.empty() || g.targets.empty()) {
    throw ConfigError("grid: need at least one generator and one target");
  }
  if (g.targets.size() != g.datasets.size()) {
    throw ConfigError("grid: targets and datasets must pair up one-to-one");
  }
  return g;
}

std::vector<MetricsReport> cross_evaluate(const ExperimentGrid& grid) {
  if (grid.targets.size() != grid.datasets.size()) {
    throw ConfigError("cross_evaluate: targets and datasets must pair up one-to-one");
  }
  std::vector<float> xis = grid.xis.empty() ? std::vector<float>{10.0f} : grid.xis;
  std::map<std::string, Dataset> dataset_cache;
  std::vector<MetricsReport> out;

  for (size_t gi = 0; gi < grid.generators.size(); ++gi) {
    for (size_t tj = 0; tj < grid.targets.size(); ++tj) {
      for (float xi : xis) {
        MetricsReport rep;
        rep.generator_ckpt = grid.generators[gi];
        rep.target_ckpt = grid.targets[tj];
        rep.dataset = grid.datasets[tj];
        rep.xi = xi;
        rep.seed = grid.seed;
        rep.experiment_id = "cell_g" + std::to_string(gi) + "_t" + std::to_string(tj) +
                            "_xi" + std::to_string(static_cast<int>(xi));
        try {
          Model gen = load_checkpoint(grid.generators[gi]);
          Model tgt = load_checkpoint(grid.targets[tj]);
          auto it = dataset_cache.find(grid.datasets[tj]);
          if (it == dataset_cache.end()) {
            it = dataset_cache.emplace(grid.datasets[tj], Dataset::open(grid.datasets[tj]))
                     .first;
          }
          const Dataset& data = it->second;
          MetricsReport cell = evaluate_attack(gen, tgt, data, data.test_indices(),
                                               grid.attack_spec, xi);
          cell.experiment_id = rep.experiment_id;
          cell.generator_ckpt = rep.generator_ckpt;
          cell.target_ckpt = rep.target_ckpt;
          cell.dataset = rep.dataset;
          cell.seed = rep.seed;
          out.push_back(std::move(cell));
        } catch (const std::exception& e) {
          rep.failed = true;
          rep.error = e.what();
          out.push_back(std::move(rep));
        }
      }
    }
  }
  return out;
}

std::vector<MetricsReport> sweep_xi(const Dataset& data, const Model& target,
                                    const ModelConfig& generator_cfg,
                                    const AttackSpec& spec,
                                    const AttackTrainConfig& base_cfg,
                                    const std::vector<float>& xis) {
  require(!xis.empty(), "sweep_xi: empty xi list");
  for (size_t i = 0; i < xis.size(); ++i) {
    require(xis[i] > 0.0f, "sweep_xi: xi values must be positive");
    if (i > 0) require(xis[i] > xis[i - 1], "sweep_xi: xi values must be ascending");
  }
  std::vector<MetricsReport> out;
  for (float xi : xis) {
    Model gen = build_generator_unet(generator_cfg, base_cfg.seed);
    AttackTrainConfig cfg = base_cfg;
    cfg.xi = xi;
    train_attack(gen, target, data, spec, cfg);
    MetricsReport rep = evaluate_attack(gen, target, data, data.test_indices(), spec, xi);
    rep.lambda0 = cfg.lambda0;
    rep.seed = cfg.seed;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "xi_%g", static_cast<double>(xi));
    rep.experiment_id = idbuf;
    out.push_back(std::move(rep));
  }
  return out;
}

std::vector<MetricsReport> sweep_width(const Dataset& data, const Model& target,
                                       const ModelConfig& generator_cfg,
                                       const AttackSpec& spec,
                                       const AttackTrainConfig& cfg,
                                       const std::vector<float>& widths) {
  require(!widths.empty(), "sweep_width: empty width list");
  for (size_t i = 1; i < widths.size(); ++i) {
    require(widths[i] < widths[i - 1], "sweep_width: widths must be descending");
  }
  std::vector<MetricsReport> out;
  for (float mult : widths) {
    ModelConfig gc = generator_cfg;
    gc.width_multiplier = mult;
    Model gen = build_generator_unet(gc, cfg.seed);
    train_attack(gen, target, data, spec, cfg);
    MetricsReport rep = evaluate_attack(gen, target, data, data.test_indices(), spec,
                                        cfg.xi);
    rep.lambda0 = cfg.lambda0;
    rep.seed = cfg.seed;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "width_%g", static_cast<double>(mult));
    rep.experiment_id = idbuf;
    out.push_back(std::move(rep));
  }
  return out;
}

float efficiency_ratio(int64_t generator_params, int64_t target_params) {
  require(target_params > 0, "efficiency_ratio: target has no parameters");
  return static_cast<float>(static_cast<double>(generator_params) /
                            static_cast<double>(target_params));
}

float efficiency_ratio(const Model& generator, const Model& target) {
  return efficiency_ratio(count_params(generator), count_params(target));
}

const Palette& default_palette() {
  static const Palette p{{{128, 64, 128}},
                         {{244, 35, 232}},
                         {{70, 70, 70}},
                         {{70, 130, 180}},
                         {{0, 0, 142}},
                         {{220, 20, 60}},
                         {{255, 0, 0}},
                         {{0, 0, 0}}};
  return p;
}

std::vector<uint8_t> render_labelmap(const LabelMap& labels, const Palette& palette) {
  ImageU8 img;
  img.h = labels.h;
  img.w = labels.w;
  img.rgb.resize(static_cast<size_t>(labels.h) * labels.w * 3);
  for (size_t p = 0; p < labels.ids.size(); ++p) {
    uint8_t id = labels.ids[p];
    if (id >= palette.size()) {
      throw std::invalid_argument("render_labelmap: label " + std::to_string(id) +
                                  " outside palette of " +
                                  std::to_string(palette.size()));
    }
    img.rgb[p * 3 + 0] = palette[id][0];
    img.rgb[p * 3 + 1] = palette[id][1];
    img.rgb[p * 3 + 2] = palette[id][2];
  }
  return encode_ppm(img);
}

namespace {

std::string fmt_rate(const std::optional<float>& r) {
  if (!r) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(*r));
  return buf;
}

std::string fmt_g(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::string report_csv_string(const std::vector<MetricsReport>& reports) {
  std::string out =
      "experiment_id,generator_ckpt,target_ckpt,dataset,attack_type,success_mode,"
      "xi,lambda0,manipulated_rate,preserved_rate,n_target_px,n_nontarget_px,"
      "efficiency_ratio,seed\n";
  for (const auto& r : reports) {
    out += r.experiment_id + "," + r.generator_ckpt + "," + r.target_ckpt + "," +
           r.dataset + ",";
    out += attack_type_name(r.attack_type) + "," + success_mode_name(r.success_mode) + ",";
    out += fmt_g(r.xi) + "," + fmt_g(r.lambda0) + ",";
    out += fmt_rate(r.manipulated_rate) + ",";
    out += r.failed ? "" : fmt_rate(r.preserved_rate);
    out += ",";
    out += std::to_string(r.n_target_pixels) + "," + std::to_string(r.n_nontarget_pixels);
    out += ",";
    if (r.efficiency_ratio) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(*r.efficiency_ratio));
      out += buf;
    }
    out += "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

void write_report_csv(const std::vector<MetricsReport>& reports, const std::string& path) {
  std::string csv = report_csv_string(reports);
  write_file(path, std::vector<uint8_t>(csv.begin(), csv.end()));
}

std::string config_fingerprint(const std::string& canonical) {
  uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace ssat
