#include "ssat/attack.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "ssat/image_io.hpp"
#include "ssat/nn_ops.hpp"
#include "ssat/rng.hpp"

namespace ssat {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::array<bool, 256> target_lookup(const std::vector<int>& target_classes, int c,
                                    const char* who) {
  require(!target_classes.empty(), std::string(who) + ": target_classes is empty");
  std::array<bool, 256> is_target{};
  int distinct = 0;
  for (int t : target_classes) {
    require(t >= 0 && t < c, std::string(who) + ": target class " + std::to_string(t) +
                                 " out of range for " + std::to_string(c) + " classes");
    if (!is_target[static_cast<size_t>(t)]) {
      is_target[static_cast<size_t>(t)] = true;
      ++distinct;
    }
  }
  require(distinct < c,
          std::string(who) + ": target classes cover every class, no destination left");
  return is_target;
}

// copy of image i of an n x c x h x w tensor (values only)
Tensor image_slice(const Tensor& nchw, int i) {
  const int c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
  const int64_t per = static_cast<int64_t>(c) * h * w;
  return Tensor::from_data(
      {c, h, w}, std::vector<float>(nchw.data() + i * per, nchw.data() + (i + 1) * per));
}

}  // namespace

std::string attack_type_name(AttackType t) {
  switch (t) {
    case AttackType::Vanish: return "vanish";
    case AttackType::Embed: return "embed";
    default: return "displace";
  }
}

AttackType attack_type_from_name(const std::string& name) {
  if (name == "vanish") return AttackType::Vanish;
  if (name == "embed") return AttackType::Embed;
  if (name == "displace") return AttackType::Displace;
  throw ConfigError("unknown attack_type '" + name + "'");
}

std::string success_mode_name(SuccessMode m) {
  switch (m) {
    case SuccessMode::Strict: return "strict";
    case SuccessMode::VanishMode: return "vanish";
    default: return "embed";
  }
}

SuccessMode success_mode_from_name(const std::string& name) {
  if (name == "strict") return SuccessMode::Strict;
  if (name == "vanish") return SuccessMode::VanishMode;
  if (name == "embed") return SuccessMode::EmbedMode;
  throw ConfigError("unknown success_mode '" + name + "'");
}

int64_t TargetMask::count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b != 0;
  return n;
}

SuccessMode AttackSpec::effective_success_mode() const {
  if (success_mode) return *success_mode;
  switch (attack_type) {
    case AttackType::Vanish: return SuccessMode::VanishMode;
    case AttackType::Embed: return SuccessMode::EmbedMode;
    default: return SuccessMode::Strict;
  }
}

void AttackSpec::validate(int num_classes) const {
  if (attack_type != AttackType::Embed) {
    if (target_classes.empty()) {
      throw ConfigError(attack_type_name(attack_type) +
                        " attack requires nonempty target_classes");
    }
    std::set<int> distinct;
    for (int t : target_classes) {
      if (t < 0 || t >= num_classes) {
        throw ConfigError("target class " + std::to_string(t) + " out of range");
      }
      distinct.insert(t);
    }
    if (static_cast<int>(distinct.size()) >= num_classes) {
      throw ConfigError("target_classes cover every class");
    }
  }
  if (attack_type != AttackType::Vanish) {
    if (fake_class < 0 || fake_class >= num_classes) {
      throw ConfigError("fake_class " + std::to_string(fake_class) + " out of range");
    }
    if (mask_source.kind == MaskSource::Kind::None) {
      throw ConfigError(attack_type_name(attack_type) + " attack requires a mask_source");
    }
  }
  if (attack_type == AttackType::Displace) {
    for (int t : target_classes) {
      if (t == fake_class) {
        throw ConfigError("displace fake_class must not be one of the target_classes");
      }
    }
  }
}

namespace {

json mask_source_to_json(const MaskSource& m) {
  json j;
  switch (m.kind) {
    case MaskSource::Kind::None:
      j["kind"] = "none";
      break;
    case MaskSource::Kind::Rect:
      j["kind"] = "rect";
      j["x0"] = m.x0;
      j["y0"] = m.y0;
      j["x1"] = m.x1;
      j["y1"] = m.y1;
      break;
    case MaskSource::Kind::Blobs:
      j["kind"] = "blobs";
      j["count"] = m.count;
      j["seed"] = m.seed;
      break;
    case MaskSource::Kind::File:
      j["kind"] = "file";
      j["path"] = m.path;
      break;
  }
  return j;
}

MaskSource mask_source_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) {
    throw ConfigError("mask_source: expected an object with a 'kind' field");
  }
  std::string kind = j["kind"].get<std::string>();
  MaskSource m;
  if (kind == "none") {
    check_known_keys(j, {"kind"}, "mask_source");
  } else if (kind == "rect") {
    check_known_keys(j, {"kind", "x0", "y0", "x1", "y1"}, "mask_source");
    m.kind = MaskSource::Kind::Rect;
    m.x0 = j.at("x0").get<float>();
    m.y0 = j.at("y0").get<float>();
    m.x1 = j.at("x1").get<float>();
    m.y1 = j.at("y1").get<float>();
  } else if (kind == "blobs") {
    check_known_keys(j, {"kind", "count", "seed"}, "mask_source");
    m.kind = MaskSource::Kind::Blobs;
    m.count = j.at("count").get<int>();
    if (j.contains("seed")) m.seed = j["seed"].get<uint64_t>();
  } else if (kind == "file") {
    check_known_keys(j, {"kind", "path"}, "mask_source");
    m.kind = MaskSource::Kind::File;
    m.path = j.at("path").get<std::string>();
  } else {
    throw ConfigError("mask_source: unknown kind '" + kind + "'");
  }
  return m;
}

}  // namespace

json attack_spec_to_json(const AttackSpec& spec) {
  json j;
  j["attack_type"] = attack_type_name(spec.attack_type);
  j["target_classes"] = spec.target_classes;
  j["fake_class"] = spec.fake_class;
  j["mask_source"] = mask_source_to_json(spec.mask_source);
  if (spec.success_mode) j["success_mode"] = success_mode_name(*spec.success_mode);
  return j;
}

AttackSpec attack_spec_from_json(const json& j) {
  check_known_keys(
      j, {"attack_type", "target_classes", "fake_class", "mask_source", "success_mode"},
      "attack_spec");
  AttackSpec spec;
  if (!j.contains("attack_type")) throw ConfigError("attack_spec: attack_type missing");
  spec.attack_type = attack_type_from_name(j["attack_type"].get<std::string>());
  if (j.contains("target_classes")) {
    spec.target_classes = j["target_classes"].get<std::vector<int>>();
  }
  if (j.contains("fake_class")) spec.fake_class = j["fake_class"].get<int>();
  if (j.contains("mask_source")) {
    spec.mask_source = mask_source_from_json(j["mask_source"]);
  }
  if (j.contains("success_mode")) {
    spec.success_mode = success_mode_from_name(j["success_mode"].get<std::string>());
  }
  return spec;
}

TargetMask render_mask(const MaskSource& src, int h, int w) {
  require(h > 0 && w > 0, "render_mask: empty canvas");
  TargetMask mask(h, w);
  switch (src.kind) {
    case MaskSource::Kind::None:
      throw ConfigError("render_mask: mask_source not set");
    case MaskSource::Kind::Rect: {
      if (!(src.x0 >= 0 && src.x0 < src.x1 && src.x1 <= 1 && src.y0 >= 0 &&
            src.y0 < src.y1 && src.y1 <= 1)) {
        throw ConfigError("rect mask needs 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
      }
      int iy0 = std::clamp(static_cast<int>(std::lround(src.y0 * h)), 0, h - 1);
      int iy1 = std::clamp(static_cast<int>(std::lround(src.y1 * h)), iy0 + 1, h);
      int ix0 = std::clamp(static_cast<int>(std::lround(src.x0 * w)), 0, w - 1);
      int ix1 = std::clamp(static_cast<int>(std::lround(src.x1 * w)), ix0 + 1, w);
      for (int y = iy0; y < iy1; ++y) {
        for (int x = ix0; x < ix1; ++x) mask.set(y, x, true);
      }
      break;
    }
    case MaskSource::Kind::Blobs: {
      if (src.count < 1) throw ConfigError("blobs mask needs count >= 1");
      Rng rng(src.seed);
      for (int b = 0; b < src.count; ++b) {
        float cy = rng.uniform(0.15f, 0.85f) * h;
        float cx = rng.uniform(0.15f, 0.85f) * w;
        float ry = std::max(1.5f, rng.uniform(0.08f, 0.18f) * h);
        float rx = std::max(1.5f, rng.uniform(0.08f, 0.18f) * w);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            float dy = (y - cy) / ry;
            float dx = (x - cx) / rx;
            if (dy * dy + dx * dx <= 1.0f) mask.set(y, x, true);
          }
        }
      }
      break;
    }
    case MaskSource::Kind::File: {
      auto bytes = read_file(src.path);
      int mh = 0, mw = 0;
      auto gray = decode_pgm(bytes, mh, mw, src.path);
      if (mh != h || mw != w) {
        throw std::runtime_error("mask '" + src.path + "' is " + std::to_string(mw) +
                                 "x" + std::to_string(mh) + ", scene is " +
                                 std::to_string(w) + "x" + std::to_string(h));
      }
      for (size_t i = 0; i < gray.size(); ++i) {
        if (gray[i] != 0 && gray[i] != 255) {
          throw std::runtime_error("mask '" + src.path +
                                   "' must be 0/255, found value " +
                                   std::to_string(gray[i]));
        }
        mask.bits[i] = gray[i] == 255;
      }
      break;
    }
  }
  return mask;
}

StealthyLabels map_vanish(const Tensor& logits, const std::vector<int>& target_classes) {
  require(logits.ndim() == 3, "map_vanish: logits must be c x h x w");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  auto is_target = target_lookup(target_classes, c, "map_vanish");
  const int64_t hw = static_cast<int64_t>(h) * w;
  const float* d = logits.data();

  StealthyLabels out;
  out.labels = LabelMap(h, w);
  out.mask = TargetMask(h, w);
  for (int64_t p = 0; p < hw; ++p) {
    int best = 0;
    float bv = d[p];
    for (int j = 1; j < c; ++j) {
      float v = d[static_cast<int64_t>(j) * hw + p];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    if (is_target[static_cast<size_t>(best)]) {
      int dest = -1;
      float dv = 0;
      for (int j = 0; j < c; ++j) {
        if (is_target[static_cast<size_t>(j)]) continue;
        float v = d[static_cast<int64_t>(j) * hw + p];
        if (dest < 0 || v > dv) {
          dv = v;
          dest = j;
        }
      }
      out.labels.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(dest);
      out.mask.bits[static_cast<size_t>(p)] = 1;
    } else {
      out.labels.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

StealthyLabels map_embed(const Tensor& logits, const TargetMask& mask, int fake_class) {
  require(logits.ndim() == 3, "map_embed: logits must be c x h x w");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  require(mask.h == h && mask.w == w, "map_embed: mask is " + std::to_string(mask.w) +
                                          "x" + std::to_string(mask.h) +
                                          ", logits are " + std::to_string(w) + "x" +
                                          std::to_string(h));
  require(fake_class >= 0 && fake_class < c, "map_embed: fake_class out of range");

  StealthyLabels out;
  out.labels = argmax_labels(logits);
  out.mask = mask;
  for (size_t p = 0; p < mask.bits.size(); ++p) {
    if (mask.bits[p]) out.labels.ids[p] = static_cast<uint8_t>(fake_class);
  }
  return out;
}

StealthyLabels map_displace(const Tensor& logits, const std::vector<int>& target_classes,
                            const TargetMask& mask, int fake_class) {
  StealthyLabels out = map_vanish(logits, target_classes);
  require(mask.h == out.mask.h && mask.w == out.mask.w, "map_displace: mask size mismatch");
  require(fake_class >= 0 && fake_class < logits.dim(0),
          "map_displace: fake_class out of range");
  // embed wins where the regions overlap
  for (size_t p = 0; p < mask.bits.size(); ++p) {
    if (mask.bits[p]) {
      out.labels.ids[p] = static_cast<uint8_t>(fake_class);
      out.mask.bits[p] = 1;
    }
  }
  return out;
}

StealthyLabels map_labels(const Tensor& logits, const AttackSpec& spec,
                          const TargetMask* embed_mask) {
  switch (spec.attack_type) {
    case AttackType::Vanish:
      return map_vanish(logits, spec.target_classes);
    case AttackType::Embed:
      require(embed_mask != nullptr, "map_labels: embed attack needs a rendered mask");
      return map_embed(logits, *embed_mask, spec.fake_class);
    default:
      require(embed_mask != nullptr, "map_labels: displace attack needs a rendered mask");
      return map_displace(logits, spec.target_classes, *embed_mask, spec.fake_class);
  }
}

bool manipulated_pixel_ok(const AttackSpec& spec, SuccessMode mode, uint8_t adv_label,
                          uint8_t stealthy_label) {
  switch (mode) {
    case SuccessMode::Strict:
      return adv_label == stealthy_label;
    case SuccessMode::VanishMode:
      for (int t : spec.target_classes) {
        if (adv_label == t) return false;
      }
      return true;
    default:
      return adv_label == spec.fake_class;
  }
}

Tensor scale_perturbation(const Tensor& raw, float xi) {
  require(xi > 0.0f, "scale_perturbation: xi must be > 0");
  return scale(tanh(raw), xi);
}

Tensor apply_perturbation(const Tensor& image, const Tensor& p) {
  require(image.shape() == p.shape(), "apply_perturbation: shape mismatch");
  return clamp(add(image, p), 0.0f, 255.0f);
}

Tensor adversarial_loss(const Tensor& logits, const std::vector<StealthyLabels>& stealthy,
                        float w_t, float w_nt) {
  require(w_t >= 0.0f && w_nt >= 0.0f, "adversarial_loss: negative weights");
  require(logits.ndim() == 4, "adversarial_loss: logits must be n x c x h x w");
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  require(static_cast<int>(stealthy.size()) == n,
          "adversarial_loss: " + std::to_string(stealthy.size()) +
              " stealthy maps for batch of " + std::to_string(n));
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const auto& s = stealthy[static_cast<size_t>(i)];
    require(s.labels.h == h && s.labels.w == w && s.mask.h == h && s.mask.w == w,
            "adversarial_loss: stealthy map size mismatch at image " + std::to_string(i));
  }

  const bool recording = Graph::current() != nullptr && logits.requires_grad();
  std::shared_ptr<std::vector<float>> probs;
  if (recording) probs = std::make_shared<std::vector<float>>(logits.numel());

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* base = logits.data() + static_cast<int64_t>(i) * c * hw;
    const auto& s = stealthy[static_cast<size_t>(i)];
    for (int64_t p = 0; p < hw; ++p) {
      int y = s.labels.ids[static_cast<size_t>(p)];
      require(y < c, "adversarial_loss: stealthy label out of range");
      float wgt = s.mask.bits[static_cast<size_t>(p)] ? w_t : w_nt;
      float m = base[p];
      for (int j = 1; j < c; ++j) m = std::max(m, base[static_cast<int64_t>(j) * hw + p]);
      double sum = 0.0;
      for (int j = 0; j < c; ++j) {
        sum += std::exp(static_cast<double>(base[static_cast<int64_t>(j) * hw + p] - m));
      }
      double logp = static_cast<double>(base[static_cast<int64_t>(y) * hw + p] - m) -
                    std::log(sum);
      total -= static_cast<double>(wgt) * logp;
      if (recording) {
        float* pr = probs->data() + static_cast<int64_t>(i) * c * hw;
        for (int j = 0; j < c; ++j) {
          pr[static_cast<int64_t>(j) * hw + p] = static_cast<float>(
              std::exp(static_cast<double>(base[static_cast<int64_t>(j) * hw + p] - m)) /
              sum);
        }
      }
    }
  }

  Tensor out = Tensor::from_data({1}, {static_cast<float>(total)});
  if (logits.has_hp()) {
    HpView hl(logits);
    double htotal = 0.0;
    for (int i = 0; i < n; ++i) {
      const int64_t base = static_cast<int64_t>(i) * c * hw;
      const auto& s = stealthy[static_cast<size_t>(i)];
      for (int64_t p = 0; p < hw; ++p) {
        int y = s.labels.ids[static_cast<size_t>(p)];
        double wgt = s.mask.bits[static_cast<size_t>(p)] ? static_cast<double>(w_t)
                                                         : static_cast<double>(w_nt);
        double m = hl[base + p];
        for (int j = 1; j < c; ++j) m = std::max(m, hl[base + static_cast<int64_t>(j) * hw + p]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(hl[base + static_cast<int64_t>(j) * hw + p] - m);
        htotal -= wgt * (hl[base + static_cast<int64_t>(y) * hw + p] - m - std::log(sum));
      }
    }
    out.enable_hp();
    out.hp_data()[0] = htotal;
  }
  if (recording) {
    out.set_requires_grad(true);
    Graph::current()->record([logits, stealthy, out, probs, w_t, w_nt]() mutable {
      const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
      const int64_t hw = static_cast<int64_t>(h) * w;
      float gup = out.grad_span()[0];
      logits.ensure_grad();
      float* gl = logits.grad_span().data();
      for (int i = 0; i < n; ++i) {
        const float* pr = probs->data() + static_cast<int64_t>(i) * c * hw;
        float* gbase = gl + static_cast<int64_t>(i) * c * hw;
        const auto& s = stealthy[static_cast<size_t>(i)];
        for (int64_t p = 0; p < hw; ++p) {
          int y = s.labels.ids[static_cast<size_t>(p)];
          float wgt = s.mask.bits[static_cast<size_t>(p)] ? w_t : w_nt;
          if (wgt == 0.0f) continue;
          float gw = gup * wgt;
          for (int j = 0; j < c; ++j) {
            float d = pr[static_cast<int64_t>(j) * hw + p] - (j == y ? 1.0f : 0.0f);
            gbase[static_cast<int64_t>(j) * hw + p] += gw * d;
          }
        }
      }
    });
  }
  return out;
}

Tensor regularizer_loss(const Tensor& logits, const std::vector<LabelMap>& y) {
  return cross_entropy_pixelwise(logits, y);
}

Tensor total_loss(const Tensor& adv, const Tensor& reg, float lambda0) {
  require(lambda0 >= 0.0f, "total_loss: lambda0 must be >= 0");
  require(adv.numel() == 1 && reg.numel() == 1, "total_loss: losses must be scalars");
  return add(adv, scale(reg, lambda0));
}

void AttackTrainConfig::validate() const {
  if (!(xi > 0.0f)) throw ConfigError("xi must be > 0");
  if (lambda0 < 0.0f) throw ConfigError("lambda0 must be >= 0");
  if (target_weight < 0.0f || preserve_weight < 0.0f) {
    throw ConfigError("class weights must be >= 0");
  }
  if (lr <= 0.0f) throw ConfigError("lr must be > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

json attack_train_config_to_json(const AttackTrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["batch"] = cfg.batch;
  j["lambda0"] = cfg.lambda0;
  j["xi"] = cfg.xi;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["target_weight"] = cfg.target_weight;
  j["preserve_weight"] = cfg.preserve_weight;
  j["regularizer_enabled"] = cfg.regularizer_enabled;
  return j;
}

AttackTrainConfig attack_train_config_from_json(const json& j) {
  check_known_keys(j,
                   {"lr", "batch", "lambda0", "xi", "epochs", "seed", "target_weight",
                    "preserve_weight", "regularizer_enabled"},
                   "train_config");
  AttackTrainConfig cfg;
  if (j.contains("lr")) cfg.lr = j["lr"].get<float>();
  if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
  if (j.contains("lambda0")) cfg.lambda0 = j["lambda0"].get<float>();
  if (j.contains("xi")) cfg.xi = j["xi"].get<float>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("target_weight")) cfg.target_weight = j["target_weight"].get<float>();
  if (j.contains("preserve_weight")) {
    cfg.preserve_weight = j["preserve_weight"].get<float>();
  }
  if (j.contains("regularizer_enabled")) {
    cfg.regularizer_enabled = j["regularizer_enabled"].get<bool>();
  }
  cfg.validate();
  return cfg;
}

TrainHistory train_attack(Model& generator, const Model& target, const Dataset& data,
                          const AttackSpec& spec, const AttackTrainConfig& cfg,
                          const std::function<void(int, const TrainHistory&)>& on_epoch) {
  cfg.validate();
  const int num_classes = data.config().num_classes;
  spec.validate(num_classes);
  require(target.frozen, "train_attack: target must be frozen");
  require(target.config.kind == ModelKind::TargetFCN, "train_attack: target kind");
  require(generator.config.kind == ModelKind::GeneratorUNet, "train_attack: generator kind");
  require(generator.config.num_classes == num_classes &&
              target.config.num_classes == num_classes,
          "train_attack: class count mismatch between models and dataset");

  const int h = data.config().height;
  const int w = data.config().width;
  TargetMask embed_mask;
  const TargetMask* mask_ptr = nullptr;
  if (spec.attack_type != AttackType::Vanish) {
    embed_mask = render_mask(spec.mask_source, h, w);
    mask_ptr = &embed_mask;
  }

  OptimizerState opt;
  opt.kind = OptimizerKind::Adam;
  opt.learning_rate = cfg.lr;
  NamedTensors train_params;
  for (auto& [name, t] : generator.params) {
    if (!cfg.regularizer_enabled && name.rfind("reg_head.", 0) == 0) continue;
    train_params.emplace_back(name, t);
  }

  const SuccessMode mode = spec.effective_success_mode();
  std::vector<int> order = data.train_indices();
  require(!order.empty(), "train_attack: dataset has no train split");
  Rng shuffle_rng(cfg.seed, 0x73687566666c65ull);

  TrainHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum_adv = 0, sum_reg = 0, sum_tot = 0;
    int64_t n_target = 0, n_manip = 0, n_nontarget = 0, n_pres = 0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<int> idx(order.begin() + static_cast<long>(start),
                           order.begin() + static_cast<long>(end));
      const int nb = static_cast<int>(idx.size());
      Tensor x = batch_images(data, idx);
      std::vector<LabelMap> y = batch_labels(data, idx);

      Tensor l_x;
      {
        Graph::NoGrad ng;  // clean logits only produce labels
        l_x = forward_target(target, x);
      }
      std::vector<LabelMap> clean_pred = argmax_labels_batch(l_x);
      std::vector<StealthyLabels> st;
      st.reserve(static_cast<size_t>(nb));
      for (int i = 0; i < nb; ++i) {
        st.push_back(map_labels(image_slice(l_x, i), spec, mask_ptr));
      }

      Graph graph;
      Tensor lhat;
      {
        Graph::Recording rec(graph);
        GeneratorOutput go = forward_generator(generator, x);
        Tensor p = scale_perturbation(go.raw_perturbation, cfg.xi);
        Tensor xhat = apply_perturbation(x, p);
        lhat = forward_target(target, xhat);
        Tensor adv = adversarial_loss(lhat, st, cfg.target_weight, cfg.preserve_weight);
        Tensor tot;
        if (cfg.regularizer_enabled) {
          Tensor reg = regularizer_loss(go.regularizer_logits, y);
          tot = total_loss(adv, reg, cfg.lambda0);
          sum_reg += reg.item();
        } else {
          tot = adv;
        }
        sum_adv += adv.item();
        sum_tot += tot.item();
        graph.backward(tot);
      }
      optimizer_step(opt, train_params);

      std::vector<LabelMap> adv_pred = argmax_labels_batch(lhat);
      for (int i = 0; i < nb; ++i) {
        const auto& s = st[static_cast<size_t>(i)];
        const auto& ap = adv_pred[static_cast<size_t>(i)];
        const auto& cp = clean_pred[static_cast<size_t>(i)];
        for (int64_t p = 0; p < s.mask.h * static_cast<int64_t>(s.mask.w); ++p) {
          if (s.mask.bits[static_cast<size_t>(p)]) {
            ++n_target;
            n_manip += manipulated_pixel_ok(spec, mode, ap.ids[static_cast<size_t>(p)],
                                            s.labels.ids[static_cast<size_t>(p)]);
          } else {
            ++n_nontarget;
            n_pres += ap.ids[static_cast<size_t>(p)] == cp.ids[static_cast<size_t>(p)];
          }
        }
      }
    }

    EpochStats es;
    es.epoch = epoch;
    const double n_imgs = static_cast<double>(order.size());
    es.adv_loss = static_cast<float>(sum_adv / n_imgs);
    es.reg_loss = static_cast<float>(sum_reg / n_imgs);
    es.total_loss = static_cast<float>(sum_tot / n_imgs);
    es.manipulated =
        n_target > 0 ? static_cast<float>(static_cast<double>(n_manip) / n_target) : 0.0f;
    es.preserved = n_nontarget > 0
                       ? static_cast<float>(static_cast<double>(n_pres) / n_nontarget)
                       : 0.0f;
    hist.epochs.push_back(es);
    if (on_epoch) on_epoch(epoch, hist);
  }
  return hist;
}

void PretrainConfig::validate() const {
  if (lr <= 0.0f) throw ConfigError("lr must be > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
}

json pretrain_config_to_json(const PretrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["batch"] = cfg.batch;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["base_width"] = cfg.base_width;
  j["width_multiplier"] = cfg.width_multiplier;
  return j;
}

PretrainConfig pretrain_config_from_json(const json& j) {
  check_known_keys(j, {"lr", "batch", "epochs", "seed", "base_width", "width_multiplier"},
                   "pretrain_config");
  PretrainConfig cfg;
  if (j.contains("lr")) cfg.lr = j["lr"].get<float>();
  if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("base_width")) cfg.base_width = j["base_width"].get<int>();
  if (j.contains("width_multiplier")) {
    cfg.width_multiplier = j["width_multiplier"].get<float>();
  }
  cfg.validate();
  return cfg;
}

PretrainResult pretrain_target(const Dataset& data, const PretrainConfig& cfg) {
  cfg.validate();
  ModelConfig mc;
  mc.kind = ModelKind::TargetFCN;
  mc.num_classes = data.config().num_classes;
  mc.base_width = cfg.base_width;
  mc.width_multiplier = cfg.width_multiplier;

  PretrainResult res;
  res.model = build_target_fcn(mc, cfg.seed);

  OptimizerState opt;
  opt.kind = OptimizerKind::Adam;
  opt.learning_rate = cfg.lr;

  std::vector<int> order = data.train_indices();
  require(!order.empty(), "pretrain_target: dataset has no train split");
  Rng shuffle_rng(cfg.seed, 0x70726574726169ull);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum_loss = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      std::vector<int> idx(order.begin() + static_cast<long>(start),
                           order.begin() + static_cast<long>(end));
      Tensor x = batch_images(data, idx);
      std::vector<LabelMap> y = batch_labels(data, idx);

      Graph graph;
      {
        Graph::Recording rec(graph);
        Tensor logits = forward_target(res.model, x);
        Tensor loss = cross_entropy_pixelwise(logits, y);
        sum_loss += loss.item();
        graph.backward(loss);
      }
      optimizer_step(opt, res.model.params);
    }
    res.epoch_loss.push_back(static_cast<float>(sum_loss / static_cast<double>(order.size())));
  }

  auto test_idx = data.test_indices();
  res.test_pixel_accuracy =
      test_idx.empty() ? 0.0f : pixel_accuracy(res.model, data, test_idx);
  return res;
}

float pixel_accuracy(const Model& model, const Dataset& data,
                     const std::vector<int>& indices) {
  require(!indices.empty(), "pixel_accuracy: no samples");
  int64_t correct = 0, total = 0;
  const size_t chunk = 16;
  for (size_t start = 0; start < indices.size(); start += chunk) {
    size_t end = std::min(indices.size(), start + chunk);
    std::vector<int> idx(indices.begin() + static_cast<long>(start),
                         indices.begin() + static_cast<long>(end));
    Tensor x = batch_images(data, idx);
    Tensor logits;
    {
      Graph::NoGrad ng;
      logits = forward_target(model, x);
    }
    std::vector<LabelMap> pred = argmax_labels_batch(logits);
    for (size_t i = 0; i < idx.size(); ++i) {
      const LabelMap& truth = data.sample(idx[i]).labels;
      for (size_t p = 0; p < truth.ids.size(); ++p) {
        correct += pred[i].ids[p] == truth.ids[p];
        ++total;
      }
    }
  }
  return static_cast<float>(static_cast<double>(correct) / static_cast<double>(total));
}

}  // namespace ssat
