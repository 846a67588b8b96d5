#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssat/attack.hpp"
#include "ssat/image_io.hpp"
#include "ssat/nn_ops.hpp"
#include "ssat/scenes.hpp"
#include "test_util.hpp"

using namespace ssat;
using testutil::rand_tensor;
using testutil::same_bytes;

namespace fs = std::filesystem;

namespace {

float scalar(const Tensor& t) {
  REQUIRE(t.numel() == 1);
  return t.data()[0];
}

// independent per-pixel recomputation of the stealthy relabeling rules
struct PixelOracle {
  int argmax;
  int best_nontarget;
};

PixelOracle oracle_pixel(const Tensor& logits, int64_t p, const std::vector<int>& targets) {
  const int c = logits.dim(0);
  const int64_t hw = static_cast<int64_t>(logits.dim(1)) * logits.dim(2);
  const float* d = logits.data();
  auto in_targets = [&](int j) {
    for (int t : targets) {
      if (t == j) return true;
    }
    return false;
  };
  PixelOracle o{0, -1};
  for (int j = 1; j < c; ++j) {
    if (d[j * hw + p] > d[o.argmax * hw + p]) o.argmax = j;
  }
  for (int j = 0; j < c; ++j) {
    if (in_targets(j)) continue;
    if (o.best_nontarget < 0 || d[j * hw + p] > d[o.best_nontarget * hw + p]) {
      o.best_nontarget = j;
    }
  }
  return o;
}

SceneConfig tiny_scene(uint64_t seed) {
  SceneConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.seed = seed;
  return cfg;
}

std::string tiny_dataset(const std::string& name, uint64_t seed, int n_train = 4,
                         int n_test = 2) {
  fs::path dir = fs::temp_directory_path() / "ssat_test_attack" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  generate_dataset(tiny_scene(seed), n_train, n_test, dir.string());
  return dir.string();
}

ModelConfig tiny_model_cfg(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.num_classes = 8;
  c.base_width = 8;
  c.width_multiplier = 0.5f;
  return c;
}

AttackSpec vanish_spec() {
  AttackSpec spec;
  spec.attack_type = AttackType::Vanish;
  spec.target_classes = {kPerson, kRider};
  return spec;
}

}  // namespace

TEST_CASE("scale_perturbation pins the max norm to xi") {
  Tensor z = Tensor::zeros({1, 3, 2, 2});
  CHECK(same_bytes(scale_perturbation(z, 10.0f), z));

  Tensor one = Tensor::from_data({1}, {1.0f});
  CHECK(scalar(scale_perturbation(one, 10.0f)) ==
        doctest::Approx(7.615942f).epsilon(1e-5));

  Tensor big = Tensor::from_data({2}, {100.0f, -100.0f});
  Tensor sat = scale_perturbation(big, 10.0f);
  CHECK(sat.values()[0] == doctest::Approx(10.0f).epsilon(1e-6));
  CHECK(sat.values()[1] == doctest::Approx(-10.0f).epsilon(1e-6));

  Rng rng(3);
  for (float xi : {4.0f, 6.0f, 8.0f, 10.0f}) {
    Tensor raw = rand_tensor({2, 3, 4, 4}, rng, -50.0f, 50.0f);
    Tensor scaled = scale_perturbation(raw, xi);
    for (float s : scaled.values()) {
      CHECK(std::abs(s) <= xi);
    }
  }
}

TEST_CASE("apply_perturbation adds then clamps to the image range") {
  Tensor img = Tensor::from_data({1, 1, 1, 3}, {250.0f, 5.0f, 100.0f});
  Tensor p = Tensor::from_data({1, 1, 1, 3}, {10.0f, -10.0f, 3.0f});
  Tensor adv = apply_perturbation(img, p);
  auto v = adv.values();
  CHECK(v[0] == 255.0f);
  CHECK(v[1] == 0.0f);
  CHECK(v[2] == 103.0f);
}

TEST_CASE("mapper hand cases") {
  // 4 classes, 1 x 4 pixels, targets {1}
  // p0: plain class-2 pixel, p1: target wins with class 3 runner-up,
  // p2: target wins with class 0 runner-up, p3: all-equal tie
  Tensor logits = Tensor::from_data({4, 1, 4}, {
      0.1f, 0.2f, 1.5f, 0.0f,   // class 0
      0.9f, 5.0f, 2.0f, 0.0f,   // class 1 (target)
      2.0f, 1.0f, 1.0f, 0.0f,   // class 2
      0.3f, 3.0f, 0.5f, 0.0f,   // class 3
  });

  StealthyLabels sv = map_vanish(logits, {1});
  CHECK(sv.labels.ids == std::vector<uint8_t>{2, 3, 0, 0});
  CHECK(sv.mask.bits == std::vector<uint8_t>{0, 1, 1, 0});

  TargetMask m(1, 4);
  m.set(0, 0, true);
  m.set(0, 3, true);
  StealthyLabels se = map_embed(logits, m, 3);
  CHECK(se.labels.ids == std::vector<uint8_t>{3, 1, 1, 3});
  CHECK(se.mask.bits == std::vector<uint8_t>{1, 0, 0, 1});

  StealthyLabels sd = map_displace(logits, {1}, m, 2);
  // vanish relabels p1, p2; embed overrides p0, p3
  CHECK(sd.labels.ids == std::vector<uint8_t>{2, 3, 0, 2});
  CHECK(sd.mask.bits == std::vector<uint8_t>{1, 1, 1, 1});

  CHECK_THROWS_AS(map_embed(logits, TargetMask(2, 4), 3), std::invalid_argument);
  CHECK_THROWS_AS(map_embed(logits, m, 4), std::invalid_argument);
}

TEST_CASE("mapper brute force over randomized logits") {
  Rng rng(17);
  for (int iter = 0; iter < 300; ++iter) {
    const int c = static_cast<int>(rng.uniform_int(3, 8));
    const int h = 4, w = 4;
    Tensor logits = rand_tensor({c, h, w}, rng, -5.0f, 5.0f);

    int n_targets = static_cast<int>(rng.uniform_int(1, c - 2 > 0 ? c - 2 : 1));
    std::vector<int> pool(c);
    for (int j = 0; j < c; ++j) pool[j] = j;
    rng.shuffle(pool);
    std::vector<int> targets(pool.begin(), pool.begin() + n_targets);
    int fake = pool[static_cast<size_t>(n_targets)];  // guaranteed non-target

    TargetMask mask(h, w);
    for (auto& b : mask.bits) b = rng.next_u64() & 1;

    StealthyLabels sv = map_vanish(logits, targets);
    StealthyLabels se = map_embed(logits, mask, fake);
    StealthyLabels sd = map_displace(logits, targets, mask, fake);

    for (int64_t p = 0; p < h * w; ++p) {
      PixelOracle o = oracle_pixel(logits, p, targets);
      bool is_target = false;
      for (int t : targets) is_target = is_target || o.argmax == t;

      // vanish: targets get the runner-up, everything else is untouched
      if (is_target) {
        REQUIRE(sv.labels.ids[p] == o.best_nontarget);
        REQUIRE(sv.mask.bits[p] == 1);
      } else {
        REQUIRE(sv.labels.ids[p] == o.argmax);
        REQUIRE(sv.mask.bits[p] == 0);
      }
      for (int t : targets) REQUIRE(sv.labels.ids[p] != t);

      // embed: fake class exactly on the mask
      REQUIRE(se.labels.ids[p] == (mask.bits[p] ? fake : o.argmax));
      REQUIRE(se.mask.bits[p] == mask.bits[p]);

      // displace: embed wins on the mask, vanish elsewhere
      REQUIRE(sd.labels.ids[p] == (mask.bits[p] ? fake : sv.labels.ids[p]));
      REQUIRE(sd.mask.bits[p] == (mask.bits[p] || sv.mask.bits[p] ? 1 : 0));
    }
  }
}

TEST_CASE("adversarial_loss agrees with generic cross entropy") {
  Rng rng(29);
  for (int iter = 0; iter < 20; ++iter) {
    const int n = 2, c = 4, h = 4, w = 4;
    Tensor logits = rand_tensor({n, c, h, w}, rng, -4.0f, 4.0f);
    float w_t = rng.uniform(0.0f, 3.0f);
    float w_nt = rng.uniform(0.0f, 3.0f);

    std::vector<StealthyLabels> stealthy(n);
    std::vector<LabelMap> labels;
    std::vector<float> weights;
    for (int i = 0; i < n; ++i) {
      stealthy[i].labels = LabelMap(h, w);
      stealthy[i].mask = TargetMask(h, w);
      for (int64_t p = 0; p < h * w; ++p) {
        stealthy[i].labels.ids[p] = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
        stealthy[i].mask.bits[p] = rng.next_u64() & 1;
        weights.push_back(stealthy[i].mask.bits[p] ? w_t : w_nt);
      }
      labels.push_back(stealthy[i].labels);
    }

    float ours = scalar(adversarial_loss(logits, stealthy, w_t, w_nt));
    float generic = scalar(cross_entropy_pixelwise(logits, labels, weights));
    REQUIRE(std::abs(ours - generic) <= 1e-6f * std::max(1.0f, std::abs(generic)));
  }
}

TEST_CASE("adversarial_loss hand values and weight annihilation") {
  // uniform 4-class logits: CE is ln 4 at every pixel
  Tensor logits = Tensor::zeros({1, 4, 1, 2});
  std::vector<StealthyLabels> st(1);
  st[0].labels = LabelMap(1, 2, 1);
  st[0].mask = TargetMask(1, 2);
  st[0].mask.set(0, 0, true);

  const float ln4 = std::log(4.0f);
  CHECK(scalar(adversarial_loss(logits, st, 2.0f, 1.0f)) ==
        doctest::Approx(3.0f * ln4).epsilon(1e-6));
  CHECK(scalar(adversarial_loss(logits, st, 2.0f, 0.0f)) ==
        doctest::Approx(2.0f * ln4).epsilon(1e-6));
  CHECK(scalar(adversarial_loss(logits, st, 0.0f, 0.0f)) == 0.0f);
}

TEST_CASE("regularizer_loss is plain pixelwise cross entropy") {
  Tensor logits = Tensor::zeros({1, 8, 1, 2});
  std::vector<LabelMap> y{LabelMap(1, 2, 3)};
  CHECK(scalar(regularizer_loss(logits, y)) ==
        doctest::Approx(2.0f * std::log(8.0f)).epsilon(1e-6));

  Rng rng(31);
  Tensor r = rand_tensor({2, 8, 4, 4}, rng, -3.0f, 3.0f);
  std::vector<LabelMap> y2{LabelMap(4, 4, 5), LabelMap(4, 4, 0)};
  CHECK(scalar(regularizer_loss(r, y2)) ==
        doctest::Approx(scalar(cross_entropy_pixelwise(r, y2))).epsilon(1e-6));
}

TEST_CASE("total_loss composes adv + lambda0 * reg") {
  Tensor adv = Tensor::from_data({1}, {1.0f});
  Tensor reg = Tensor::from_data({1}, {2.0f});
  CHECK(scalar(total_loss(adv, reg, 1e-2f)) == doctest::Approx(1.02f).epsilon(1e-6));
  CHECK(scalar(total_loss(adv, reg, 0.0f)) == 1.0f);

  // gradient splits 1 : lambda0
  adv.set_requires_grad(true);
  reg.set_requires_grad(true);
  adv.clear_grad();
  reg.clear_grad();
  Graph g;
  {
    Graph::Recording rec(g);
    Tensor t = total_loss(adv, reg, 0.25f);
    g.backward(t);
  }
  CHECK(adv.grad_span()[0] == 1.0f);
  CHECK(reg.grad_span()[0] == 0.25f);
}

TEST_CASE("composite loss gradient survives a finite difference check") {
  // d(total)/d(logit) for the adversarial branch, against central differences
  Rng rng(37);
  Tensor logits = rand_tensor({1, 4, 2, 2}, rng, -2.0f, 2.0f, true);
  std::vector<StealthyLabels> st(1);
  st[0].labels = LabelMap(2, 2, 2);
  st[0].mask = TargetMask(2, 2);
  st[0].mask.set(0, 1, true);
  st[0].mask.set(1, 0, true);

  auto loss_at = [&]() {
    Tensor adv = adversarial_loss(logits, st, 1.5f, 0.5f);
    std::vector<LabelMap> y{LabelMap(2, 2, 1)};
    Tensor reg = cross_entropy_pixelwise(logits, y);
    return total_loss(adv, reg, 1e-2f);
  };

  logits.clear_grad();
  Graph g;
  {
    Graph::Recording rec(g);
    Tensor loss = loss_at();
    g.backward(loss);
  }
  std::vector<float> analytic(logits.grad_span().begin(), logits.grad_span().end());

  float* d = logits.data();
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const float eps = 1e-3f;
    float keep = d[i];
    d[i] = keep + eps;
    float up = scalar(loss_at());
    d[i] = keep - eps;
    float down = scalar(loss_at());
    d[i] = keep;
    float fd = (up - down) / (2 * eps);
    REQUIRE(std::abs(fd - analytic[static_cast<size_t>(i)]) <=
            1e-3f * std::max(1.0f, std::abs(fd)));
  }
}

TEST_CASE("attack spec validation catches contradictions") {
  AttackSpec s = vanish_spec();
  CHECK_NOTHROW(s.validate(8));

  s.target_classes = {};
  CHECK_THROWS_AS(s.validate(8), ConfigError);
  s.target_classes = {9};
  CHECK_THROWS_AS(s.validate(8), ConfigError);
  s.target_classes = {0, 1, 2, 3, 4, 5, 6, 7};
  CHECK_THROWS_AS(s.validate(8), ConfigError);

  AttackSpec e;
  e.attack_type = AttackType::Embed;
  e.fake_class = 5;
  CHECK_THROWS_AS(e.validate(8), ConfigError);  // no mask source
  e.mask_source.kind = MaskSource::Kind::Rect;
  e.mask_source.x1 = e.mask_source.y1 = 0.5f;
  CHECK_NOTHROW(e.validate(8));
  e.fake_class = -1;
  CHECK_THROWS_AS(e.validate(8), ConfigError);

  AttackSpec d;
  d.attack_type = AttackType::Displace;
  d.target_classes = {5, 6};
  d.fake_class = 5;
  d.mask_source.kind = MaskSource::Kind::Rect;
  d.mask_source.x1 = d.mask_source.y1 = 0.5f;
  CHECK_THROWS_AS(d.validate(8), ConfigError);  // fake inside targets
  d.fake_class = 4;
  CHECK_NOTHROW(d.validate(8));

  CHECK(vanish_spec().effective_success_mode() == SuccessMode::VanishMode);
  CHECK(e.effective_success_mode() == SuccessMode::EmbedMode);
  CHECK(d.effective_success_mode() == SuccessMode::Strict);
  d.success_mode = SuccessMode::VanishMode;
  CHECK(d.effective_success_mode() == SuccessMode::VanishMode);
}

TEST_CASE("attack spec and train config json round trips") {
  AttackSpec d;
  d.attack_type = AttackType::Displace;
  d.target_classes = {5, 6};
  d.fake_class = 4;
  d.mask_source.kind = MaskSource::Kind::Blobs;
  d.mask_source.count = 2;
  d.mask_source.seed = 77;
  d.success_mode = SuccessMode::Strict;

  AttackSpec back = attack_spec_from_json(attack_spec_to_json(d));
  CHECK(back.attack_type == AttackType::Displace);
  CHECK(back.target_classes == std::vector<int>{5, 6});
  CHECK(back.fake_class == 4);
  CHECK(back.mask_source.kind == MaskSource::Kind::Blobs);
  CHECK(back.mask_source.count == 2);
  CHECK(back.mask_source.seed == 77);
  REQUIRE(back.success_mode.has_value());
  CHECK(*back.success_mode == SuccessMode::Strict);

  AttackSpec v = vanish_spec();
  AttackSpec vback = attack_spec_from_json(attack_spec_to_json(v));
  CHECK_FALSE(vback.success_mode.has_value());

  json j = attack_spec_to_json(v);
  j["targets"] = {1};
  CHECK_THROWS_AS(attack_spec_from_json(j), ConfigError);

  AttackTrainConfig cfg;
  cfg.lr = 5e-4f;
  cfg.lambda0 = 0.5f;
  cfg.xi = 6.0f;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.regularizer_enabled = false;
  AttackTrainConfig cback = attack_train_config_from_json(attack_train_config_to_json(cfg));
  CHECK(cback.lr == 5e-4f);
  CHECK(cback.lambda0 == 0.5f);
  CHECK(cback.xi == 6.0f);
  CHECK(cback.epochs == 3);
  CHECK(cback.seed == 9);
  CHECK_FALSE(cback.regularizer_enabled);

  CHECK_THROWS_AS([] {
    AttackTrainConfig bad;
    bad.xi = 0.0f;
    bad.validate();
  }(), ConfigError);
}

TEST_CASE("render_mask covers rect, blobs and file sources") {
  MaskSource rect;
  rect.kind = MaskSource::Kind::Rect;
  rect.x0 = rect.y0 = 0.25f;
  rect.x1 = rect.y1 = 0.75f;
  TargetMask m = render_mask(rect, 8, 8);
  CHECK(m.count() == 16);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK(m.test(y, x) == (y >= 2 && y < 6 && x >= 2 && x < 6));
    }
  }

  MaskSource bad_rect = rect;
  bad_rect.x1 = 1.5f;
  CHECK_THROWS_AS(render_mask(bad_rect, 8, 8), ConfigError);
  bad_rect = rect;
  bad_rect.x1 = bad_rect.x0;
  CHECK_THROWS_AS(render_mask(bad_rect, 8, 8), ConfigError);

  MaskSource blobs;
  blobs.kind = MaskSource::Kind::Blobs;
  blobs.count = 2;
  blobs.seed = 5;
  TargetMask b1 = render_mask(blobs, 32, 32);
  TargetMask b2 = render_mask(blobs, 32, 32);
  CHECK(b1 == b2);
  CHECK(b1.count() > 0);
  CHECK(b1.count() < 32 * 32);
  blobs.count = 0;
  CHECK_THROWS_AS(render_mask(blobs, 32, 32), ConfigError);

  fs::path dir = fs::temp_directory_path() / "ssat_test_attack";
  fs::create_directories(dir);
  std::vector<uint8_t> gray(16 * 16, 0);
  for (int i = 0; i < 16; ++i) gray[static_cast<size_t>(i)] = 255;
  std::string mask_path = (dir / "mask.pgm").string();
  write_file(mask_path, encode_pgm(16, 16, gray));

  MaskSource file;
  file.kind = MaskSource::Kind::File;
  file.path = mask_path;
  TargetMask fm = render_mask(file, 16, 16);
  CHECK(fm.count() == 16);
  CHECK(fm.test(0, 5));
  CHECK_FALSE(fm.test(1, 5));

  CHECK(testutil::message_of([&] { render_mask(file, 32, 32); }).find("16x16") !=
        std::string::npos);

  gray[0] = 128;
  write_file(mask_path, encode_pgm(16, 16, gray));
  CHECK(testutil::message_of([&] { render_mask(file, 16, 16); }).find("0/255") !=
        std::string::npos);

  MaskSource none;
  CHECK_THROWS_AS(render_mask(none, 8, 8), ConfigError);
}

TEST_CASE("train_attack contract: freezing, determinism, zero epochs") {
  std::string dir = tiny_dataset("train_contract", 41);
  Dataset data = Dataset::open(dir);

  Model target = build_target_fcn(tiny_model_cfg(ModelKind::TargetFCN), 1);
  AttackSpec spec = vanish_spec();
  AttackTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.lr = 1e-3f;
  cfg.seed = 3;

  // unfrozen target is rejected
  Model gen = build_generator_unet(tiny_model_cfg(ModelKind::GeneratorUNet), 2);
  CHECK_THROWS_AS(train_attack(gen, target, data, spec, cfg), std::invalid_argument);

  freeze(target);
  std::vector<std::vector<float>> target_before;
  for (auto& [name, t] : target.params) {
    target_before.emplace_back(t.values().begin(), t.values().end());
  }

  // zero epochs: no history, no updates
  Model gen0 = build_generator_unet(tiny_model_cfg(ModelKind::GeneratorUNet), 2);
  AttackTrainConfig zero = cfg;
  zero.epochs = 0;
  TrainHistory h0 = train_attack(gen0, target, data, spec, zero);
  CHECK(h0.epochs.empty());
  for (size_t i = 0; i < gen.params.size(); ++i) {
    CHECK(same_bytes(gen.params[i].second, gen0.params[i].second));
  }

  // one epoch trains the generator, leaves the target untouched
  int callbacks = 0;
  TrainHistory h1 = train_attack(gen, target, data, spec, cfg,
                                 [&](int epoch, const TrainHistory& so_far) {
                                   CHECK(epoch == callbacks);
                                   CHECK(so_far.epochs.size() ==
                                         static_cast<size_t>(callbacks) + 1);
                                   ++callbacks;
                                 });
  CHECK(callbacks == 1);
  REQUIRE(h1.epochs.size() == 1);
  CHECK(h1.epochs[0].epoch == 0);
  CHECK(h1.epochs[0].adv_loss > 0.0f);
  CHECK(h1.epochs[0].total_loss ==
        doctest::Approx(h1.epochs[0].adv_loss + cfg.lambda0 * h1.epochs[0].reg_loss)
            .epsilon(1e-4));
  CHECK(h1.epochs[0].manipulated >= 0.0f);
  CHECK(h1.epochs[0].manipulated <= 1.0f);
  CHECK(h1.epochs[0].preserved >= 0.0f);
  CHECK(h1.epochs[0].preserved <= 1.0f);
  CHECK_FALSE(same_bytes(gen.params[0].second, gen0.params[0].second));

  size_t ti = 0;
  for (auto& [name, t] : target.params) {
    auto now = t.values();
    REQUIRE(std::equal(now.begin(), now.end(), target_before[ti].begin(),
                       target_before[ti].end()));
    ++ti;
  }

  // bitwise deterministic rerun
  Model gen2 = build_generator_unet(tiny_model_cfg(ModelKind::GeneratorUNet), 2);
  TrainHistory h2 = train_attack(gen2, target, data, spec, cfg);
  REQUIRE(h2.epochs.size() == 1);
  CHECK(h2.epochs[0].total_loss == h1.epochs[0].total_loss);
  CHECK(h2.epochs[0].manipulated == h1.epochs[0].manipulated);
  for (size_t i = 0; i < gen.params.size(); ++i) {
    CHECK(same_bytes(gen.params[i].second, gen2.params[i].second));
  }
}

TEST_CASE("disabling the regularizer pins its head in place") {
  std::string dir = tiny_dataset("train_noreg", 43);
  Dataset data = Dataset::open(dir);

  Model target = build_target_fcn(tiny_model_cfg(ModelKind::TargetFCN), 1);
  freeze(target);
  Model gen = build_generator_unet(tiny_model_cfg(ModelKind::GeneratorUNet), 2);

  std::vector<float> head_before(gen.param("reg_head.weight").values().begin(),
                                 gen.param("reg_head.weight").values().end());

  AttackTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.regularizer_enabled = false;
  TrainHistory h = train_attack(gen, target, data, vanish_spec(), cfg);

  auto head_after = gen.param("reg_head.weight").values();
  CHECK(std::equal(head_after.begin(), head_after.end(), head_before.begin(),
                   head_before.end()));
  // backbone still moved
  CHECK(h.epochs.size() == 1);
}

TEST_CASE("a few epochs of training reduce the loss on a tiny problem") {
  std::string dir = tiny_dataset("train_descent", 47, 6, 2);
  Dataset data = Dataset::open(dir);

  Model target = build_target_fcn(tiny_model_cfg(ModelKind::TargetFCN), 1);
  freeze(target);
  Model gen = build_generator_unet(tiny_model_cfg(ModelKind::GeneratorUNet), 2);

  AttackTrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 3;
  cfg.lr = 1e-3f;
  TrainHistory h = train_attack(gen, target, data, vanish_spec(), cfg);
  REQUIRE(h.epochs.size() == 4);
  CHECK(h.epochs.back().total_loss < h.epochs.front().total_loss);
}

TEST_CASE("pretrain with zero epochs stays at chance-like accuracy") {
  std::string dir = tiny_dataset("pretrain0", 53, 4, 2);
  Dataset data = Dataset::open(dir);

  PretrainConfig cfg;
  cfg.epochs = 0;
  cfg.base_width = 8;
  cfg.width_multiplier = 0.5f;
  cfg.seed = 4;
  PretrainResult r1 = pretrain_target(data, cfg);
  PretrainResult r2 = pretrain_target(data, cfg);

  CHECK(r1.epoch_loss.empty());
  CHECK(r1.test_pixel_accuracy < 0.5f);  // untrained nets follow one class at most
  CHECK(r1.test_pixel_accuracy == r2.test_pixel_accuracy);
  for (size_t i = 0; i < r1.model.params.size(); ++i) {
    CHECK(same_bytes(r1.model.params[i].second, r2.model.params[i].second));
  }
  CHECK(r1.model.config.kind == ModelKind::TargetFCN);

  CHECK(pixel_accuracy(r1.model, data, data.test_indices()) == r1.test_pixel_accuracy);

  // one epoch of training reduces the loss-relevant error on the train split
  PretrainConfig one = cfg;
  one.epochs = 2;
  one.lr = 1e-3f;
  PretrainResult r3 = pretrain_target(data, one);
  REQUIRE(r3.epoch_loss.size() == 2);
  CHECK(r3.epoch_loss[1] < r3.epoch_loss[0]);
}
