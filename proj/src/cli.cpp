#include "ssat/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ssat/eval.hpp"
#include "ssat/image_io.hpp"
#include "ssat/nets.hpp"

namespace fs = std::filesystem;

namespace ssat {

namespace {

json model_size_to_json(const ModelSize& m) {
  json j;
  j["base_width"] = m.base_width;
  j["width_multiplier"] = m.width_multiplier;
  return j;
}

ModelSize model_size_from_json(const json& j, const char* where) {
  check_known_keys(j, {"base_width", "width_multiplier"}, where);
  ModelSize m;
  if (j.contains("base_width")) m.base_width = j["base_width"].get<int>();
  if (j.contains("width_multiplier")) m.width_multiplier = j["width_multiplier"].get<float>();
  if (m.base_width < 1) throw ConfigError(std::string(where) + ": base_width must be >= 1");
  return m;
}

ModelConfig model_config(ModelKind kind, const ModelSize& ms, int num_classes) {
  ModelConfig mc;
  mc.kind = kind;
  mc.num_classes = num_classes;
  mc.base_width = ms.base_width;
  mc.width_multiplier = ms.width_multiplier;
  mc.validate();
  return mc;
}

Tensor image_slice(const Tensor& batch, int i) {
  const auto& s = batch.shape();
  const int64_t per = static_cast<int64_t>(s[1]) * s[2] * s[3];
  std::vector<float> buf(static_cast<size_t>(per));
  std::copy_n(batch.data() + i * per, per, buf.data());
  return Tensor::from_data({s[1], s[2], s[3]}, std::move(buf));
}

void write_history_csv(const TrainHistory& hist, const std::string& path) {
  std::string s = "epoch,adv_loss,reg_loss,total_loss,manipulated,preserved\n";
  char line[160];
  for (const auto& e : hist.epochs) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.4f,%.4f\n", e.epoch, e.adv_loss,
                  e.reg_loss, e.total_loss, e.manipulated, e.preserved);
    s += line;
  }
  write_file(path, std::vector<uint8_t>(s.begin(), s.end()));
}

// Five images per sample: clean input, perturbation (mid-gray +- 127/xi),
// adversarial input, and the target's argmax maps for both inputs.
void write_eval_panels(const Model& generator, const Model& target, const Dataset& data,
                       const std::vector<int>& samples, float xi, const std::string& out_dir) {
  Graph::NoGrad ng;
  for (int s : samples) {
    Tensor x = batch_images(data, {s});
    Tensor l_x = forward_target(target, x);
    GeneratorOutput go = forward_generator(generator, x);
    Tensor p = scale_perturbation(go.raw_perturbation, xi);
    Tensor xhat = apply_perturbation(x, p);
    Tensor lhat = forward_target(target, xhat);

    auto path = [&](const char* tag) {
      char name[64];
      std::snprintf(name, sizeof name, "sample_%06d_%s.ppm", s, tag);
      return out_dir + "/" + name;
    };
    write_file(path("clean"), encode_ppm(tensor_to_image(image_slice(x, 0))));
    write_file(path("adv"), encode_ppm(tensor_to_image(image_slice(xhat, 0))));

    ImageU8 pert;
    pert.h = p.shape()[2];
    pert.w = p.shape()[3];
    const int64_t hw = static_cast<int64_t>(pert.h) * pert.w;
    pert.rgb.resize(static_cast<size_t>(hw) * 3);
    const float* d = p.data();
    for (int64_t q = 0; q < hw; ++q) {
      for (int c = 0; c < 3; ++c) {
        float v = std::round(128.0f + d[c * hw + q] * 127.0f / xi);
        pert.rgb[static_cast<size_t>(q * 3 + c)] =
            static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
    }
    write_file(path("pert"), encode_ppm(pert));

    const Palette& pal = default_palette();
    write_file(path("clean_pred"), render_labelmap(argmax_labels(image_slice(l_x, 0)), pal));
    write_file(path("adv_pred"), render_labelmap(argmax_labels(image_slice(lhat, 0)), pal));
  }
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(load_json_file(path));
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  check_known_keys(j,
                   {"scene_config", "target_model", "generator_model", "pretrain_config",
                    "attack_spec", "train_config", "eval", "n_train", "n_test", "output_dir",
                    "seed"},
                   "run config");
  RunConfig rc;
  if (j.contains("seed")) rc.seed = j["seed"].get<uint64_t>();

  if (j.contains("scene_config")) rc.scene_config = scene_config_from_json(j["scene_config"]);
  if (!(j.contains("scene_config") && j["scene_config"].contains("seed")))
    rc.scene_config.seed = rc.seed;

  if (j.contains("target_model"))
    rc.target_model = model_size_from_json(j["target_model"], "target_model");
  if (j.contains("generator_model"))
    rc.generator_model = model_size_from_json(j["generator_model"], "generator_model");

  const json* pj = j.contains("pretrain_config") ? &j["pretrain_config"] : nullptr;
  if (pj) rc.pretrain_config = pretrain_config_from_json(*pj);
  if (!(pj && pj->contains("seed"))) rc.pretrain_config.seed = rc.seed;
  // the target_model block is the source of truth for the target's size
  // unless pretrain_config pins its own
  if (!(pj && pj->contains("base_width")))
    rc.pretrain_config.base_width = rc.target_model.base_width;
  if (!(pj && pj->contains("width_multiplier")))
    rc.pretrain_config.width_multiplier = rc.target_model.width_multiplier;

  if (j.contains("attack_spec")) rc.attack_spec = attack_spec_from_json(j["attack_spec"]);

  const json* tj = j.contains("train_config") ? &j["train_config"] : nullptr;
  if (tj) rc.train_config = attack_train_config_from_json(*tj);
  if (!(tj && tj->contains("seed"))) rc.train_config.seed = rc.seed;

  if (j.contains("eval")) {
    check_known_keys(j["eval"], {"samples"}, "eval");
    if (j["eval"].contains("samples"))
      rc.eval_samples = j["eval"]["samples"].get<std::vector<int>>();
  }
  if (j.contains("n_train")) rc.n_train = j["n_train"].get<int>();
  if (j.contains("n_test")) rc.n_test = j["n_test"].get<int>();
  if (rc.n_train < 0 || rc.n_test < 0) throw ConfigError("n_train and n_test must be >= 0");
  if (j.contains("output_dir")) rc.output_dir = j["output_dir"].get<std::string>();
  return rc;
}

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["seed"] = rc.seed;
  j["scene_config"] = scene_config_to_json(rc.scene_config);
  j["target_model"] = model_size_to_json(rc.target_model);
  j["generator_model"] = model_size_to_json(rc.generator_model);
  j["pretrain_config"] = pretrain_config_to_json(rc.pretrain_config);
  j["attack_spec"] = attack_spec_to_json(rc.attack_spec);
  j["train_config"] = attack_train_config_to_json(rc.train_config);
  j["eval"] = json{{"samples", rc.eval_samples}};
  j["n_train"] = rc.n_train;
  j["n_test"] = rc.n_test;
  j["output_dir"] = rc.output_dir;
  return j;
}

int worker_threads() {
  if (const char* env = std::getenv("SSAT_THREADS"); env && *env) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (!end || *end != '\0' || v < 1) throw ConfigError("SSAT_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"ssat: stealthy segmentation attacks on synthetic street scenes"};
  app.require_subcommand(1);

  // gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gd_config, gd_out, gd_style;
  int gd_n_train = 0, gd_n_test = 0, gd_width = 0, gd_height = 0;
  float gd_sigma = 0;
  uint64_t gd_seed = 0;
  gen->add_option("--config", gd_config, "Run-config JSON (defaults when omitted)")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gd_out, "Dataset directory to create")->required();
  auto* o_gtr = gen->add_option("--n-train", gd_n_train, "Training samples");
  auto* o_gte = gen->add_option("--n-test", gd_n_test, "Test samples");
  auto* o_gst = gen->add_option("--style", gd_style, "Scene style: A, B or C");
  auto* o_gsg = gen->add_option("--noise-sigma", gd_sigma, "Texture noise sigma");
  auto* o_gsd = gen->add_option("--seed", gd_seed, "Scene seed");
  auto* o_gwd = gen->add_option("--width", gd_width, "Scene width in pixels");
  auto* o_ght = gen->add_option("--height", gd_height, "Scene height in pixels");
  gen->callback([&] {
    RunConfig rc;
    if (!gd_config.empty()) rc = load_run_config(gd_config);
    if (o_gtr->count()) rc.n_train = gd_n_train;
    if (o_gte->count()) rc.n_test = gd_n_test;
    if (o_gst->count()) rc.scene_config.style = style_from_name(gd_style);
    if (o_gsg->count()) rc.scene_config.noise_sigma = gd_sigma;
    if (o_gsd->count()) rc.scene_config.seed = gd_seed;
    if (o_gwd->count()) rc.scene_config.width = gd_width;
    if (o_ght->count()) rc.scene_config.height = gd_height;
    rc.scene_config.validate();
    DatasetManifest m =
        generate_dataset(rc.scene_config, rc.n_train, rc.n_test, gd_out, worker_threads());
    std::printf("wrote %d train + %d test samples to %s\n", m.n_train, m.n_test,
                gd_out.c_str());
  });

  // pretrain -----------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "Train the target segmenter");
  std::string pt_config, pt_data, pt_out;
  int pt_epochs = 0, pt_batch = 0;
  float pt_lr = 0;
  uint64_t pt_seed = 0;
  pre->add_option("--config", pt_config, "Run-config JSON")->check(CLI::ExistingFile);
  pre->add_option("--data", pt_data, "Dataset directory")->required();
  pre->add_option("--out", pt_out, "Checkpoint path to write")->required();
  auto* o_pep = pre->add_option("--epochs", pt_epochs, "Training epochs");
  auto* o_plr = pre->add_option("--lr", pt_lr, "Adam learning rate");
  auto* o_pba = pre->add_option("--batch", pt_batch, "Batch size");
  auto* o_psd = pre->add_option("--seed", pt_seed, "Init/shuffle seed");
  pre->callback([&] {
    RunConfig rc;
    if (!pt_config.empty()) rc = load_run_config(pt_config);
    PretrainConfig cfg = rc.pretrain_config;
    if (o_pep->count()) cfg.epochs = pt_epochs;
    if (o_plr->count()) cfg.lr = pt_lr;
    if (o_pba->count()) cfg.batch = pt_batch;
    if (o_psd->count()) cfg.seed = pt_seed;
    cfg.validate();
    Dataset data = Dataset::open(pt_data);
    PretrainResult res = pretrain_target(data, cfg);
    save_checkpoint(res.model, pt_out);
    std::printf("test_pixel_acc=%.4f\n", res.test_pixel_accuracy);
    std::printf("wrote %s\n", pt_out.c_str());
  });

  // attack -------------------------------------------------------------
  auto* atk = app.add_subcommand("attack", "Train a perturbation generator");
  std::string at_config, at_data, at_target, at_out, at_history;
  int at_epochs = 0, at_batch = 0;
  float at_lambda0 = 0, at_xi = 0, at_lr = 0;
  uint64_t at_seed = 0;
  bool at_noreg = false;
  atk->add_option("--config", at_config, "Run-config JSON with the attack spec")
      ->required()
      ->check(CLI::ExistingFile);
  atk->add_option("--data", at_data, "Dataset directory")->required();
  atk->add_option("--target-ckpt", at_target, "Frozen target checkpoint")->required();
  atk->add_option("--out", at_out, "Generator checkpoint path")->required();
  atk->add_option("--history", at_history, "History CSV path (default <out>.history.csv)");
  auto* o_alm = atk->add_option("--lambda0", at_lambda0, "Regularizer weight");
  auto* o_axi = atk->add_option("--xi", at_xi, "Perturbation bound");
  auto* o_aep = atk->add_option("--epochs", at_epochs, "Training epochs");
  auto* o_alr = atk->add_option("--lr", at_lr, "Adam learning rate");
  auto* o_aba = atk->add_option("--batch", at_batch, "Batch size");
  auto* o_asd = atk->add_option("--seed", at_seed, "Init/shuffle seed");
  atk->add_flag("--no-regularizer", at_noreg, "Disable the semantic regularizer head");
  atk->callback([&] {
    RunConfig rc = load_run_config(at_config);
    AttackTrainConfig cfg = rc.train_config;
    if (o_alm->count()) cfg.lambda0 = at_lambda0;
    if (o_axi->count()) cfg.xi = at_xi;
    if (o_aep->count()) cfg.epochs = at_epochs;
    if (o_alr->count()) cfg.lr = at_lr;
    if (o_aba->count()) cfg.batch = at_batch;
    if (o_asd->count()) cfg.seed = at_seed;
    if (at_noreg) cfg.regularizer_enabled = false;
    cfg.validate();
    Dataset data = Dataset::open(at_data);
    Model target = load_checkpoint(at_target);
    freeze(target);
    ModelConfig gc =
        model_config(ModelKind::GeneratorUNet, rc.generator_model, data.config().num_classes);
    Model generator = build_generator_unet(gc, cfg.seed);
    const std::string hist_path = at_history.empty() ? at_out + ".history.csv" : at_history;
    TrainHistory hist = train_attack(
        generator, target, data, rc.attack_spec, cfg, [&](int epoch, const TrainHistory& h) {
          const EpochStats& es = h.epochs.back();
          std::printf("epoch %d/%d adv=%.4f reg=%.4f total=%.4f manipulated=%.4f "
                      "preserved=%.4f\n",
                      epoch + 1, cfg.epochs, es.adv_loss, es.reg_loss, es.total_loss,
                      es.manipulated, es.preserved);
          std::fflush(stdout);
          save_checkpoint(generator, at_out);
          write_history_csv(h, hist_path);
        });
    if (hist.epochs.empty()) {
      save_checkpoint(generator, at_out);
      write_history_csv(hist, hist_path);
    }
    std::printf("wrote %s and %s\n", at_out.c_str(), hist_path.c_str());
  });

  // eval ----------------------------------------------------------------
  auto* evl = app.add_subcommand("eval", "Evaluate a generator against a target");
  std::string ev_gen, ev_tgt, ev_data, ev_spec, ev_out, ev_split = "test", ev_id = "eval";
  float ev_xi = 10.0f, ev_lambda0 = 0;
  uint64_t ev_seed = 0;
  std::vector<int> ev_samples;
  evl->add_option("--generator-ckpt", ev_gen, "Generator checkpoint")->required();
  evl->add_option("--target-ckpt", ev_tgt, "Target checkpoint")->required();
  evl->add_option("--data", ev_data, "Dataset directory")->required();
  evl->add_option("--spec", ev_spec, "Attack-spec JSON")->required()->check(CLI::ExistingFile);
  evl->add_option("--out", ev_out, "Output directory")->required();
  evl->add_option("--xi", ev_xi, "Perturbation bound");
  evl->add_option("--split", ev_split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "test"}));
  evl->add_option("--samples", ev_samples, "Sample indices to render")->delimiter(',');
  evl->add_option("--experiment-id", ev_id, "Row id in metrics.csv");
  auto* o_elm = evl->add_option("--lambda0", ev_lambda0, "Recorded lambda0 (metadata)");
  auto* o_esd = evl->add_option("--seed", ev_seed, "Recorded seed (metadata)");
  evl->callback([&] {
    Dataset data = Dataset::open(ev_data);
    Model generator = load_checkpoint(ev_gen);
    Model target = load_checkpoint(ev_tgt);
    AttackSpec spec = attack_spec_from_json(load_json_file(ev_spec));
    std::vector<int> idx = ev_split == "train" ? data.train_indices() : data.test_indices();
    MetricsReport rep = evaluate_attack(generator, target, data, idx, spec, ev_xi);
    rep.experiment_id = ev_id;
    rep.generator_ckpt = ev_gen;
    rep.target_ckpt = ev_tgt;
    rep.dataset = ev_data;
    if (o_elm->count()) rep.lambda0 = ev_lambda0;
    if (o_esd->count()) rep.seed = ev_seed;
    fs::create_directories(ev_out);
    write_report_csv({rep}, ev_out + "/metrics.csv");
    std::vector<int> panels = ev_samples;
    if (panels.empty() && !idx.empty()) panels.push_back(idx.front());
    for (int s : panels) {
      if (s < 0 || s >= data.size())
        throw ConfigError("--samples index " + std::to_string(s) + " out of range");
    }
    write_eval_panels(generator, target, data, panels, ev_xi, ev_out);
    char man[16] = "n/a";
    if (rep.manipulated_rate) std::snprintf(man, sizeof man, "%.4f", *rep.manipulated_rate);
    std::printf("manipulated=%s preserved=%.4f\n", man, rep.preserved_rate);
    std::printf("wrote %s\n", (ev_out + "/metrics.csv").c_str());
  });

  // sweep ----------------------------------------------------------------
  auto* swp = app.add_subcommand("sweep", "Run a grid of experiments into one CSV");
  std::string sw_grid, sw_out;
  swp->add_option("--grid", sw_grid, "Grid JSON (mode: cross | xi | width)")
      ->required()
      ->check(CLI::ExistingFile);
  swp->add_option("--out", sw_out, "CSV path to write")->required();
  swp->callback([&] {
    json g = load_json_file(sw_grid);
    if (!g.is_object()) throw ConfigError("sweep grid: expected a JSON object");
    const std::string mode = g.contains("mode") ? g["mode"].get<std::string>() : "cross";
    std::vector<MetricsReport> reports;
    if (mode == "cross") {
      g.erase("mode");
      reports = cross_evaluate(experiment_grid_from_json(g));
    } else if (mode == "xi" || mode == "width") {
      check_known_keys(g,
                       {"mode", "data", "target_ckpt", "generator_model", "attack_spec",
                        "train_config", "xis", "widths"},
                       "sweep grid");
      if (!g.contains("data") || !g.contains("target_ckpt") || !g.contains("attack_spec"))
        throw ConfigError("sweep grid: data, target_ckpt and attack_spec are required");
      Dataset data = Dataset::open(g["data"].get<std::string>());
      Model target = load_checkpoint(g["target_ckpt"].get<std::string>());
      freeze(target);
      ModelSize ms;
      if (g.contains("generator_model"))
        ms = model_size_from_json(g["generator_model"], "generator_model");
      ModelConfig gc =
          model_config(ModelKind::GeneratorUNet, ms, data.config().num_classes);
      AttackSpec spec = attack_spec_from_json(g["attack_spec"]);
      AttackTrainConfig cfg;
      if (g.contains("train_config")) cfg = attack_train_config_from_json(g["train_config"]);
      if (mode == "xi") {
        if (!g.contains("xis")) throw ConfigError("sweep grid: xis required for mode xi");
        reports = sweep_xi(data, target, gc, spec, cfg, g["xis"].get<std::vector<float>>());
      } else {
        if (!g.contains("widths"))
          throw ConfigError("sweep grid: widths required for mode width");
        reports =
            sweep_width(data, target, gc, spec, cfg, g["widths"].get<std::vector<float>>());
      }
    } else {
      throw ConfigError("sweep grid: unknown mode '" + mode + "'");
    }
    write_report_csv(reports, sw_out);
    std::printf("wrote %zu rows to %s\n", reports.size(), sw_out.c_str());
  });

  // render ----------------------------------------------------------------
  auto* rnd = app.add_subcommand("render", "Colorize a label map");
  std::string rn_labels, rn_out, rn_palette;
  rnd->add_option("--labels", rn_labels, "Label map (P5 PGM)")
      ->required()
      ->check(CLI::ExistingFile);
  rnd->add_option("--out", rn_out, "PPM path to write")->required();
  rnd->add_option("--palette", rn_palette, "JSON array of [r,g,b] rows, one per class")
      ->check(CLI::ExistingFile);
  rnd->callback([&] {
    int h = 0, w = 0;
    LabelMap lm;
    lm.ids = decode_pgm(read_file(rn_labels), h, w, rn_labels);
    lm.h = h;
    lm.w = w;
    Palette pal = default_palette();
    if (!rn_palette.empty()) {
      json pj = load_json_file(rn_palette);
      if (!pj.is_array() || pj.empty()) throw ConfigError("palette: expected a non-empty array");
      pal.clear();
      for (const auto& row : pj) {
        if (!row.is_array() || row.size() != 3)
          throw ConfigError("palette: each row must be [r, g, b]");
        std::array<uint8_t, 3> c{};
        for (int i = 0; i < 3; ++i) {
          int v = row[static_cast<size_t>(i)].get<int>();
          if (v < 0 || v > 255) throw ConfigError("palette: channel out of [0, 255]");
          c[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
        }
        pal.push_back(c);
      }
    }
    write_file(rn_out, render_labelmap(lm, pal));
    std::printf("wrote %s\n", rn_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace ssat
