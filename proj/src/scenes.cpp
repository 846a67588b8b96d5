#include "ssat/scenes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ssat/image_io.hpp"
#include "ssat/rng.hpp"

namespace ssat {

namespace {

struct StyleParams {
  std::array<std::array<uint8_t, 3>, 8> palette;
  float sky_frac;
  float sidewalk_frac;
  // object sizes as fractions of image width / height / sky band height
  float bld_w_lo, bld_w_hi, bld_h_lo, bld_h_hi;
  float car_w_lo, car_w_hi, car_h_lo, car_h_hi;
  float fig_w_lo, fig_w_hi, fig_h_lo, fig_h_hi;
};

const StyleParams& params_for(SceneStyle s) {
  // palettes indexed by ClassId: road, sidewalk, building, sky, car, person,
  // rider, void
  static const StyleParams a{
      {{{100, 100, 110},
        {190, 185, 175},
        {120, 90, 80},
        {140, 180, 220},
        {40, 45, 140},
        {210, 60, 50},
        {240, 150, 40},
        {10, 10, 10}}},
      0.30f, 0.12f,
      0.12f, 0.28f, 0.35f, 0.95f,
      0.15f, 0.28f, 0.09f, 0.14f,
      0.05f, 0.08f, 0.13f, 0.20f};
  static const StyleParams b{
      {{{70, 75, 70},
        {160, 160, 172},
        {150, 120, 100},
        {210, 208, 190},
        {150, 30, 35},
        {60, 140, 60},
        {90, 60, 160},
        {28, 28, 28}}},
      0.40f, 0.09f,
      0.18f, 0.38f, 0.50f, 1.00f,
      0.12f, 0.20f, 0.07f, 0.11f,
      0.04f, 0.07f, 0.11f, 0.17f};
  static const StyleParams c{
      {{{122, 110, 92},
        {208, 200, 160},
        {88, 108, 122},
        {98, 148, 200},
        {215, 215, 60},
        {170, 40, 120},
        {40, 170, 170},
        {6, 6, 6}}},
      0.22f, 0.16f,
      0.10f, 0.20f, 0.30f, 0.80f,
      0.20f, 0.34f, 0.11f, 0.17f,
      0.06f, 0.09f, 0.15f, 0.23f};
  switch (s) {
    case SceneStyle::A: return a;
    case SceneStyle::B: return b;
    default: return c;
  }
}

void paint_rect(LabelMap& labels, int y0, int y1, int x0, int x1, uint8_t cls) {
  y0 = std::max(y0, 0);
  x0 = std::max(x0, 0);
  y1 = std::min(y1, labels.h);
  x1 = std::min(x1, labels.w);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) labels.at(y, x) = cls;
  }
}

int span_px(int total, float lo, float hi, Rng& rng, int min_px = 2) {
  int v = static_cast<int>(std::lround(total * rng.uniform(lo, hi)));
  return std::clamp(v, min_px, total);
}

}  // namespace

std::string style_name(SceneStyle s) {
  switch (s) {
    case SceneStyle::A: return "A";
    case SceneStyle::B: return "B";
    default: return "C";
  }
}

SceneStyle style_from_name(const std::string& name) {
  if (name == "A") return SceneStyle::A;
  if (name == "B") return SceneStyle::B;
  if (name == "C") return SceneStyle::C;
  throw ConfigError("unknown scene style '" + name + "' (expected A, B or C)");
}

void SceneConfig::validate() const {
  if (width < 16 || height < 16 || width % 8 != 0 || height % 8 != 0) {
    throw ConfigError("scene width/height must be >= 16 and divisible by 8");
  }
  if (num_classes != 8) {
    throw ConfigError("the scene generator uses the fixed 8-class street set");
  }
  if (noise_sigma < 0.0f) throw ConfigError("noise_sigma must be >= 0");
  auto chk = [](const CountRange& r, const char* n) {
    if (r.lo < 0 || r.hi < r.lo) {
      throw ConfigError(std::string(n) + " range must satisfy 0 <= lo <= hi");
    }
  };
  chk(buildings, "buildings");
  chk(cars, "cars");
  chk(figures, "figures");
  chk(void_patches, "void_patches");
}

json scene_config_to_json(const SceneConfig& cfg) {
  json j;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["num_classes"] = cfg.num_classes;
  j["style"] = style_name(cfg.style);
  j["buildings"] = json::array({cfg.buildings.lo, cfg.buildings.hi});
  j["cars"] = json::array({cfg.cars.lo, cfg.cars.hi});
  j["figures"] = json::array({cfg.figures.lo, cfg.figures.hi});
  j["void_patches"] = json::array({cfg.void_patches.lo, cfg.void_patches.hi});
  j["noise_sigma"] = cfg.noise_sigma;
  j["seed"] = cfg.seed;
  return j;
}

namespace {
CountRange range_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2) {
    throw ConfigError(std::string("scene_config.") + name + ": expected [lo, hi]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}
}  // namespace

SceneConfig scene_config_from_json(const json& j) {
  check_known_keys(j,
                   {"width", "height", "num_classes", "style", "buildings", "cars",
                    "figures", "void_patches", "noise_sigma", "seed"},
                   "scene_config");
  SceneConfig cfg;
  if (j.contains("width")) cfg.width = j["width"].get<int>();
  if (j.contains("height")) cfg.height = j["height"].get<int>();
  if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
  if (j.contains("style")) cfg.style = style_from_name(j["style"].get<std::string>());
  if (j.contains("buildings")) cfg.buildings = range_from(j["buildings"], "buildings");
  if (j.contains("cars")) cfg.cars = range_from(j["cars"], "cars");
  if (j.contains("figures")) cfg.figures = range_from(j["figures"], "figures");
  if (j.contains("void_patches")) {
    cfg.void_patches = range_from(j["void_patches"], "void_patches");
  }
  if (j.contains("noise_sigma")) cfg.noise_sigma = j["noise_sigma"].get<float>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  cfg.validate();
  return cfg;
}

const std::array<std::array<uint8_t, 3>, 8>& style_palette(SceneStyle s) {
  return params_for(s).palette;
}

std::pair<Tensor, LabelMap> generate_scene(const SceneConfig& cfg, uint64_t index) {
  cfg.validate();
  const StyleParams& sp = params_for(cfg.style);
  const int h = cfg.height;
  const int w = cfg.width;
  Rng rng(cfg.seed, index);

  const int sky_h = std::max(2, static_cast<int>(std::lround(h * sp.sky_frac)));
  const int sw_h = std::max(2, static_cast<int>(std::lround(h * sp.sidewalk_frac)));
  const int road_top = sky_h + sw_h;

  LabelMap labels(h, w, kRoad);
  paint_rect(labels, 0, sky_h, 0, w, kSky);
  paint_rect(labels, sky_h, road_top, 0, w, kSidewalk);

  // buildings rise from the horizon into the sky band
  int nb = rng.uniform_int(cfg.buildings.lo, cfg.buildings.hi);
  for (int i = 0; i < nb; ++i) {
    int bw = span_px(w, sp.bld_w_lo, sp.bld_w_hi, rng);
    int bh = std::clamp(
        static_cast<int>(std::lround(sky_h * rng.uniform(sp.bld_h_lo, sp.bld_h_hi))), 2,
        sky_h);
    int x0 = rng.uniform_int(0, w - bw);
    paint_rect(labels, sky_h - bh, sky_h, x0, x0 + bw, kBuilding);
  }

  // unlabeled clutter patches below the horizon
  int nv = rng.uniform_int(cfg.void_patches.lo, cfg.void_patches.hi);
  for (int i = 0; i < nv; ++i) {
    int vw = span_px(w, 0.06f, 0.12f, rng);
    int vh = std::min(span_px(h, 0.05f, 0.10f, rng), h - sky_h);
    int y0 = rng.uniform_int(sky_h, h - vh);
    int x0 = rng.uniform_int(0, w - vw);
    paint_rect(labels, y0, y0 + vh, x0, x0 + vw, kVoid);
  }

  int nc = rng.uniform_int(cfg.cars.lo, cfg.cars.hi);
  for (int i = 0; i < nc; ++i) {
    int cw = span_px(w, sp.car_w_lo, sp.car_w_hi, rng);
    int ch = span_px(h, sp.car_h_lo, sp.car_h_hi, rng);
    int yb = rng.uniform_int(road_top, h - 1);
    int x0 = rng.uniform_int(0, w - cw);
    paint_rect(labels, yb - ch + 1, yb + 1, x0, x0 + cw, kCar);
  }

  // person / rider blobs go last so nothing occludes them
  int nf = rng.uniform_int(cfg.figures.lo, cfg.figures.hi);
  for (int i = 0; i < nf; ++i) {
    bool rider = (rng.next_u64() & 1) != 0;
    uint8_t cls = rider ? kRider : kPerson;
    int fw = span_px(w, sp.fig_w_lo, sp.fig_w_hi, rng);
    int fh = std::max(4, span_px(h, sp.fig_h_lo, sp.fig_h_hi, rng));
    int yb = rng.uniform_int(road_top, h - 1);
    int x0 = rng.uniform_int(0, w - fw);
    int y0 = std::max(yb - fh + 1, 0);
    int head_h = std::max(1, fh / 4);
    int inset = fw >= 4 ? 1 : 0;
    paint_rect(labels, y0, y0 + head_h, x0 + inset, x0 + fw - inset, cls);
    paint_rect(labels, y0 + head_h, yb + 1, x0, x0 + fw, cls);
    if (rider) {
      // low horizontal bar suggesting a bike
      paint_rect(labels, std::max(yb - 1, 0), yb + 1, x0 - 1, x0 + fw + 1, cls);
    }
  }

  Tensor img = Tensor::zeros({3, h, w});
  float* d = img.data();
  const int64_t hw = static_cast<int64_t>(h) * w;
  const float amp = cfg.noise_sigma;
  // texture and noise both scale with noise_sigma, so sigma 0 renders every
  // region as its exact base color
  const float fx = rng.uniform(0.25f, 0.8f);
  const float fy = rng.uniform(0.25f, 0.8f);
  const float phase = rng.uniform(0.0f, 6.2831853f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t c = labels.at(y, x);
      float tex = 0.4f * amp * std::sin(fx * x + fy * y + phase + 1.7f * c);
      for (int ch = 0; ch < 3; ++ch) {
        float v = sp.palette[c][ch] + tex + amp * rng.normal();
        // pixels are quantized at generation time so PPM round trips are exact
        d[ch * hw + y * w + x] = std::round(std::clamp(v, 0.0f, 255.0f));
      }
    }
  }
  return {std::move(img), std::move(labels)};
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["scene_config"] = scene_config_to_json(m.scene_config);
  j["n_train"] = m.n_train;
  j["n_test"] = m.n_test;
  json samples = json::array();
  for (const auto& e : m.samples) {
    samples.push_back({{"index", e.index},
                       {"image", e.image},
                       {"label", e.label},
                       {"crc32_image", e.crc32_image},
                       {"crc32_label", e.crc32_label}});
  }
  j["samples"] = std::move(samples);
  return j;
}

DatasetManifest manifest_from_json(const json& j, const std::string& origin) {
  check_known_keys(j, {"version", "scene_config", "n_train", "n_test", "samples"},
                   origin);
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != 1) {
    throw std::runtime_error(origin + ": unsupported manifest version " +
                             std::to_string(m.version));
  }
  m.scene_config = scene_config_from_json(j.at("scene_config"));
  m.n_train = j.at("n_train").get<int>();
  m.n_test = j.at("n_test").get<int>();
  for (const auto& s : j.at("samples")) {
    check_known_keys(s, {"index", "image", "label", "crc32_image", "crc32_label"},
                     origin + " sample");
    ManifestEntry e;
    e.index = s.at("index").get<uint64_t>();
    e.image = s.at("image").get<std::string>();
    e.label = s.at("label").get<std::string>();
    e.crc32_image = s.at("crc32_image").get<uint32_t>();
    e.crc32_label = s.at("crc32_label").get<uint32_t>();
    m.samples.push_back(std::move(e));
  }
  if (static_cast<int>(m.samples.size()) != m.n_train + m.n_test) {
    throw std::runtime_error(origin + ": sample count does not match split sizes");
  }
  return m;
}

Sample load_entry(const std::string& dir, const SceneConfig& cfg,
                  const ManifestEntry& e) {
  auto img_bytes = read_file(dir + "/" + e.image);
  if (crc32_of(img_bytes) != e.crc32_image) {
    throw std::runtime_error("checksum mismatch for '" + e.image + "'");
  }
  auto lab_bytes = read_file(dir + "/" + e.label);
  if (crc32_of(lab_bytes) != e.crc32_label) {
    throw std::runtime_error("checksum mismatch for '" + e.label + "'");
  }
  ImageU8 img = decode_ppm(img_bytes, e.image);
  int lh = 0, lw = 0;
  auto ids = decode_pgm(lab_bytes, lh, lw, e.label);
  if (img.h != cfg.height || img.w != cfg.width || lh != cfg.height || lw != cfg.width) {
    throw std::runtime_error("'" + e.image + "': size does not match scene_config");
  }
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= cfg.num_classes) {
      throw std::runtime_error("'" + e.label + "': label value " +
                               std::to_string(ids[i]) + " >= num_classes at pixel " +
                               std::to_string(i));
    }
  }
  Sample s;
  s.image = image_to_tensor(img);
  s.labels.h = lh;
  s.labels.w = lw;
  s.labels.ids = std::move(ids);
  return s;
}

const ManifestEntry& find_entry(const DatasetManifest& m, uint64_t index) {
  for (const auto& e : m.samples) {
    if (e.index == index) return e;
  }
  throw std::runtime_error("sample index " + std::to_string(index) +
                           " not in manifest");
}

}  // namespace

DatasetManifest generate_dataset(const SceneConfig& cfg, int n_train, int n_test,
                                 const std::string& out_dir, int threads) {
  cfg.validate();
  if (n_train < 0 || n_test < 0 || n_train + n_test <= 0) {
    throw ConfigError("need n_train >= 0, n_test >= 0 and at least one sample");
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (!ec) fs::create_directories(fs::path(out_dir) / "labels", ec);
  if (ec) {
    throw std::runtime_error("cannot create dataset directories under '" + out_dir +
                             "': " + ec.message());
  }

  DatasetManifest m;
  m.scene_config = cfg;
  m.n_train = n_train;
  m.n_test = n_test;
  const int total = n_train + n_test;
  m.samples.resize(static_cast<size_t>(total));

  auto emit = [&](int i) {
    auto [img, labels] = generate_scene(cfg, static_cast<uint64_t>(i));
    char name[16];
    std::snprintf(name, sizeof name, "%06d", i);
    ManifestEntry e;
    e.index = static_cast<uint64_t>(i);
    e.image = std::string("images/") + name + ".ppm";
    e.label = std::string("labels/") + name + ".pgm";
    auto ppm = encode_ppm(tensor_to_image(img));
    auto pgm = encode_pgm(labels.h, labels.w, labels.ids);
    e.crc32_image = crc32_of(ppm);
    e.crc32_label = crc32_of(pgm);
    write_file(out_dir + "/" + e.image, ppm);
    write_file(out_dir + "/" + e.label, pgm);
    m.samples[static_cast<size_t>(i)] = std::move(e);
  };

  const int nthreads = std::clamp(threads, 1, total);
  if (nthreads == 1) {
    for (int i = 0; i < total; ++i) emit(i);
  } else {
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::string first_error;
    auto worker = [&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= total) break;
        try {
          emit(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (first_error.empty()) first_error = e.what();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (!first_error.empty()) throw std::runtime_error(first_error);
  }
  save_json_file(out_dir + "/manifest.json", manifest_to_json(m));
  return m;
}

Sample load_sample(const std::string& dataset_dir, uint64_t index) {
  json j = load_json_file(dataset_dir + "/manifest.json");
  DatasetManifest m = manifest_from_json(j, dataset_dir + "/manifest.json");
  return load_entry(dataset_dir, m.scene_config, find_entry(m, index));
}

Dataset Dataset::open(const std::string& dir) {
  Dataset d;
  d.dir_ = dir;
  // a dataset that is not there is a runtime failure, not a config error
  if (!std::filesystem::exists(std::filesystem::path(dir) / "manifest.json")) {
    throw std::runtime_error("no dataset at '" + dir + "': manifest.json missing");
  }
  json j = load_json_file(dir + "/manifest.json");
  d.manifest_ = manifest_from_json(j, dir + "/manifest.json");
  d.cache_.resize(d.manifest_.samples.size());
  d.loaded_.assign(d.manifest_.samples.size(), 0);
  return d;
}

const Sample& Dataset::sample(int index) const {
  if (index < 0 || index >= size()) {
    throw std::runtime_error("sample index " + std::to_string(index) +
                             " out of range");
  }
  if (!loaded_[static_cast<size_t>(index)]) {
    cache_[static_cast<size_t>(index)] =
        load_entry(dir_, manifest_.scene_config,
                   find_entry(manifest_, static_cast<uint64_t>(index)));
    loaded_[static_cast<size_t>(index)] = 1;
  }
  return cache_[static_cast<size_t>(index)];
}

Tensor batch_images(const Dataset& data, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("batch_images: empty index list");
  const SceneConfig& cfg = data.config();
  const int n = static_cast<int>(indices.size());
  Tensor batch = Tensor::zeros({n, 3, cfg.height, cfg.width});
  const int64_t per = 3LL * cfg.height * cfg.width;
  float* dst = batch.data();
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.sample(indices[static_cast<size_t>(i)]);
    std::copy_n(s.image.data(), per, dst + i * per);
  }
  return batch;
}

std::vector<LabelMap> batch_labels(const Dataset& data, const std::vector<int>& indices) {
  std::vector<LabelMap> out;
  out.reserve(indices.size());
  for (int idx : indices) out.push_back(data.sample(idx).labels);
  return out;
}

std::vector<int> Dataset::train_indices() const {
  std::vector<int> v(static_cast<size_t>(manifest_.n_train));
  for (int i = 0; i < manifest_.n_train; ++i) v[static_cast<size_t>(i)] = i;
  return v;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> v(static_cast<size_t>(manifest_.n_test));
  for (int i = 0; i < manifest_.n_test; ++i) {
    v[static_cast<size_t>(i)] = manifest_.n_train + i;
  }
  return v;
}

}  // namespace ssat
