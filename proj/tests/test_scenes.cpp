#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssat/image_io.hpp"
#include "ssat/jsonio.hpp"
#include "ssat/scenes.hpp"
#include "test_util.hpp"

using namespace ssat;
using testutil::same_bytes;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "ssat_test_scenes" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double figure_fraction(const LabelMap& lm) {
  int64_t n = 0;
  for (uint8_t c : lm.ids) n += (c == kPerson || c == kRider) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(lm.size());
}

}  // namespace

TEST_CASE("style names round trip and config validation rejects bad input") {
  for (SceneStyle s : {SceneStyle::A, SceneStyle::B, SceneStyle::C}) {
    CHECK(style_from_name(style_name(s)) == s);
  }
  CHECK_THROWS_AS(style_from_name("D"), ConfigError);

  SceneConfig bad;
  bad.width = 60;  // not divisible by 8
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SceneConfig{};
  bad.num_classes = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SceneConfig{};
  bad.noise_sigma = -1.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SceneConfig{};
  bad.cars = {3, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sigma zero renders every region as its exact base color") {
  for (SceneStyle s : {SceneStyle::A, SceneStyle::B, SceneStyle::C}) {
    SceneConfig cfg;
    cfg.style = s;
    cfg.noise_sigma = 0.0f;
    cfg.seed = 11;
    auto [img, labels] = generate_scene(cfg, 0);
    const auto& pal = style_palette(s);
    const float* d = img.data();
    const int hw = cfg.height * cfg.width;
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        uint8_t c = labels.at(y, x);
        for (int ch = 0; ch < 3; ++ch) {
          REQUIRE(d[ch * hw + y * cfg.width + x] == static_cast<float>(pal[c][ch]));
        }
      }
    }
  }
}

TEST_CASE("scenes are deterministic in (config, index) and integer valued") {
  SceneConfig cfg;
  cfg.seed = 5;
  auto [img1, lab1] = generate_scene(cfg, 3);
  auto [img2, lab2] = generate_scene(cfg, 3);
  CHECK(same_bytes(img1, img2));
  CHECK(lab1 == lab2);

  auto [img3, lab3] = generate_scene(cfg, 4);
  CHECK_FALSE(lab1 == lab3);

  for (float v : img1.values()) {
    CHECK(v == std::round(v));
    CHECK(v >= 0.0f);
    CHECK(v <= 255.0f);
  }
}

TEST_CASE("figure pixels stay in a plausible coverage band over 1000 scenes") {
  SceneConfig cfg;
  cfg.seed = 7;
  double total = 0.0;
  for (uint64_t i = 0; i < 1000; ++i) {
    auto [img, labels] = generate_scene(cfg, i);
    double f = figure_fraction(labels);
    REQUIRE(f > 0.0);   // figures go last, so at least one pixel survives
    REQUIRE(f < 0.20);  // and they never dominate the scene
    total += f;
  }
  double mean = total / 1000.0;
  CHECK(mean > 0.005);
  CHECK(mean < 0.08);
}

TEST_CASE("generate_dataset lays out files, checksums and a manifest") {
  SceneConfig cfg;
  cfg.seed = 21;
  fs::path dir = fresh_dir("layout");
  DatasetManifest m = generate_dataset(cfg, 2, 1, dir.string());
  CHECK(m.n_train == 2);
  CHECK(m.n_test == 1);
  REQUIRE(m.samples.size() == 3);
  CHECK(m.samples[0].image == "images/000000.ppm");
  CHECK(m.samples[0].label == "labels/000000.pgm");
  CHECK(m.samples[2].image == "images/000002.ppm");

  for (const auto& e : m.samples) {
    std::vector<uint8_t> img_bytes = read_file((dir / e.image).string());
    std::vector<uint8_t> lab_bytes = read_file((dir / e.label).string());
    CHECK(crc32_of(img_bytes) == e.crc32_image);
    CHECK(crc32_of(lab_bytes) == e.crc32_label);

    // P5, 64x64, maxval 255: 13 header bytes + 4096 payload
    CHECK(lab_bytes.size() == 13 + 4096);
    int h = 0, w = 0;
    std::vector<uint8_t> gray = decode_pgm(lab_bytes, h, w, e.label);
    CHECK(h == 64);
    CHECK(w == 64);
    CHECK(gray.size() == 4096);
  }

  // files hold exactly what generate_scene produces for the same index
  auto [img0, lab0] = generate_scene(cfg, 0);
  ImageU8 expect = tensor_to_image(img0);
  std::vector<uint8_t> on_disk = read_file((dir / "images/000000.ppm").string());
  CHECK(on_disk == encode_ppm(expect));

  Dataset d = Dataset::open(dir.string());
  CHECK(d.size() == 3);
  CHECK(d.train_indices() == std::vector<int>{0, 1});
  CHECK(d.test_indices() == std::vector<int>{2});
  CHECK(same_bytes(d.sample(0).image, img0));
  CHECK(d.sample(0).labels == lab0);

  Sample s2 = load_sample(dir.string(), 2);
  CHECK(same_bytes(s2.image, d.sample(2).image));
  CHECK(s2.labels == d.sample(2).labels);
}

TEST_CASE("a flipped byte in a sample file fails its checksum by name") {
  SceneConfig cfg;
  cfg.seed = 22;
  fs::path dir = fresh_dir("corrupt");
  generate_dataset(cfg, 1, 1, dir.string());

  std::string victim = (dir / "labels/000001.pgm").string();
  std::vector<uint8_t> bytes = read_file(victim);
  bytes[bytes.size() - 1] ^= 0x01;
  write_file(victim, bytes);

  Dataset d = Dataset::open(dir.string());
  std::string msg = testutil::message_of([&] { d.sample(1); });
  CHECK(msg.find("checksum mismatch") != std::string::npos);
  CHECK(msg.find("labels/000001.pgm") != std::string::npos);
  CHECK_NOTHROW(d.sample(0));  // untouched sample still loads
}

TEST_CASE("out-of-range label bytes are rejected even with a matching crc") {
  SceneConfig cfg;
  cfg.seed = 23;
  fs::path dir = fresh_dir("badlabel");
  generate_dataset(cfg, 1, 0, dir.string());

  std::string victim = (dir / "labels/000000.pgm").string();
  std::vector<uint8_t> bytes = read_file(victim);
  bytes[bytes.size() - 1] = 8;  // one past the last valid class
  write_file(victim, bytes);

  json manifest = load_json_file((dir / "manifest.json").string());
  manifest["samples"][0]["crc32_label"] = crc32_of(bytes);
  save_json_file((dir / "manifest.json").string(), manifest);

  Dataset d = Dataset::open(dir.string());
  std::string msg = testutil::message_of([&] { d.sample(0); });
  CHECK(msg.find("label value 8") != std::string::npos);
}

TEST_CASE("thread count does not change any output byte") {
  SceneConfig cfg;
  cfg.seed = 24;
  fs::path d1 = fresh_dir("t1");
  fs::path d3 = fresh_dir("t3");
  generate_dataset(cfg, 4, 2, d1.string(), 1);
  generate_dataset(cfg, 4, 2, d3.string(), 3);

  CHECK(read_file((d1 / "manifest.json").string()) ==
        read_file((d3 / "manifest.json").string()));
  for (int i = 0; i < 6; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%06d", i);
    CHECK(read_file((d1 / ("images/" + std::string(name) + ".ppm")).string()) ==
          read_file((d3 / ("images/" + std::string(name) + ".ppm")).string()));
    CHECK(read_file((d1 / ("labels/" + std::string(name) + ".pgm")).string()) ==
          read_file((d3 / ("labels/" + std::string(name) + ".pgm")).string()));
  }
}

TEST_CASE("styles produce visibly different imagery") {
  auto mean_rgb = [](SceneStyle s) {
    SceneConfig cfg;
    cfg.style = s;
    cfg.seed = 25;
    std::array<double, 3> mean{};
    for (uint64_t i = 0; i < 8; ++i) {
      auto [img, labels] = generate_scene(cfg, i);
      const float* d = img.data();
      const int hw = cfg.height * cfg.width;
      for (int ch = 0; ch < 3; ++ch) {
        for (int q = 0; q < hw; ++q) mean[ch] += d[ch * hw + q];
      }
    }
    for (double& v : mean) v /= 8.0 * 64 * 64;
    return mean;
  };
  std::array<double, 3> a = mean_rgb(SceneStyle::A);
  std::array<double, 3> b = mean_rgb(SceneStyle::B);
  std::array<double, 3> c = mean_rgb(SceneStyle::C);
  auto l1 = [](const std::array<double, 3>& u, const std::array<double, 3>& v) {
    return std::abs(u[0] - v[0]) + std::abs(u[1] - v[1]) + std::abs(u[2] - v[2]);
  };
  CHECK(l1(a, b) > 10.0);
  CHECK(l1(a, c) > 10.0);
  CHECK(l1(b, c) > 10.0);
}

TEST_CASE("scene config json round trip and unknown key rejection") {
  SceneConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.style = SceneStyle::C;
  cfg.buildings = {1, 2};
  cfg.noise_sigma = 3.5f;
  cfg.seed = 9;
  SceneConfig back = scene_config_from_json(scene_config_to_json(cfg));
  CHECK(back.width == 32);
  CHECK(back.style == SceneStyle::C);
  CHECK(back.buildings.lo == 1);
  CHECK(back.buildings.hi == 2);
  CHECK(back.noise_sigma == 3.5f);
  CHECK(back.seed == 9);

  json j = scene_config_to_json(cfg);
  j["stlye"] = "A";
  CHECK_THROWS_AS(scene_config_from_json(j), ConfigError);
}
