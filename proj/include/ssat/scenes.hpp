#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssat/jsonio.hpp"
#include "ssat/labelmap.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

// Fixed 8-class street set.
enum ClassId : uint8_t {
  kRoad = 0,
  kSidewalk = 1,
  kBuilding = 2,
  kSky = 3,
  kCar = 4,
  kPerson = 5,
  kRider = 6,
  kVoid = 7,
};

enum class SceneStyle { A, B, C };

std::string style_name(SceneStyle s);
SceneStyle style_from_name(const std::string& name);

struct CountRange {
  int lo = 0;
  int hi = 0;
};

struct SceneConfig {
  int width = 64;
  int height = 64;
  int num_classes = 8;
  SceneStyle style = SceneStyle::A;
  CountRange buildings{2, 4};
  CountRange cars{1, 3};
  CountRange figures{1, 4};  // person + rider blobs
  CountRange void_patches{0, 2};
  float noise_sigma = 8.0f;
  uint64_t seed = 0;

  void validate() const;
};

json scene_config_to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const json& j);

// Base colors used when rasterizing scenes; also the default palette for
// rendering label maps.
const std::array<std::array<uint8_t, 3>, 8>& style_palette(SceneStyle s);

std::pair<Tensor, LabelMap> generate_scene(const SceneConfig& cfg, uint64_t index);

struct ManifestEntry {
  uint64_t index = 0;
  std::string image;
  std::string label;
  uint32_t crc32_image = 0;
  uint32_t crc32_label = 0;
};

struct DatasetManifest {
  int version = 1;
  SceneConfig scene_config;
  int n_train = 0;
  int n_test = 0;
  std::vector<ManifestEntry> samples;
};

/// Samples are independent of generation order, so `threads` workers may
/// rasterize and write them concurrently; the manifest is written last by the
/// caller thread. Output bytes do not depend on the thread count.
DatasetManifest generate_dataset(const SceneConfig& cfg, int n_train, int n_test,
                                 const std::string& out_dir, int threads = 1);

struct Sample {
  Tensor image;  // 3 x h x w, f32 in [0,255], integer-valued
  LabelMap labels;
};

Sample load_sample(const std::string& dataset_dir, uint64_t index);

class Dataset;

/// Copies the selected samples into an n x 3 x h x w batch tensor.
Tensor batch_images(const Dataset& data, const std::vector<int>& indices);
std::vector<LabelMap> batch_labels(const Dataset& data, const std::vector<int>& indices);

// Manifest-backed view of a generated dataset directory. Samples are loaded
// (and checksum-verified) once, then served from memory.
class Dataset {
 public:
  static Dataset open(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const SceneConfig& config() const { return manifest_.scene_config; }
  int n_train() const { return manifest_.n_train; }
  int n_test() const { return manifest_.n_test; }
  int size() const { return manifest_.n_train + manifest_.n_test; }

  const Sample& sample(int index) const;
  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;

 private:
  std::string dir_;
  DatasetManifest manifest_;
  mutable std::vector<Sample> cache_;
  mutable std::vector<char> loaded_;
};

}  // namespace ssat
