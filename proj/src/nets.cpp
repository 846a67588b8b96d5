#include "ssat/nets.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ssat/nn_ops.hpp"
#include "ssat/rng.hpp"

namespace ssat {

using json = nlohmann::json;

int ModelConfig::channels(int level) const {
  double c = std::round(base_width * std::pow(2.0, level) * width_multiplier);
  return std::max(4, static_cast<int>(c));
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
  if (in_channels < 1) throw std::invalid_argument("ModelConfig: in_channels must be >= 1");
  if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be >= 1");
  const float m = width_multiplier;
  if (m != 1.0f && m != 0.5f && m != 0.25f) {
    throw std::invalid_argument("ModelConfig: width_multiplier must be 1.0, 0.5 or 0.25");
  }
}

Tensor& Model::param(const std::string& name) {
  for (auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw std::out_of_range("model has no parameter '" + name + "'");
}

const Tensor& Model::param(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw std::out_of_range("model has no parameter '" + name + "'");
}

namespace {

// Kaiming-uniform for relu fan-in; biases start at zero.
void add_conv(Model& m, Rng& rng, const std::string& name, int cout, int cin, int k) {
  float bound = std::sqrt(6.0f / static_cast<float>(cin * k * k));
  Tensor w = Tensor::zeros({cout, cin, k, k}, true);
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  Tensor b = Tensor::zeros({cout}, true);
  m.params.emplace_back(name + ".weight", w);
  m.params.emplace_back(name + ".bias", b);
}

void check_input(const Model& model, const Tensor& image) {
  if (image.ndim() != 4 || image.dim(1) != model.config.in_channels) {
    throw std::invalid_argument("model expects n x " +
                                std::to_string(model.config.in_channels) +
                                " x h x w input");
  }
  if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
    throw std::invalid_argument("input spatial dims " + std::to_string(image.dim(2)) +
                                "x" + std::to_string(image.dim(3)) +
                                " must be divisible by 8");
  }
}

Tensor conv_of(const Model& m, const std::string& name, const Tensor& x, int stride,
               int pad) {
  return conv2d(x, m.param(name + ".weight"), m.param(name + ".bias"), stride, pad);
}

}  // namespace

Model build_target_fcn(const ModelConfig& config, uint64_t seed) {
  config.validate();
  if (config.kind != ModelKind::TargetFCN) {
    throw std::invalid_argument("build_target_fcn: config.kind mismatch");
  }
  Model m;
  m.config = config;
  m.seed = seed;
  Rng rng(mix_seed(seed, 0x7461726765746ull));  // "target"
  const int w0 = config.channels(0), w1 = config.channels(1), w2 = config.channels(2);
  add_conv(m, rng, "enc0", w0, config.in_channels, 3);
  add_conv(m, rng, "enc1", w1, w0, 3);
  add_conv(m, rng, "enc2", w2, w1, 3);
  add_conv(m, rng, "mid", w2, w2, 3);
  add_conv(m, rng, "dec2", w2, w2, 3);
  add_conv(m, rng, "dec1", w1, w2, 3);
  add_conv(m, rng, "dec0", w0, w1, 3);
  add_conv(m, rng, "head", config.num_classes, w0, 1);
  return m;
}

Model build_generator_unet(const ModelConfig& config, uint64_t seed) {
  config.validate();
  if (config.kind != ModelKind::GeneratorUNet) {
    throw std::invalid_argument("build_generator_unet: config.kind mismatch");
  }
  Model m;
  m.config = config;
  m.seed = seed;
  Rng rng(mix_seed(seed, 0x67656e657261746full));  // "generato"
  const int w0 = config.channels(0), w1 = config.channels(1), w2 = config.channels(2);
  add_conv(m, rng, "enc0", w0, config.in_channels, 3);
  add_conv(m, rng, "enc1", w1, w0, 3);
  add_conv(m, rng, "enc2", w2, w1, 3);
  add_conv(m, rng, "mid", w2, w2, 3);
  add_conv(m, rng, "dec2", w1, w2 + w2, 3);  // after concat with enc2 features
  add_conv(m, rng, "dec1", w0, w1 + w1, 3);  // after concat with enc1 features
  add_conv(m, rng, "dec0", w0, w0 + w0, 3);  // after concat with enc0 features
  add_conv(m, rng, "pert_head", 3, w0, 1);
  add_conv(m, rng, "reg_head", config.num_classes, w0, 1);
  return m;
}

Tensor forward_target(const Model& model, const Tensor& image) {
  if (model.config.kind != ModelKind::TargetFCN) {
    throw std::invalid_argument("forward_target: model is not a TargetFCN");
  }
  check_input(model, image);
  Tensor f0 = relu(conv_of(model, "enc0", image, 1, 1));          // w0 @ h
  Tensor f1 = relu(conv_of(model, "enc1", maxpool2d(f0), 1, 1));  // w1 @ h/2
  Tensor f2 = relu(conv_of(model, "enc2", maxpool2d(f1), 1, 1));  // w2 @ h/4
  Tensor f3 = relu(conv_of(model, "mid", maxpool2d(f2), 1, 1));   // w2 @ h/8
  Tensor d2 = relu(add(upsample_bilinear(conv_of(model, "dec2", f3, 1, 1), 2), f2));
  Tensor d1 = relu(add(upsample_bilinear(conv_of(model, "dec1", d2, 1, 1), 2), f1));
  Tensor d0 = relu(add(upsample_bilinear(conv_of(model, "dec0", d1, 1, 1), 2), f0));
  return conv_of(model, "head", d0, 1, 0);
}

GeneratorOutput forward_generator(const Model& model, const Tensor& image) {
  if (model.config.kind != ModelKind::GeneratorUNet) {
    throw std::invalid_argument("forward_generator: model is not a GeneratorUNet");
  }
  check_input(model, image);
  Tensor f0 = relu(conv_of(model, "enc0", image, 1, 1));          // w0 @ h
  Tensor f1 = relu(conv_of(model, "enc1", maxpool2d(f0), 1, 1));  // w1 @ h/2
  Tensor f2 = relu(conv_of(model, "enc2", maxpool2d(f1), 1, 1));  // w2 @ h/4
  Tensor f3 = relu(conv_of(model, "mid", maxpool2d(f2), 1, 1));   // w2 @ h/8
  Tensor d2 = relu(conv_of(model, "dec2", concat_channels(upsample_bilinear(f3, 2), f2), 1, 1));
  Tensor d1 = relu(conv_of(model, "dec1", concat_channels(upsample_bilinear(d2, 2), f1), 1, 1));
  Tensor d0 = relu(conv_of(model, "dec0", concat_channels(upsample_bilinear(d1, 2), f0), 1, 1));
  GeneratorOutput out;
  out.raw_perturbation = conv_of(model, "pert_head", d0, 1, 0);
  out.regularizer_logits = conv_of(model, "reg_head", d0, 1, 0);
  return out;
}

void freeze(Model& model) {
  model.frozen = true;
  for (auto& [name, t] : model.params) {
    t.set_requires_grad(false);
    t.clear_grad();
  }
}

int64_t count_params(const Model& model) {
  int64_t n = 0;
  for (const auto& [name, t] : model.params) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'S', 'S', 'A', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

struct Reader {
  std::ifstream f;
  uint64_t offset = 0;
  std::string path;

  void read(void* dst, size_t n, const char* what) {
    f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n) {
      throw std::runtime_error("checkpoint '" + path + "': truncated while reading " +
                               what + " at byte offset " + std::to_string(offset));
    }
    offset += n;
  }

  uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
};

std::string kind_name(ModelKind k) {
  return k == ModelKind::TargetFCN ? "target_fcn" : "generator_unet";
}

ModelKind kind_from_name(const std::string& s) {
  if (s == "target_fcn") return ModelKind::TargetFCN;
  if (s == "generator_unet") return ModelKind::GeneratorUNet;
  throw std::runtime_error("unknown model kind '" + s + "'");
}

void atomic_write(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed for '" + path + "'");
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    f.write(kMagic, 4);
    write_u32(f, kVersion);
    write_u32(f, static_cast<uint32_t>(model.params.size()));
    for (const auto& [name, t] : model.params) {
      write_u32(f, static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(f, static_cast<uint32_t>(t.ndim()));
      for (int d : t.shape()) write_u32(f, static_cast<uint32_t>(d));
      // f32 little-endian; this code assumes a little-endian host
      f.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * 4));
    }
    if (!f) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed for '" + path + "'");
  }

  json sidecar = {{"kind", kind_name(model.config.kind)},
                  {"in_channels", model.config.in_channels},
                  {"num_classes", model.config.num_classes},
                  {"base_width", model.config.base_width},
                  {"width_multiplier", model.config.width_multiplier},
                  {"seed", model.seed}};
  atomic_write(path + ".json", sidecar.dump(2) + "\n");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("missing checkpoint sidecar '" + path + ".json'");
  json sc = json::parse(side);
  ModelConfig config;
  config.kind = kind_from_name(sc.at("kind").get<std::string>());
  config.in_channels = sc.at("in_channels").get<int>();
  config.num_classes = sc.at("num_classes").get<int>();
  config.base_width = sc.at("base_width").get<int>();
  config.width_multiplier = sc.at("width_multiplier").get<float>();
  uint64_t seed = sc.at("seed").get<uint64_t>();

  Model model = config.kind == ModelKind::TargetFCN
                    ? build_target_fcn(config, seed)
                    : build_generator_unet(config, seed);

  Reader r;
  r.path = path;
  r.f.open(path, std::ios::binary);
  if (!r.f) throw std::runtime_error("cannot open checkpoint '" + path + "'");

  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint '" + path + "': bad magic at byte offset 0");
  }
  uint32_t version = r.read_u32("version");
  if (version != kVersion) {
    throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                             std::to_string(version) + " at byte offset 4");
  }
  uint32_t count = r.read_u32("tensor count");
  if (count != model.params.size()) {
    throw std::runtime_error("checkpoint '" + path + "': holds " + std::to_string(count) +
                             " tensors, config implies " +
                             std::to_string(model.params.size()));
  }
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.read_u32("name length");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "name");
    uint32_t ndim = r.read_u32("ndim");
    std::vector<int> dims(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      dims[d] = static_cast<int>(r.read_u32("dim"));
    }
    Tensor& dst = model.param(name);  // throws on unknown name
    if (dst.shape() != dims) {
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + name +
                               "' shape mismatch vs config");
    }
    r.read(dst.data(), static_cast<size_t>(dst.numel()) * 4, "tensor data");
  }
  // trailing bytes mean the file does not match its declared contents
  char extra;
  r.f.read(&extra, 1);
  if (r.f.gcount() == 1) {
    throw std::runtime_error("checkpoint '" + path + "': trailing bytes at offset " +
                             std::to_string(r.offset));
  }
  return model;
}

}  // namespace ssat
