#include "ssat/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssat {

namespace {

void append_text(std::vector<uint8_t>& out, const std::string& s) {
  out.insert(out.end(), s.begin(), s.end());
}

struct PnmParser {
  const std::vector<uint8_t>& bytes;
  const std::string& origin;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("malformed PNM '" + origin + "': " + why);
  }

  void skip_space() {
    while (pos < bytes.size()) {
      uint8_t c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int next_int() {
    skip_space();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
      fail("expected integer in header");
    }
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 24) fail("header value out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }

  // magic, width, height, maxval, then exactly one whitespace byte
  void header(const char* magic, int& w, int& h) {
    if (bytes.size() < 2 || bytes[0] != static_cast<uint8_t>(magic[0]) ||
        bytes[1] != static_cast<uint8_t>(magic[1])) {
      fail(std::string("expected ") + magic + " magic");
    }
    pos = 2;
    w = next_int();
    h = next_int();
    int maxval = next_int();
    if (w <= 0 || h <= 0) fail("non-positive dimensions");
    if (maxval != 255) fail("maxval must be 255");
    if (pos >= bytes.size()) fail("missing payload");
    uint8_t c = bytes[pos];
    if (c != ' ' && c != '\t' && c != '\r' && c != '\n') fail("expected whitespace before payload");
    ++pos;
  }
};

}  // namespace

std::vector<uint8_t> encode_ppm(const ImageU8& img) {
  std::vector<uint8_t> out;
  append_text(out, "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n");
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

ImageU8 decode_ppm(const std::vector<uint8_t>& bytes, const std::string& origin) {
  PnmParser p{bytes, origin};
  ImageU8 img;
  p.header("P6", img.w, img.h);
  size_t need = static_cast<size_t>(img.w) * img.h * 3;
  if (bytes.size() - p.pos != need) {
    p.fail("payload is " + std::to_string(bytes.size() - p.pos) + " bytes, expected " +
           std::to_string(need));
  }
  img.rgb.assign(bytes.begin() + static_cast<long>(p.pos), bytes.end());
  return img;
}

std::vector<uint8_t> encode_pgm(int h, int w, const std::vector<uint8_t>& gray) {
  if (gray.size() != static_cast<size_t>(h) * w) {
    throw std::invalid_argument("encode_pgm: payload size mismatch");
  }
  std::vector<uint8_t> out;
  append_text(out, "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n");
  out.insert(out.end(), gray.begin(), gray.end());
  return out;
}

std::vector<uint8_t> decode_pgm(const std::vector<uint8_t>& bytes, int& h, int& w,
                                const std::string& origin) {
  PnmParser p{bytes, origin};
  p.header("P5", w, h);
  size_t need = static_cast<size_t>(w) * h;
  if (bytes.size() - p.pos != need) {
    p.fail("payload is " + std::to_string(bytes.size() - p.pos) + " bytes, expected " +
           std::to_string(need));
  }
  return {bytes.begin() + static_cast<long>(p.pos), bytes.end()};
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed for '" + path + "'");
  }
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed for '" + path + "'");
  return bytes;
}

uint32_t crc32_of(const std::vector<uint8_t>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(
      crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

ImageU8 tensor_to_image(const Tensor& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) {
    throw std::invalid_argument("tensor_to_image: expected 3 x h x w");
  }
  ImageU8 img;
  img.h = chw.dim(1);
  img.w = chw.dim(2);
  img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
  const int64_t hw = static_cast<int64_t>(img.h) * img.w;
  const float* d = chw.data();
  for (int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) {
      float v = std::round(d[c * hw + p]);
      v = v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v);
      img.rgb[static_cast<size_t>(p) * 3 + c] = static_cast<uint8_t>(v);
    }
  }
  return img;
}

Tensor image_to_tensor(const ImageU8& img) {
  Tensor t = Tensor::zeros({3, img.h, img.w});
  const int64_t hw = static_cast<int64_t>(img.h) * img.w;
  float* d = t.data();
  for (int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) {
      d[c * hw + p] = static_cast<float>(img.rgb[static_cast<size_t>(p) * 3 + c]);
    }
  }
  return t;
}

}  // namespace ssat
