#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssat/labelmap.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

/// 8-bit RGB image, row-major interleaved.
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> rgb;  // size h*w*3
};

/// Binary P6 / P5 with maxval 255. Parsers are strict: exactly these headers,
/// '#' comments allowed between tokens.
std::vector<uint8_t> encode_ppm(const ImageU8& img);
ImageU8 decode_ppm(const std::vector<uint8_t>& bytes, const std::string& origin);
std::vector<uint8_t> encode_pgm(int h, int w, const std::vector<uint8_t>& gray);
std::vector<uint8_t> decode_pgm(const std::vector<uint8_t>& bytes, int& h, int& w,
                                const std::string& origin);

void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

uint32_t crc32_of(const std::vector<uint8_t>& bytes);

/// 3 x h x w float tensor in [0,255] -> interleaved bytes (values rounded).
ImageU8 tensor_to_image(const Tensor& chw);
Tensor image_to_tensor(const ImageU8& img);

}  // namespace ssat
