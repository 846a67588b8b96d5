#pragma once

#include <cstdint>
#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

/// h x w grid of class identifiers.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> ids;  // row-major, size h*w

  LabelMap() = default;
  LabelMap(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), ids(static_cast<size_t>(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * w + x]; }
  int64_t size() const { return static_cast<int64_t>(ids.size()); }
  bool operator==(const LabelMap& o) const = default;
};

/// Argmax over the channel axis of c x h x w logits (first index wins ties).
LabelMap argmax_labels(const Tensor& logits_chw);

/// Batch variant for n x c x h x w logits.
std::vector<LabelMap> argmax_labels_batch(const Tensor& logits_nchw);

}  // namespace ssat
