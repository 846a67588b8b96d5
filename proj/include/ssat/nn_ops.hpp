#pragma once

#include <span>
#include <vector>

#include "ssat/labelmap.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

/// 2-D convolution, NCHW input, OIHW weight (square odd kernel), per-output
/// bias. Output spatial size floor((h + 2*padding - k)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// Bilinear upsampling by an integer factor >= 2, align-corners=false.
Tensor upsample_bilinear(const Tensor& input, int factor);

/// Non-overlapping max pooling (k == stride); h and w must divide by stride.
/// Gradient routes to the first maximal element in scan order.
Tensor maxpool2d(const Tensor& input, int k = 2, int stride = 2);

/// Concatenates along the channel axis; n, h, w must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Sum over batch and pixels of weight_k * (-log softmax(logits)_{label_k}).
/// `weights` is one f32 per pixel (n*h*w, row-major per image); empty means
/// all ones. Stable via per-pixel max subtraction.
Tensor cross_entropy_pixelwise(const Tensor& logits_nchw,
                               const std::vector<LabelMap>& labels,
                               std::span<const float> weights = {});

}  // namespace ssat
