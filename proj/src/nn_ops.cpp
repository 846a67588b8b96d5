#include "ssat/nn_ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace ssat {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Unpacks one image (c x h x w) into a (c*k*k) x (ho*wo) patch matrix.
void im2col(const float* src, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, float* col) {
  const int64_t howo = static_cast<int64_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    const float* plane = src + static_cast<int64_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + (static_cast<int64_t>(ci) * k * k + ky * k + kx) * howo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          float* drow = dst + static_cast<int64_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::memset(drow, 0, sizeof(float) * static_cast<size_t>(wo));
            continue;
          }
          const float* srow = plane + static_cast<int64_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
void col2im_add(const float* col, int c, int h, int w, int k, int stride, int pad,
                int ho, int wo, float* dst) {
  const int64_t howo = static_cast<int64_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    float* plane = dst + static_cast<int64_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* srcrow = col + (static_cast<int64_t>(ci) * k * k + ky * k + kx) * howo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* drow = plane + static_cast<int64_t>(iy) * w;
          const float* srow = srcrow + static_cast<int64_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  require(input.ndim() == 4, "conv2d: input must be n x c x h x w, got " +
                                 shape_str(input.shape()));
  require(weight.ndim() == 4, "conv2d: weight must be cout x cin x k x k, got " +
                                  shape_str(weight.shape()));
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin,
          "conv2d: channel mismatch, input " + shape_str(input.shape()) +
              " vs weight " + shape_str(weight.shape()));
  require(weight.dim(3) == k, "conv2d: kernel must be square, got " +
                                  shape_str(weight.shape()));
  require(k % 2 == 1, "conv2d: kernel size must be odd");
  require(bias.ndim() == 1 && bias.dim(0) == cout,
          "conv2d: bias must have one value per output channel");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(h + 2 * padding >= k && w + 2 * padding >= k,
          "conv2d: kernel larger than padded input");

  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  const int64_t howo = static_cast<int64_t>(ho) * wo;
  const int kk = cin * k * k;

  Tensor out = Tensor::zeros({n, cout, ho, wo});
  std::vector<float> col(static_cast<size_t>(kk) * howo);
  MapConst W(weight.data(), cout, kk);
  for (int i = 0; i < n; ++i) {
    im2col(input.data() + static_cast<int64_t>(i) * cin * h * w, cin, h, w, k,
           stride, padding, ho, wo, col.data());
    MapConst C(col.data(), kk, howo);
    MapMat O(out.data() + static_cast<int64_t>(i) * cout * howo, cout, howo);
    O.noalias() = W * C;
    for (int co = 0; co < cout; ++co) O.row(co).array() += bias.data()[co];
  }

  if (input.has_hp() || weight.has_hp() || bias.has_hp()) {
    // plain double loops; only finite-difference probes reach this path
    out.enable_hp();
    HpView hx(input), hwt(weight), hbs(bias);
    double* hout = out.hp_data();
    for (int i = 0; i < n; ++i) {
      for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            double acc = hbs[co];
            for (int ci = 0; ci < cin; ++ci) {
              for (int ky = 0; ky < k; ++ky) {
                int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  int ix = ox * stride - padding + kx;
                  if (ix < 0 || ix >= w) continue;
                  acc += hwt[((static_cast<int64_t>(co) * cin + ci) * k + ky) * k + kx] *
                         hx[((static_cast<int64_t>(i) * cin + ci) * h + iy) * w + ix];
                }
              }
            }
            hout[((static_cast<int64_t>(i) * cout + co) * ho + oy) * wo + ox] = acc;
          }
        }
      }
    }
  }

  Graph* g = Graph::current();
  if (g && (input.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    g->record([input, weight, bias, out, stride, padding]() mutable {
      if (!out.has_grad()) return;  // nothing downstream consumed this conv
      const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
      const int cout = weight.dim(0), k = weight.dim(2);
      const int ho = out.dim(2), wo = out.dim(3);
      const int64_t howo = static_cast<int64_t>(ho) * wo;
      const int kk = cin * k * k;
      std::vector<float> col(static_cast<size_t>(kk) * howo);
      std::vector<float> colgrad;
      MapConst W(weight.data(), cout, kk);
      auto gout = out.grad_span();
      if (input.requires_grad()) colgrad.resize(static_cast<size_t>(kk) * howo);
      if (weight.requires_grad()) weight.ensure_grad();
      if (bias.requires_grad()) bias.ensure_grad();
      if (input.requires_grad()) input.ensure_grad();
      for (int i = 0; i < n; ++i) {
        MapConst GO(gout.data() + static_cast<int64_t>(i) * cout * howo, cout, howo);
        if (weight.requires_grad() || input.requires_grad()) {
          im2col(input.data() + static_cast<int64_t>(i) * cin * h * w, cin, h, w,
                 k, stride, padding, ho, wo, col.data());
        }
        if (weight.requires_grad()) {
          MapConst C(col.data(), kk, howo);
          MapMat GW(weight.grad_span().data(), cout, kk);
          GW.noalias() += GO * C.transpose();
        }
        if (bias.requires_grad()) {
          // plain loop: Eigen's .sum() reduction order depends on buffer
          // alignment, which would break bit-exact reruns
          auto bg = bias.grad_span();
          const float* grow = gout.data() + static_cast<int64_t>(i) * cout * howo;
          for (int co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (int64_t p = 0; p < howo; ++p) acc += grow[static_cast<int64_t>(co) * howo + p];
            bg[co] += static_cast<float>(acc);
          }
        }
        if (input.requires_grad()) {
          MapMat CG(colgrad.data(), kk, howo);
          CG.noalias() = W.transpose() * GO;
          col2im_add(colgrad.data(), cin, h, w, k, stride, padding, ho, wo,
                     input.grad_span().data() + static_cast<int64_t>(i) * cin * h * w);
        }
      }
    });
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& input, int factor) {
  require(input.ndim() == 4, "upsample_bilinear: input must be n x c x h x w");
  require(factor >= 2, "upsample_bilinear: factor must be >= 2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = h * factor, wo = w * factor;

  // half-pixel source coordinates, borders clamped
  struct Lerp {
    int i0, i1;
    float t;
  };
  auto make_table = [factor](int out_size, int in_size) {
    std::vector<Lerp> t(static_cast<size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
      float s = (o + 0.5f) / factor - 0.5f;
      int i0 = static_cast<int>(std::floor(s));
      float frac = s - i0;
      int i1 = i0 + 1;
      if (i0 < 0) i0 = 0;
      if (i1 < 0) i1 = 0;
      if (i0 > in_size - 1) i0 = in_size - 1;
      if (i1 > in_size - 1) i1 = in_size - 1;
      t[static_cast<size_t>(o)] = {i0, i1, frac};
    }
    return t;
  };
  auto ytab = make_table(ho, h);
  auto xtab = make_table(wo, w);

  Tensor out = Tensor::zeros({n, c, ho, wo});
  for (int i = 0; i < n; ++i) {
    for (int ci = 0; ci < c; ++ci) {
      const float* src = input.data() + (static_cast<int64_t>(i) * c + ci) * h * w;
      float* dst = out.data() + (static_cast<int64_t>(i) * c + ci) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        const Lerp& ly = ytab[static_cast<size_t>(oy)];
        const float* r0 = src + static_cast<int64_t>(ly.i0) * w;
        const float* r1 = src + static_cast<int64_t>(ly.i1) * w;
        float* drow = dst + static_cast<int64_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) {
          const Lerp& lx = xtab[static_cast<size_t>(ox)];
          float top = r0[lx.i0] * (1.0f - lx.t) + r0[lx.i1] * lx.t;
          float bot = r1[lx.i0] * (1.0f - lx.t) + r1[lx.i1] * lx.t;
          drow[ox] = top * (1.0f - ly.t) + bot * ly.t;
        }
      }
    }
  }

  if (input.has_hp()) {
    out.enable_hp();
    HpView hx(input);
    double* hbase = out.hp_data();
    for (int i = 0; i < n; ++i) {
      for (int ci = 0; ci < c; ++ci) {
        const int64_t src = (static_cast<int64_t>(i) * c + ci) * h * w;
        double* dst = hbase + (static_cast<int64_t>(i) * c + ci) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const Lerp& ly = ytab[static_cast<size_t>(oy)];
          const double ty = static_cast<double>(ly.t);
          for (int ox = 0; ox < wo; ++ox) {
            const Lerp& lx = xtab[static_cast<size_t>(ox)];
            const double tx = static_cast<double>(lx.t);
            double top = hx[src + static_cast<int64_t>(ly.i0) * w + lx.i0] * (1.0 - tx) +
                         hx[src + static_cast<int64_t>(ly.i0) * w + lx.i1] * tx;
            double bot = hx[src + static_cast<int64_t>(ly.i1) * w + lx.i0] * (1.0 - tx) +
                         hx[src + static_cast<int64_t>(ly.i1) * w + lx.i1] * tx;
            dst[static_cast<int64_t>(oy) * wo + ox] = top * (1.0 - ty) + bot * ty;
          }
        }
      }
    }
  }

  Graph* g = Graph::current();
  if (g && input.requires_grad()) {
    out.set_requires_grad(true);
    g->record([input, out, ytab, xtab]() mutable {
      const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
      const int ho = out.dim(2), wo = out.dim(3);
      input.ensure_grad();
      auto gout = out.grad_span();
      float* gin = input.grad_span().data();
      for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
          float* gsrc = gin + (static_cast<int64_t>(i) * c + ci) * h * w;
          const float* gdst = gout.data() + (static_cast<int64_t>(i) * c + ci) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const Lerp& ly = ytab[static_cast<size_t>(oy)];
            for (int ox = 0; ox < wo; ++ox) {
              const Lerp& lx = xtab[static_cast<size_t>(ox)];
              float gv = gdst[static_cast<int64_t>(oy) * wo + ox];
              gsrc[static_cast<int64_t>(ly.i0) * w + lx.i0] += gv * (1.0f - ly.t) * (1.0f - lx.t);
              gsrc[static_cast<int64_t>(ly.i0) * w + lx.i1] += gv * (1.0f - ly.t) * lx.t;
              gsrc[static_cast<int64_t>(ly.i1) * w + lx.i0] += gv * ly.t * (1.0f - lx.t);
              gsrc[static_cast<int64_t>(ly.i1) * w + lx.i1] += gv * ly.t * lx.t;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, int k, int stride) {
  require(input.ndim() == 4, "maxpool2d: input must be n x c x h x w");
  require(k == stride, "maxpool2d: only non-overlapping windows (k == stride)");
  require(k >= 1, "maxpool2d: window must be >= 1");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % stride == 0 && w % stride == 0,
          "maxpool2d: spatial dims " + shape_str(input.shape()) +
              " not divisible by stride " + std::to_string(stride));
  const int ho = h / stride, wo = w / stride;

  Tensor out = Tensor::zeros({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(out.numel()));
  int64_t oidx = 0;
  for (int i = 0; i < n; ++i) {
    for (int ci = 0; ci < c; ++ci) {
      const float* src = input.data() + (static_cast<int64_t>(i) * c + ci) * h * w;
      float* dst = out.data() + (static_cast<int64_t>(i) * c + ci) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          // ties resolve to the first element in scan order
          float best = src[static_cast<int64_t>(oy * stride) * w + ox * stride];
          int32_t best_at = oy * stride * w + ox * stride;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              int32_t at = (oy * stride + ky) * w + ox * stride + kx;
              if (src[at] > best) {
                best = src[at];
                best_at = at;
              }
            }
          }
          dst[static_cast<int64_t>(oy) * wo + ox] = best;
          (*argmax)[static_cast<size_t>(oidx++)] = best_at;
        }
      }
    }
  }

  if (input.has_hp()) {
    out.enable_hp();
    HpView hx(input);
    double* hout = out.hp_data();
    for (int i = 0; i < n; ++i) {
      for (int ci = 0; ci < c; ++ci) {
        const int64_t src = (static_cast<int64_t>(i) * c + ci) * h * w;
        double* dst = hout + (static_cast<int64_t>(i) * c + ci) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            double best = hx[src + static_cast<int64_t>(oy * stride) * w + ox * stride];
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                double v = hx[src + static_cast<int64_t>(oy * stride + ky) * w +
                              ox * stride + kx];
                if (v > best) best = v;
              }
            }
            dst[static_cast<int64_t>(oy) * wo + ox] = best;
          }
        }
      }
    }
  }

  Graph* g = Graph::current();
  if (g && input.requires_grad()) {
    out.set_requires_grad(true);
    g->record([input, out, argmax]() mutable {
      const int c = input.dim(1), h = input.dim(2), w = input.dim(3);
      const int ho = out.dim(2), wo = out.dim(3);
      const int n = input.dim(0);
      input.ensure_grad();
      auto gout = out.grad_span();
      float* gin = input.grad_span().data();
      int64_t oidx = 0;
      for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
          float* gplane = gin + (static_cast<int64_t>(i) * c + ci) * h * w;
          const float* gdst = gout.data() + (static_cast<int64_t>(i) * c + ci) * ho * wo;
          for (int64_t p = 0; p < static_cast<int64_t>(ho) * wo; ++p) {
            gplane[(*argmax)[static_cast<size_t>(oidx)]] += gdst[p];
            ++oidx;
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 4 && b.ndim() == 4, "concat_channels: inputs must be 4-d");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;

  Tensor out = Tensor::zeros({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + static_cast<int64_t>(i) * (ca + cb) * hw,
                a.data() + static_cast<int64_t>(i) * ca * hw,
                sizeof(float) * static_cast<size_t>(ca * hw));
    std::memcpy(out.data() + static_cast<int64_t>(i) * (ca + cb) * hw + ca * hw,
                b.data() + static_cast<int64_t>(i) * cb * hw,
                sizeof(float) * static_cast<size_t>(cb * hw));
  }

  if (a.has_hp() || b.has_hp()) {
    out.enable_hp();
    HpView ha(a), hb(b);
    double* hout = out.hp_data();
    for (int i = 0; i < n; ++i) {
      double* dst = hout + static_cast<int64_t>(i) * (ca + cb) * hw;
      for (int64_t j = 0; j < ca * hw; ++j) dst[j] = ha[static_cast<int64_t>(i) * ca * hw + j];
      for (int64_t j = 0; j < cb * hw; ++j) dst[ca * hw + j] = hb[static_cast<int64_t>(i) * cb * hw + j];
    }
  }

  Graph* g = Graph::current();
  if (g && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    g->record([a, b, out]() mutable {
      const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
      const int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
      auto gout = out.grad_span();
      if (a.requires_grad()) {
        auto ga = a.grad_span();
        for (int i = 0; i < n; ++i) {
          const float* src = gout.data() + static_cast<int64_t>(i) * (ca + cb) * hw;
          float* dst = ga.data() + static_cast<int64_t>(i) * ca * hw;
          for (int64_t j = 0; j < ca * hw; ++j) dst[j] += src[j];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_span();
        for (int i = 0; i < n; ++i) {
          const float* src =
              gout.data() + static_cast<int64_t>(i) * (ca + cb) * hw + ca * hw;
          float* dst = gb.data() + static_cast<int64_t>(i) * cb * hw;
          for (int64_t j = 0; j < cb * hw; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy_pixelwise(const Tensor& logits, const std::vector<LabelMap>& labels,
                               std::span<const float> weights) {
  require(logits.ndim() == 4, "cross_entropy_pixelwise: logits must be n x c x h x w");
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  require(static_cast<int>(labels.size()) == n,
          "cross_entropy_pixelwise: " + std::to_string(labels.size()) +
              " label maps for batch of " + std::to_string(n));
  const int64_t hw = static_cast<int64_t>(h) * w;
  if (!weights.empty()) {
    require(static_cast<int64_t>(weights.size()) == n * hw,
            "cross_entropy_pixelwise: weight map must have one entry per pixel");
    for (float wv : weights) require(wv >= 0.0f, "cross_entropy_pixelwise: negative weight");
  }
  for (int i = 0; i < n; ++i) {
    require(labels[static_cast<size_t>(i)].h == h && labels[static_cast<size_t>(i)].w == w,
            "cross_entropy_pixelwise: label map size mismatch at image " + std::to_string(i));
  }

  const bool recording = Graph::current() != nullptr && logits.requires_grad();
  std::shared_ptr<std::vector<float>> probs;
  if (recording) probs = std::make_shared<std::vector<float>>(logits.numel());

  double total = 0.0;
  std::vector<float> ex(static_cast<size_t>(c));
  for (int i = 0; i < n; ++i) {
    const float* base = logits.data() + static_cast<int64_t>(i) * c * hw;
    const LabelMap& lm = labels[static_cast<size_t>(i)];
    for (int64_t p = 0; p < hw; ++p) {
      int y = lm.ids[static_cast<size_t>(p)];
      if (y >= c) {
        throw std::invalid_argument(
            "cross_entropy_pixelwise: label " + std::to_string(y) + " >= " +
            std::to_string(c) + " classes at image " + std::to_string(i) +
            " pixel " + std::to_string(p));
      }
      float wgt = weights.empty() ? 1.0f : weights[static_cast<size_t>(i * hw + p)];
      float m = base[p];
      for (int j = 1; j < c; ++j) m = std::max(m, base[static_cast<int64_t>(j) * hw + p]);
      float sum = 0.0f;
      for (int j = 0; j < c; ++j) {
        float e = std::exp(base[static_cast<int64_t>(j) * hw + p] - m);
        ex[static_cast<size_t>(j)] = e;
        sum += e;
      }
      float lse = m + std::log(sum);
      total += static_cast<double>(wgt) * (lse - base[static_cast<int64_t>(y) * hw + p]);
      if (recording) {
        float* pr = probs->data() + static_cast<int64_t>(i) * c * hw;
        for (int j = 0; j < c; ++j) pr[static_cast<int64_t>(j) * hw + p] = ex[static_cast<size_t>(j)] / sum;
      }
    }
  }

  Tensor out = Tensor::from_data({1}, {static_cast<float>(total)});
  if (logits.has_hp()) {
    HpView hl(logits);
    double htotal = 0.0;
    for (int i = 0; i < n; ++i) {
      const int64_t base = static_cast<int64_t>(i) * c * hw;
      const LabelMap& lm = labels[static_cast<size_t>(i)];
      for (int64_t p = 0; p < hw; ++p) {
        int y = lm.ids[static_cast<size_t>(p)];
        double wgt = weights.empty()
                         ? 1.0
                         : static_cast<double>(weights[static_cast<size_t>(i * hw + p)]);
        double m = hl[base + p];
        for (int j = 1; j < c; ++j) m = std::max(m, hl[base + static_cast<int64_t>(j) * hw + p]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(hl[base + static_cast<int64_t>(j) * hw + p] - m);
        htotal += wgt * (m + std::log(s) - hl[base + static_cast<int64_t>(y) * hw + p]);
      }
    }
    out.enable_hp();
    out.hp_data()[0] = htotal;
  }
  if (recording) {
    out.set_requires_grad(true);
    std::vector<float> wcopy(weights.begin(), weights.end());
    Graph::current()->record([logits, labels, out, probs, wcopy]() mutable {
      const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
      const int64_t hw = static_cast<int64_t>(h) * w;
      float gup = out.grad_span()[0];
      logits.ensure_grad();
      float* gl = logits.grad_span().data();
      for (int i = 0; i < n; ++i) {
        const float* pr = probs->data() + static_cast<int64_t>(i) * c * hw;
        float* gbase = gl + static_cast<int64_t>(i) * c * hw;
        const LabelMap& lm = labels[static_cast<size_t>(i)];
        for (int64_t p = 0; p < hw; ++p) {
          int y = lm.ids[static_cast<size_t>(p)];
          float wgt = wcopy.empty() ? 1.0f : wcopy[static_cast<size_t>(i * hw + p)];
          if (wgt == 0.0f) continue;
          float gw = gup * wgt;
          for (int j = 0; j < c; ++j) {
            float d = pr[static_cast<int64_t>(j) * hw + p] - (j == y ? 1.0f : 0.0f);
            gbase[static_cast<int64_t>(j) * hw + p] += gw * d;
          }
        }
      }
    });
  }
  return out;
}

LabelMap argmax_labels(const Tensor& logits) {
  require(logits.ndim() == 3, "argmax_labels: logits must be c x h x w");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  LabelMap lm(h, w);
  const float* base = logits.data();
  for (int64_t p = 0; p < hw; ++p) {
    int best = 0;
    float bv = base[p];
    for (int j = 1; j < c; ++j) {
      float v = base[static_cast<int64_t>(j) * hw + p];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    lm.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
  }
  return lm;
}

std::vector<LabelMap> argmax_labels_batch(const Tensor& logits) {
  require(logits.ndim() == 4, "argmax_labels_batch: logits must be n x c x h x w");
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  std::vector<LabelMap> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Tensor view = Tensor::from_data(
        {c, h, w},
        std::vector<float>(logits.data() + static_cast<int64_t>(i) * c * h * w,
                           logits.data() + static_cast<int64_t>(i + 1) * c * h * w));
    out.push_back(argmax_labels(view));
  }
  return out;
}

}  // namespace ssat
