#pragma once

// Raw (non-differentiated) tensor kernels: 2-D convolution with zero padding,
// pixel shuffle and its inverse, Catmull-Rom bicubic resampling, and masked
// products. The autodiff layer wraps these and adds the adjoint kernels that
// also live here.

#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace frontsr::ops {

using i64 = long long;

namespace detail {

// Inclusive output-column range [lo, hi] with 0 <= ow*s + off < w_in.
inline void col_bounds(i64 off, i64 stride, i64 w_in, i64 w_out,
                       i64& lo, i64& hi) {
  lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  hi = (w_in - 1 - off) / stride;
  if (hi > w_out - 1) hi = w_out - 1;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  check(x.rank() == 3, "conv2d: input must be (C,H,W)");
  check(w.rank() == 4, "conv2d: kernel must be (C_out,C_in,k,k)");
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: padding must be >= 0");
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == cin, "conv2d: kernel C_in " + std::to_string(w.dim(1)) +
                             " does not match input channels " + std::to_string(cin));
  if (bias.defined()) check(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bias shape mismatch");
  const i64 oh_n = (i64(H) + 2 * pad - i64(kh)) / stride + 1;
  const i64 ow_n = (i64(W) + 2 * pad - i64(kw)) / stride + 1;
  check(oh_n >= 1 && ow_n >= 1, "conv2d: kernel larger than padded input");

  Tensor out({cout, std::size_t(oh_n), std::size_t(ow_n)});
  for (std::size_t co = 0; co < cout; ++co) {
    if (bias.defined()) {
      double bv = bias[co];
      for (long long i = 0; i < oh_n * ow_n; ++i) out.data()[co * oh_n * ow_n + i] = bv;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t r = 0; r < kh; ++r) {
        for (std::size_t c = 0; c < kw; ++c) {
          const double wv = w.at4(co, ci, r, c);
          const i64 off = i64(c) - pad;
          long long lo, hi;
          detail::col_bounds(off, stride, i64(W), ow_n, lo, hi);
          if (lo > hi) continue;
          for (long long oh = 0; oh < oh_n; ++oh) {
            const i64 ih = oh * stride + i64(r) - pad;
            if (ih < 0 || ih >= i64(H)) continue;
            const double* xrow = x.data() + (ci * H + std::size_t(ih)) * W;
            double* orow = out.data() + (co * std::size_t(oh_n) + std::size_t(oh)) * std::size_t(ow_n);
            for (long long ow = lo; ow <= hi; ++ow) orow[ow] += wv * xrow[ow * stride + off];
          }
        }
      }
    }
  }
  return out;
}

inline Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w, int stride, int pad,
                                    const Shape& in_shape) {
  const std::size_t cin = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const i64 oh_n = i64(gout.dim(1)), ow_n = i64(gout.dim(2));
  Tensor din(in_shape);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t r = 0; r < kh; ++r) {
        for (std::size_t c = 0; c < kw; ++c) {
          const double wv = w.at4(co, ci, r, c);
          const i64 off = i64(c) - pad;
          long long lo, hi;
          detail::col_bounds(off, stride, i64(W), ow_n, lo, hi);
          if (lo > hi) continue;
          for (long long oh = 0; oh < oh_n; ++oh) {
            const i64 ih = oh * stride + i64(r) - pad;
            if (ih < 0 || ih >= i64(H)) continue;
            double* drow = din.data() + (ci * H + std::size_t(ih)) * W;
            const double* grow =
                gout.data() + (co * std::size_t(oh_n) + std::size_t(oh)) * std::size_t(ow_n);
            for (long long ow = lo; ow <= hi; ++ow) drow[ow * stride + off] += wv * grow[ow];
          }
        }
      }
    }
  }
  return din;
}

inline Tensor conv2d_backward_weight(const Tensor& gout, const Tensor& x, int stride, int pad,
                                     const Shape& w_shape) {
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t cout = w_shape[0], kh = w_shape[2], kw = w_shape[3];
  const i64 oh_n = i64(gout.dim(1)), ow_n = i64(gout.dim(2));
  Tensor dw(w_shape);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t r = 0; r < kh; ++r) {
        for (std::size_t c = 0; c < kw; ++c) {
          const i64 off = i64(c) - pad;
          long long lo, hi;
          detail::col_bounds(off, stride, i64(W), ow_n, lo, hi);
          if (lo > hi) continue;
          double acc = 0.0;
          for (long long oh = 0; oh < oh_n; ++oh) {
            const i64 ih = oh * stride + i64(r) - pad;
            if (ih < 0 || ih >= i64(H)) continue;
            const double* xrow = x.data() + (ci * H + std::size_t(ih)) * W;
            const double* grow =
                gout.data() + (co * std::size_t(oh_n) + std::size_t(oh)) * std::size_t(ow_n);
            for (long long ow = lo; ow <= hi; ++ow) acc += xrow[ow * stride + off] * grow[ow];
          }
          dw.at4(co, ci, r, c) = acc;
        }
      }
    }
  }
  return dw;
}

inline Tensor conv2d_backward_bias(const Tensor& gout) {
  const std::size_t cout = gout.dim(0), n = gout.dim(1) * gout.dim(2);
  Tensor db({cout});
  for (std::size_t co = 0; co < cout; ++co) {
    double acc = 0.0;
    const double* g = gout.data() + co * n;
    for (std::size_t i = 0; i < n; ++i) acc += g[i];
    db[co] = acc;
  }
  return db;
}

inline Tensor pixel_shuffle(const Tensor& x, int r) {
  check(x.rank() == 3, "pixel_shuffle: input must be (C,H,W)");
  check(r >= 1, "pixel_shuffle: r must be >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t r2 = std::size_t(r) * std::size_t(r);
  check(C % r2 == 0, "pixel_shuffle: channels " + std::to_string(C) + " not divisible by r^2");
  Tensor out({C / r2, H * r, W * r});
  for (std::size_t c = 0; c < C / r2; ++c)
    for (std::size_t i = 0; i < std::size_t(r); ++i)
      for (std::size_t j = 0; j < std::size_t(r); ++j)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            out.at(c, h * r + i, w * r + j) = x.at(c * r2 + i * r + j, h, w);
  return out;
}

inline Tensor pixel_unshuffle(const Tensor& x, int r) {
  check(x.rank() == 3, "pixel_unshuffle: input must be (C,H,W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  check(H % std::size_t(r) == 0 && W % std::size_t(r) == 0,
        "pixel_unshuffle: spatial dims not divisible by r");
  const std::size_t r2 = std::size_t(r) * std::size_t(r);
  Tensor out({C * r2, H / r, W / r});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < std::size_t(r); ++i)
      for (std::size_t j = 0; j < std::size_t(r); ++j)
        for (std::size_t h = 0; h < H / r; ++h)
          for (std::size_t w = 0; w < W / r; ++w)
            out.at(c * r2 + i * r + j, h, w) = x.at(c, h * r + i, w * r + j);
  return out;
}

namespace detail {

// Catmull-Rom kernel (a = -0.5), evaluated at |t|.
inline double cubic_cr(double t) {
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

struct ResampleTap {
  std::size_t idx[4];
  double w[4];  // normalized weights
  std::size_t near;
};

// One tap table per output coordinate along an axis. Evaluation uses the
// anchored form out = x[near] + sum_i w[i]*(x[i] - x[near]), which preserves
// constant inputs bit-exactly.
inline std::vector<ResampleTap> resample_taps(std::size_t n_in, std::size_t n_out, long long num,
                                              long long den) {
  std::vector<ResampleTap> taps(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    // Origin-aligned grid: integer-factor downsampling lands on source
    // samples (weights collapse to one), so upsample-then-downsample by the
    // same factor is exactly the identity.
    const double s = double(o) * double(den) / double(num);
    const double base = std::floor(s);
    const double t = s - base;
    ResampleTap tap;
    double wsum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const i64 raw = (long long)base - 1 + k;
      tap.idx[k] = std::size_t(std::clamp(raw, 0ll, (long long)n_in - 1));
      tap.w[k] = cubic_cr(std::abs(s - double(raw)));
      wsum += tap.w[k];
    }
    for (int k = 0; k < 4; ++k) tap.w[k] /= wsum;
    const i64 near_raw = (t <= 0.5) ? (long long)base : (long long)base + 1;
    tap.near = std::size_t(std::clamp(near_raw, 0ll, (long long)n_in - 1));
    taps[o] = tap;
  }
  return taps;
}

}  // namespace detail

// Resample by the rational factor num/den (e.g. 1/4 maps 128 -> 32).
// Catmull-Rom bicubic, edge-clamped, separable (width pass then height pass).
inline Tensor bicubic_resample(const Tensor& x, long long num, long long den) {
  check(x.rank() == 3, "bicubic_resample: input must be (C,H,W)");
  check(num >= 1 && den >= 1, "bicubic_resample: factor must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  check((i64(H) * num) % den == 0 && (i64(W) * num) % den == 0,
        "bicubic_resample: factor does not produce integer output dims");
  const std::size_t OH = std::size_t(i64(H) * num / den);
  const std::size_t OW = std::size_t(i64(W) * num / den);
  check(OH >= 1 && OW >= 1, "bicubic_resample: non-positive output dims");

  const auto wtaps = detail::resample_taps(W, OW, num, den);
  Tensor mid({C, H, OW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h) {
      const double* row = x.data() + (c * H + h) * W;
      double* orow = mid.data() + (c * H + h) * OW;
      for (std::size_t o = 0; o < OW; ++o) {
        const auto& tp = wtaps[o];
        const double anchor = row[tp.near];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.w[k] * (row[tp.idx[k]] - anchor);
        orow[o] = anchor + acc;
      }
    }

  const auto htaps = detail::resample_taps(H, OH, num, den);
  Tensor out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t o = 0; o < OH; ++o) {
      const auto& tp = htaps[o];
      double* orow = out.data() + (c * OH + o) * OW;
      const double* near_row = mid.data() + (c * H + tp.near) * OW;
      const double* rows[4];
      for (int k = 0; k < 4; ++k) rows[k] = mid.data() + (c * H + tp.idx[k]) * OW;
      for (std::size_t w = 0; w < OW; ++w) {
        const double anchor = near_row[w];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.w[k] * (rows[k][w] - anchor);
        orow[w] = anchor + acc;
      }
    }
  return out;
}

inline void check_mask(const Tensor& mask, std::size_t H, std::size_t W) {
  check(mask.rank() == 3 && mask.dim(0) == 1, "mask must have shape (1,H,W)");
  check(mask.dim(1) == H && mask.dim(2) == W, "mask spatial dims do not match image");
  for (std::size_t i = 0; i < mask.size(); ++i)
    check(mask[i] == 0.0 || mask[i] == 1.0, "mask must be binary (values in {0,1})");
}

inline Tensor masked_product(const Tensor& img, const Tensor& mask) {
  check(img.rank() == 3, "masked_product: image must be (C,H,W)");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  check_mask(mask, H, W);
  Tensor out({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i)
      out.data()[c * H * W + i] = img.data()[c * H * W + i] * mask.data()[i];
  return out;
}

}  // namespace frontsr::ops
