// Image quality metrics: PSNR on [0,1]-range images and the tiled SSIM
// evaluation metric. Both are plain scalar functions (no gradients); the SSIM
// tile statistics reuse the differentiable index from losses.hpp.
#pragma once

#include <frontsr/autodiff.hpp>
#include <frontsr/losses.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <cstddef>

namespace frontsr::eval {

inline constexpr double kPsnrCap = 99.0;  // reported for identical images (zero MSE)

inline double psnr_from_mse(double mse) {
  check(mse >= 0.0, "psnr: negative mean squared error");
  if (mse <= 0.0) return kPsnrCap;
  const double db = 10.0 * std::log10(1.0 / mse);
  return db > kPsnrCap ? kPsnrCap : db;
}

// Peak signal-to-noise ratio with peak value 1.0, in decibels.
inline double psnr(const Tensor& x, const Tensor& y) {
  check(x.same_shape(y), "psnr: image shapes differ");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    se += d * d;
  }
  return psnr_from_mse(se / double(x.size()));
}

// Mean SSIM index over non-overlapping 8x8 tiles, averaged across channels.
// Pixels in the right/bottom margin that do not fill a tile are ignored.
inline double ssim_metric(const Tensor& x, const Tensor& y) {
  check(x.same_shape(y), "ssim_metric: image shapes differ");
  check(x.rank() == 3, "ssim_metric: expected (C, H, W) images");
  constexpr std::size_t k = 8;
  const std::size_t channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  check(h >= k && w >= k, "ssim_metric: images must be at least 8x8");
  const ad::Var vx = ad::constant(x);
  const ad::Var vy = ad::constant(y);
  double sum = 0.0;
  std::size_t tiles = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t h0 = 0; h0 + k <= h; h0 += k)
      for (std::size_t w0 = 0; w0 + k <= w; w0 += k) {
        sum += losses::ssim_index(ad::crop_patch(vx, c, h0, w0, k), ad::crop_patch(vy, c, h0, w0, k))
                   .scalar();
        ++tiles;
      }
  return sum / double(tiles);
}

}  // namespace frontsr::eval
