#pragma once

// Training objectives. Three levels: pixel (L1 on both super-resolved views),
// structure (mean patchwise SSIM dissimilarity), and semantics (identity
// features + adversarial realism), plus total-variation smoothing and the
// column-orthogonality penalty used when fusing several side views.
//
// Everything returns an ad::Var so a training step can backpropagate through
// the full objective; evaluation-only metrics live in evaluate.hpp.

#include <frontsr/autodiff.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace frontsr::losses {

inline constexpr double kSsimC1 = 1e-4;  // (0.01)^2
inline constexpr double kSsimC2 = 9e-4;  // (0.03)^2

struct LossWeights {
  double pixel = 20.0;
  double patch = 5.0;
  double adv = 0.8;
  double id = 0.1;
  double tv = 1e-4;
  double orth = 0.1;
};

// Scalars produced per sample; leave a member undefined to mark it skipped
// (legal only when its weight is zero).
struct LossComponents {
  ad::Var pixel, patch, adv, id, tv, orth;
};

// L1 over both image pairs: per-cell absolute differences are summed over
// channels and both pairs, then averaged over the H*W grid.
inline ad::Var pixel_loss(const ad::Var& hp, const ad::Var& sp, const ad::Var& hf,
                          const ad::Var& sf) {
  check(hp.value().rank() == 3, "pixel_loss: images must be (C,H,W)");
  check(hp.value().same_shape(sp.value()) && hp.value().same_shape(hf.value()) &&
            hp.value().same_shape(sf.value()),
        "pixel_loss: all four images must share one shape");
  const double grid = double(hp.value().dim(1) * hp.value().dim(2));
  ad::Var side = ad::sum(ad::abs(ad::sub(hp, sp)));
  ad::Var front = ad::sum(ad::abs(ad::sub(hf, sf)));
  return ad::scale(ad::add(side, front), 1.0 / grid);
}

// Similarity index of two equal-shape patches, population statistics.
inline ad::Var ssim_index(const ad::Var& x, const ad::Var& y, double c1 = kSsimC1,
                          double c2 = kSsimC2) {
  check(x.value().same_shape(y.value()), "ssim_index: patch shapes differ");
  check(c1 > 0.0 && c2 > 0.0, "ssim_index: stability constants must be positive");
  const double inv_n = 1.0 / double(x.value().size());
  ad::Var mx = ad::scale(ad::sum(x), inv_n);
  ad::Var my = ad::scale(ad::sum(y), inv_n);
  ad::Var mxx = ad::scale(ad::sum(ad::mul(x, x)), inv_n);
  ad::Var myy = ad::scale(ad::sum(ad::mul(y, y)), inv_n);
  ad::Var mxy = ad::scale(ad::sum(ad::mul(x, y)), inv_n);
  ad::Var vx = ad::sub(mxx, ad::mul(mx, mx));
  ad::Var vy = ad::sub(myy, ad::mul(my, my));
  ad::Var cxy = ad::sub(mxy, ad::mul(mx, my));
  ad::Var a1 = ad::shift(ad::scale(ad::mul(mx, my), 2.0), c1);
  ad::Var a2 = ad::shift(ad::scale(cxy, 2.0), c2);
  ad::Var b1 = ad::shift(ad::add(ad::mul(mx, mx), ad::mul(my, my)), c1);
  ad::Var b2 = ad::shift(ad::add(vx, vy), c2);
  return ad::div(ad::mul(a1, a2), ad::mul(b1, b2));
}

// Mean of (1 - ssim) over K x K windows tiled with the given stride, each
// channel independently.
inline ad::Var patch_loss(const ad::Var& sf, const ad::Var& hf, int k = 8, int stride = 8) {
  check(sf.value().rank() == 3, "patch_loss: images must be (C,H,W)");
  check(sf.value().same_shape(hf.value()), "patch_loss: image shapes differ");
  const std::size_t C = sf.value().dim(0), H = sf.value().dim(1), W = sf.value().dim(2);
  check(k >= 1 && stride >= 1, "patch_loss: window and stride must be positive");
  check(std::size_t(k) <= H && std::size_t(k) <= W, "patch_loss: window larger than image");
  check(std::size_t(stride) <= H && std::size_t(stride) <= W,
        "patch_loss: stride larger than image");
  ad::Var acc;
  std::size_t patches = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h0 = 0; h0 + k <= H; h0 += std::size_t(stride))
      for (std::size_t w0 = 0; w0 + k <= W; w0 += std::size_t(stride)) {
        ad::Var s = ssim_index(ad::crop_patch(sf, c, h0, w0, std::size_t(k)),
                               ad::crop_patch(hf, c, h0, w0, std::size_t(k)));
        ad::Var dis = ad::shift(ad::scale(s, -1.0), 1.0);
        acc = acc.defined() ? ad::add(acc, dis) : dis;
        ++patches;
      }
  return ad::scale(acc, 1.0 / double(patches));
}

// Mean squared neighbor differences, horizontal then vertical per channel.
inline ad::Var tv_loss(const ad::Var& img) {
  check(img.value().rank() == 3, "tv_loss: image must be (C,H,W)");
  const std::size_t C = img.value().dim(0), H = img.value().dim(1), W = img.value().dim(2);
  check(H >= 2 && W >= 2, "tv_loss: image must be at least 2x2");
  const double inv = 1.0 / double(C * H * W);
  const Tensor& x = img.value();
  double acc = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w + 1 < W; ++w) {
        const double d = x.at(c, h, w + 1) - x.at(c, h, w);
        acc += d * d;
      }
    for (std::size_t h = 0; h + 1 < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const double d = x.at(c, h + 1, w) - x.at(c, h, w);
        acc += d * d;
      }
  }
  auto n = ad::detail::make_node(Tensor::from({1}, {acc * inv}), {img});
  if (n->requires_grad) {
    ad::Node* self = n.get();
    ad::Node* px = img.node().get();
    n->backprop = [self, px, C, H, W, inv]() {
      Tensor& da = ad::grad_buf(px);
      const double g = self->grad[0] * inv;
      const Tensor& v = px->value;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w + 1 < W; ++w) {
            const double d = v.at(c, h, w + 1) - v.at(c, h, w);
            da[(c * H + h) * W + w + 1] += 2.0 * d * g;
            da[(c * H + h) * W + w] -= 2.0 * d * g;
          }
        for (std::size_t h = 0; h + 1 < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const double d = v.at(c, h + 1, w) - v.at(c, h, w);
            da[(c * H + h + 1) * W + w] += 2.0 * d * g;
            da[(c * H + h) * W + w] -= 2.0 * d * g;
          }
      }
    };
  }
  return ad::Var(std::move(n));
}

// Squared L2 distance between the two feature vectors the (frozen) embedder
// produces for the synthesized and the reference frontal image.
template <class Embedder>
ad::Var identity_loss(const Embedder& emb, const ad::Var& sf, const ad::Var& hf) {
  auto [p1s, p2s] = emb.features(sf);
  auto [p1h, p2h] = emb.features(hf);
  ad::Var d1 = ad::sub(p1s, p1h);
  ad::Var d2 = ad::sub(p2s, p2h);
  return ad::add(ad::sum(ad::mul(d1, d1)), ad::sum(ad::mul(d2, d2)));
}

namespace detail {

inline ad::Var mean_vars(std::vector<ad::Var> terms) {
  ad::Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, 1.0 / double(terms.size()));
}

}  // namespace detail

// Discriminator objective: -[ E log D(real) + E log(1 - D(fake)) ]. Fakes are
// detached so this gradient never reaches the generator.
template <class Disc>
ad::Var adversarial_d_loss(Disc&& d, const std::vector<ad::Var>& reals,
                           const std::vector<ad::Var>& fakes) {
  check(!reals.empty() && !fakes.empty(), "adversarial_d_loss: empty batch");
  std::vector<ad::Var> rt, ft;
  for (const ad::Var& r : reals) rt.push_back(ad::log_clamped(d(r), 1e-7, 1.0 - 1e-7));
  for (const ad::Var& f : fakes) {
    ad::Var q = ad::shift(ad::scale(d(ad::detach(f)), -1.0), 1.0);  // 1 - D(fake)
    ft.push_back(ad::log_clamped(q, 1e-7, 1.0 - 1e-7));
  }
  return ad::scale(ad::add(detail::mean_vars(std::move(rt)), detail::mean_vars(std::move(ft))),
                   -1.0);
}

// Non-saturating generator objective: -E log D(fake); gradients flow into the
// fakes (and so into the generator).
template <class Disc>
ad::Var adversarial_g_loss(Disc&& d, const std::vector<ad::Var>& fakes) {
  check(!fakes.empty(), "adversarial_g_loss: empty batch");
  std::vector<ad::Var> ft;
  for (const ad::Var& f : fakes) ft.push_back(ad::log_clamped(d(f), 1e-7, 1.0 - 1e-7));
  return ad::scale(detail::mean_vars(std::move(ft)), -1.0);
}

enum class OrthVariant { literal, srip };

// Mean over feature blocks of the squared Frobenius norm of the Gram matrix
// (literal) or of its deviation from the identity (srip; zero exactly on
// orthonormal columns, the training default).
inline ad::Var orthogonal_loss(const std::vector<ad::Var>& blocks, OrthVariant variant) {
  check(!blocks.empty(), "orthogonal_loss: no feature blocks");
  const Shape shape = blocks[0].value().shape();
  check(shape.size() == 2, "orthogonal_loss: blocks must be (d,k) matrices");
  check(shape[0] >= shape[1], "orthogonal_loss: need d >= k for a meaningful penalty");
  const std::size_t k = shape[1];
  Tensor eye({k, k});
  for (std::size_t i = 0; i < k; ++i) eye.at2(i, i) = 1.0;
  ad::Var acc;
  for (const ad::Var& f : blocks) {
    check(f.value().shape() == shape, "orthogonal_loss: inconsistent block shapes");
    ad::Var gram = ad::matmul(ad::transpose(f), f);
    if (variant == OrthVariant::srip) gram = ad::sub(gram, ad::constant(eye));
    ad::Var term = ad::sum(ad::mul(gram, gram));
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  return ad::scale(acc, 1.0 / double(blocks.size()));
}

// Weighted sum of the component losses, in the fixed order pixel, patch,
// adversarial, identity, tv, (orth in multi-image mode). Zero-weight terms may
// be left undefined and are skipped without building graph nodes.
inline ad::Var total_g_loss(const LossWeights& w, const LossComponents& c, bool multi_image) {
  struct Term {
    const char* name;
    double weight;
    const ad::Var* var;
    bool active;
  };
  const Term terms[] = {
      {"pixel", w.pixel, &c.pixel, true},
      {"patch", w.patch, &c.patch, true},
      {"adv", w.adv, &c.adv, true},
      {"id", w.id, &c.id, true},
      {"tv", w.tv, &c.tv, true},
      {"orth", w.orth, &c.orth, multi_image},
  };
  for (const Term& t : terms)
    check(std::isfinite(t.weight) && t.weight >= 0.0,
          std::string("total_g_loss: weight for '") + t.name + "' must be finite and >= 0");
  ad::Var acc;
  for (const Term& t : terms) {
    if (!t.active || t.weight == 0.0) continue;
    check(t.var->defined(), std::string("total_g_loss: component '") + t.name +
                                "' required by a positive weight but not provided");
    check_runtime(std::isfinite(t.var->scalar()),
                  std::string("total_g_loss: non-finite loss component '") + t.name + "'");
    ad::Var scaled = ad::scale(*t.var, t.weight);
    acc = acc.defined() ? ad::add(acc, scaled) : scaled;
  }
  return acc.defined() ? acc : ad::constant(Tensor({1}));
}

}  // namespace frontsr::losses
