// Training objectives: pixel / structural-patch / total-variation / identity /
// adversarial / orthogonality penalties and the weighted total. Expected
// values are frozen from closed-form evaluation; structural results are
// cross-checked against brute-force oracles computed inline.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <frontsr/autodiff.hpp>
#include <frontsr/gradcheck.hpp>
#include <frontsr/losses.hpp>
#include <frontsr/rng.hpp>
#include <frontsr/tensor.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

using frontsr::Shape;
using frontsr::Tensor;
namespace ad = frontsr::ad;
namespace ls = frontsr::losses;

namespace {

Tensor random_tensor(frontsr::Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values on a 1/256 grid so +0.5 and differences are exact in doubles.
Tensor dyadic_tensor(frontsr::Rng& rng, Shape shape, int max_steps) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(rng.index(max_steps)) / 256.0;
  return t;
}

// Plain-double SSIM over two equal-size value lists (population statistics);
// independent of the graph implementation under test.
double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double C1 = 1e-4, C2 = 9e-4;
  const double N = double(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double mx = sx / N, my = sy / N;
  const double vx = sxx / N - mx * mx, vy = syy / N - my * my, cxy = sxy / N - mx * my;
  return ((2.0 * (mx * my) + C1) * (2.0 * cxy + C2)) /
         (((mx * mx + my * my) + C1) * ((vx + vy) + C2));
}

// Toy two-stage embedder with frozen (constant) weights: p1 = W1 flat(img),
// p2 = W2 p1.
struct MockEmbedder {
  Tensor W1, W2;
  std::pair<ad::Var, ad::Var> features(const ad::Var& img) const {
    ad::Var x = ad::reshape(img, {img.value().size()});
    ad::Var p1 = ad::linear(x, ad::constant(W1), ad::constant(Tensor({W1.dim(0)})));
    ad::Var p2 = ad::linear(p1, ad::constant(W2), ad::constant(Tensor({W2.dim(0)})));
    return {p1, p2};
  }
};

// Probability head driven by a fixed weight image: sigmoid(<w, img>).
struct MockD {
  Tensor w;
  ad::Var operator()(const ad::Var& img) const {
    return ad::sigmoid(ad::sum(ad::mul(img, ad::constant(w))));
  }
};

}  // namespace

// ---- pixel loss -----------------------------------------------------------

TEST_CASE("pixel_loss: identical pairs give exactly zero") {
  frontsr::Rng rng(21);
  Tensor hp = random_tensor(rng, {3, 6, 5}, 0, 1);
  Tensor hf = random_tensor(rng, {3, 6, 5}, 0, 1);
  ad::Var v = ls::pixel_loss(ad::constant(hp), ad::constant(hp), ad::constant(hf),
                             ad::constant(hf));
  CHECK(v.scalar() == 0.0);
}

TEST_CASE("pixel_loss: constant +0.5 offsets on both pairs give exactly 1.0") {
  frontsr::Rng rng(22);
  Tensor hp = dyadic_tensor(rng, {1, 8, 8}, 100);  // values in [0, 100/256]
  Tensor hf = dyadic_tensor(rng, {1, 8, 8}, 100);
  Tensor sp = hp, sf = hf;
  for (std::size_t i = 0; i < sp.size(); ++i) sp[i] += 0.5;
  for (std::size_t i = 0; i < sf.size(); ++i) sf[i] += 0.5;
  ad::Var v = ls::pixel_loss(ad::constant(hp), ad::constant(sp), ad::constant(hf),
                             ad::constant(sf));
  CHECK(v.scalar() == 1.0);
}

TEST_CASE("pixel_loss: only the side-view pair off by 0.2") {
  frontsr::Rng rng(23);
  Tensor hp = random_tensor(rng, {1, 7, 9}, 0, 0.5);
  Tensor hf = random_tensor(rng, {1, 7, 9}, 0, 0.5);
  Tensor sp = hp;
  for (std::size_t i = 0; i < sp.size(); ++i) sp[i] += 0.2;
  ad::Var v = ls::pixel_loss(ad::constant(hp), ad::constant(sp), ad::constant(hf),
                             ad::constant(hf));
  CHECK(v.scalar() == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("pixel_loss: per-pixel differences sum over channels") {
  Tensor hp = Tensor::full({2, 4, 4}, 0.125);
  Tensor hf = Tensor::full({2, 4, 4}, 0.25);
  Tensor sp = Tensor::full({2, 4, 4}, 0.625);  // +0.5 in both channels
  Tensor sf = Tensor::full({2, 4, 4}, 0.75);
  ad::Var v = ls::pixel_loss(ad::constant(hp), ad::constant(sp), ad::constant(hf),
                             ad::constant(sf));
  CHECK(v.scalar() == 2.0);  // (0.5 + 0.5) side + (0.5 + 0.5) frontal, per grid cell
}

TEST_CASE("pixel_loss: shape mismatch rejected; differing inputs give > 0") {
  Tensor a({1, 4, 4}), b({1, 4, 5});
  CHECK_THROWS(ls::pixel_loss(ad::constant(a), ad::constant(b), ad::constant(a),
                              ad::constant(a)));
  frontsr::Rng rng(24);
  Tensor hp = random_tensor(rng, {1, 4, 4}, 0, 1);
  Tensor sp = hp;
  sp[5] += 0.25;
  ad::Var v = ls::pixel_loss(ad::constant(hp), ad::constant(sp), ad::constant(hp),
                             ad::constant(hp));
  CHECK(v.scalar() > 0.0);
}

TEST_CASE("pixel_loss: gradcheck against all four images") {
  frontsr::Rng rng(25);
  Tensor hp = random_tensor(rng, {2, 4, 4}, 0.1, 0.9);
  Tensor sp = random_tensor(rng, {2, 4, 4}, 0.1, 0.9);
  Tensor hf = random_tensor(rng, {2, 4, 4}, 0.1, 0.9);
  Tensor sf = random_tensor(rng, {2, 4, 4}, 0.1, 0.9);
  double err = frontsr::gradcheck(
      [](const std::vector<ad::Var>& in) {
        return ls::pixel_loss(in[0], in[1], in[2], in[3]);
      },
      {hp, sp, hf, sf});
  CHECK(err < 1e-4);
}

// ---- SSIM index -----------------------------------------------------------

TEST_CASE("ssim_index: self-similarity is exactly 1, including constant patches") {
  frontsr::Rng rng(26);
  Tensor x = random_tensor(rng, {8, 8}, 0, 1);
  CHECK(ls::ssim_index(ad::constant(x), ad::constant(x)).scalar() == 1.0);
  Tensor c = Tensor::full({8, 8}, 0.37);
  CHECK(ls::ssim_index(ad::constant(c), ad::constant(c)).scalar() == 1.0);
  Tensor z({8, 8});
  CHECK(ls::ssim_index(ad::constant(z), ad::constant(z)).scalar() == 1.0);
}

TEST_CASE("ssim_index: frozen closed-form cases") {
  // constant 0 vs constant 1: C1*C2 / ((1+C1)*C2) = C1 / (1+C1)
  Tensor z({4, 4});
  Tensor o = Tensor::full({4, 4}, 1.0);
  double v = ls::ssim_index(ad::constant(z), ad::constant(o)).scalar();
  CHECK(v == doctest::Approx(9.999000099990002e-05).epsilon(1e-12));
  // anticorrelated 2x2 checkerboard columns
  Tensor x = Tensor::from({2, 2}, {0.0, 1.0, 0.0, 1.0});
  Tensor y = Tensor::from({2, 2}, {1.0, 0.0, 1.0, 0.0});
  double a = ls::ssim_index(ad::constant(x), ad::constant(y)).scalar();
  CHECK(a == doctest::Approx(-0.9964064683569573).epsilon(1e-14));
}

TEST_CASE("ssim_index: symmetric, bounded, and matches the oracle") {
  frontsr::Rng rng(27);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(rng, {8, 8}, 0, 1);
    Tensor y = random_tensor(rng, {8, 8}, 0, 1);
    double xy = ls::ssim_index(ad::constant(x), ad::constant(y)).scalar();
    double yx = ls::ssim_index(ad::constant(y), ad::constant(x)).scalar();
    CHECK(xy == doctest::Approx(yx).epsilon(1e-12));
    CHECK(std::fabs(xy) <= 1.0 + 1e-12);
    std::vector<double> xv(x.data(), x.data() + x.size());
    std::vector<double> yv(y.data(), y.data() + y.size());
    CHECK(xy == doctest::Approx(ssim_oracle(xv, yv)).epsilon(1e-12));
  }
}

TEST_CASE("ssim_index: gradcheck wrt both patches") {
  frontsr::Rng rng(28);
  Tensor x = random_tensor(rng, {4, 4}, 0.2, 0.8);
  Tensor y = random_tensor(rng, {4, 4}, 0.2, 0.8);
  double err = frontsr::gradcheck(
      [](const std::vector<ad::Var>& in) { return ls::ssim_index(in[0], in[1]); }, {x, y});
  CHECK(err < 1e-4);
}

// ---- patch loss -----------------------------------------------------------

TEST_CASE("patch_loss: identical images give exactly zero") {
  frontsr::Rng rng(29);
  Tensor img = random_tensor(rng, {1, 16, 16}, 0, 1);
  CHECK(ls::patch_loss(ad::constant(img), ad::constant(img), 8, 8).scalar() == 0.0);
}

TEST_CASE("patch_loss: 1/P normalization pinned by a single differing tile") {
  // 128x128, K = 8, stride 8 => 256 tiles; corrupt exactly one tile.
  Tensor hf = Tensor::full({1, 128, 128}, 0.5);
  Tensor sf = hf;
  std::vector<double> tx, ty;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      sf.at(0, 16 + i, 24 + j) = ((i + j) % 2) ? 0.9 : 0.1;
      tx.push_back(sf.at(0, 16 + i, 24 + j));
      ty.push_back(0.5);
    }
  double expected = (1.0 - ssim_oracle(tx, ty)) / 256.0;
  double got = ls::patch_loss(ad::constant(sf), ad::constant(hf), 8, 8).scalar();
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("patch_loss: equals the mean of per-tile dissimilarities (oracle)") {
  frontsr::Rng rng(30);
  for (Shape shape : {Shape{1, 16, 16}, Shape{2, 24, 24}}) {
    Tensor sf = random_tensor(rng, shape, 0, 1);
    Tensor hf = random_tensor(rng, shape, 0, 1);
    const std::size_t K = 8;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < shape[0]; ++c)
      for (std::size_t h0 = 0; h0 + K <= shape[1]; h0 += K)
        for (std::size_t w0 = 0; w0 + K <= shape[2]; w0 += K) {
          std::vector<double> xv, yv;
          for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) {
              xv.push_back(sf.at(c, h0 + i, w0 + j));
              yv.push_back(hf.at(c, h0 + i, w0 + j));
            }
          acc += 1.0 - ssim_oracle(xv, yv);
          ++count;
        }
    double got = ls::patch_loss(ad::constant(sf), ad::constant(hf), 8, 8).scalar();
    CHECK(got == doctest::Approx(acc / double(count)).epsilon(1e-12));
    CHECK(count == (shape[0] == 1 ? 4u : 18u));
  }
}

TEST_CASE("patch_loss: window larger than the image rejected") {
  Tensor img({1, 8, 8});
  CHECK_THROWS(ls::patch_loss(ad::constant(img), ad::constant(img), 16, 8));
  CHECK_THROWS(ls::patch_loss(ad::constant(img), ad::constant(img), 8, 16));
  CHECK_THROWS(ls::patch_loss(ad::constant(Tensor({1, 8, 8})), ad::constant(Tensor({1, 8, 9})),
                              8, 8));
}

TEST_CASE("patch_loss: gradcheck wrt both images") {
  frontsr::Rng rng(31);
  Tensor sf = random_tensor(rng, {1, 16, 16}, 0.2, 0.8);
  Tensor hf = random_tensor(rng, {1, 16, 16}, 0.2, 0.8);
  double err = frontsr::gradcheck(
      [](const std::vector<ad::Var>& in) { return ls::patch_loss(in[0], in[1], 8, 8); },
      {sf, hf});
  CHECK(err < 1e-4);
}

// ---- total-variation loss ---------------------------------------------------

TEST_CASE("tv_loss: constant image gives exactly zero") {
  CHECK(ls::tv_loss(ad::constant(Tensor::full({3, 5, 5}, 0.42))).scalar() == 0.0);
}

TEST_CASE("tv_loss: frozen 2x2 example") {
  Tensor img = Tensor::from({1, 2, 2}, {0.0, 0.1, 0.0, 0.1});
  CHECK(ls::tv_loss(ad::constant(img)).scalar() == 0.005000000000000001);
}

TEST_CASE("tv_loss: quadratic homogeneity and nonnegativity") {
  frontsr::Rng rng(32);
  Tensor img = random_tensor(rng, {2, 6, 7}, 0, 1);
  Tensor scaled = img;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 3.0;
  double base = ls::tv_loss(ad::constant(img)).scalar();
  double big = ls::tv_loss(ad::constant(scaled)).scalar();
  CHECK(big == doctest::Approx(9.0 * base).epsilon(1e-12));
  CHECK(base > 0.0);
}

TEST_CASE("tv_loss: gradcheck") {
  frontsr::Rng rng(33);
  Tensor img = random_tensor(rng, {2, 5, 4}, 0, 1);
  double err = frontsr::gradcheck(
      [](const std::vector<ad::Var>& in) { return ls::tv_loss(in[0]); }, {img});
  CHECK(err < 1e-4);
}

// ---- identity loss ----------------------------------------------------------

TEST_CASE("identity_loss: identical images give exactly zero") {
  frontsr::Rng rng(34);
  MockEmbedder emb{random_tensor(rng, {5, 16}, -0.5, 0.5), random_tensor(rng, {3, 5}, -0.5, 0.5)};
  Tensor img = random_tensor(rng, {1, 4, 4}, 0, 1);
  CHECK(ls::identity_loss(emb, ad::constant(img), ad::constant(img)).scalar() == 0.0);
}

TEST_CASE("identity_loss: unit offset in the first feature vector only gives 1.0") {
  // W1 = identity so p1 = flat(img); W2 = 0 so p2 vanishes for both inputs.
  Tensor W1({16, 16});
  for (std::size_t i = 0; i < 16; ++i) W1.at2(i, i) = 1.0;
  MockEmbedder emb{W1, Tensor({3, 16})};
  frontsr::Rng rng(35);
  Tensor hf = dyadic_tensor(rng, {1, 4, 4}, 64);
  Tensor sf = hf;
  sf[0] += 1.0;  // p1 difference is exactly e_0
  CHECK(ls::identity_loss(emb, ad::constant(sf), ad::constant(hf)).scalar() == 1.0);
}

TEST_CASE("identity_loss: gradient reaches the synthesized image, not the embedder") {
  frontsr::Rng rng(36);
  MockEmbedder emb{random_tensor(rng, {5, 16}, -0.5, 0.5), random_tensor(rng, {3, 5}, -0.5, 0.5)};
  Tensor sf_t = random_tensor(rng, {1, 4, 4}, 0, 1);
  Tensor hf_t = random_tensor(rng, {1, 4, 4}, 0, 1);
  ad::Var sf = ad::leaf(sf_t);
  ad::Var loss = ls::identity_loss(emb, sf, ad::constant(hf_t));
  ad::backward(loss);
  double mag = 0.0;
  for (std::size_t i = 0; i < sf.grad().size(); ++i) mag += std::fabs(sf.grad()[i]);
  CHECK(mag > 0.0);
}

TEST_CASE("identity_loss: incompatible embedder dimensions rejected") {
  MockEmbedder emb{Tensor({5, 16}), Tensor({3, 5})};  // expects 16-element images
  Tensor small({1, 3, 3});
  Tensor ok({1, 4, 4});
  CHECK_THROWS(ls::identity_loss(emb, ad::constant(ok), ad::constant(small)));
}

TEST_CASE("identity_loss: gradcheck wrt both images") {
  frontsr::Rng rng(37);
  MockEmbedder emb{random_tensor(rng, {5, 16}, -0.5, 0.5), random_tensor(rng, {3, 5}, -0.5, 0.5)};
  Tensor sf = random_tensor(rng, {1, 4, 4}, 0.1, 0.9);
  Tensor hf = random_tensor(rng, {1, 4, 4}, 0.1, 0.9);
  double err = frontsr::gradcheck(
      [&emb](const std::vector<ad::Var>& in) { return ls::identity_loss(emb, in[0], in[1]); },
      {sf, hf});
  CHECK(err < 1e-4);
}

// ---- adversarial losses -----------------------------------------------------

TEST_CASE("adversarial: frozen values at D = 0.5 everywhere") {
  MockD d{Tensor({1, 4, 4})};  // zero weights -> sigmoid(0) = 0.5 exactly
  frontsr::Rng rng(38);
  std::vector<ad::Var> reals{ad::constant(random_tensor(rng, {1, 4, 4}, 0, 1))};
  std::vector<ad::Var> fakes{ad::constant(random_tensor(rng, {1, 4, 4}, 0, 1))};
  CHECK(ls::adversarial_d_loss(d, reals, fakes).scalar() == 1.3862943611198906);  // 2 ln 2
  CHECK(ls::adversarial_g_loss(d, fakes).scalar() == 0.6931471805599453);         // ln 2
}

TEST_CASE("adversarial: near-perfect discriminator drives d_loss to ~0") {
  // Saturating weights push sigmoid to the clamp boundaries.
  Tensor w = Tensor::full({1, 2, 2}, 500.0);
  MockD d{w};
  std::vector<ad::Var> reals{ad::constant(Tensor::full({1, 2, 2}, 1.0))};    // D -> 1
  std::vector<ad::Var> fakes{ad::constant(Tensor::full({1, 2, 2}, -1.0))};   // D -> 0
  CHECK(ls::adversarial_d_loss(d, reals, fakes).scalar() ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(ls::adversarial_d_loss(d, reals, fakes).scalar() < 1e-5);
}

TEST_CASE("adversarial: invariant to batch ordering") {
  frontsr::Rng rng(39);
  MockD d{random_tensor(rng, {1, 3, 3}, -0.3, 0.3)};
  std::vector<Tensor> r, f;
  for (int i = 0; i < 3; ++i) {
    r.push_back(random_tensor(rng, {1, 3, 3}, 0, 1));
    f.push_back(random_tensor(rng, {1, 3, 3}, 0, 1));
  }
  auto vars = [](const std::vector<Tensor>& ts, std::vector<int> order) {
    std::vector<ad::Var> out;
    for (int i : order) out.push_back(ad::constant(ts[std::size_t(i)]));
    return out;
  };
  double a = ls::adversarial_d_loss(d, vars(r, {0, 1, 2}), vars(f, {0, 1, 2})).scalar();
  double b = ls::adversarial_d_loss(d, vars(r, {2, 0, 1}), vars(f, {1, 2, 0})).scalar();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  double ga = ls::adversarial_g_loss(d, vars(f, {0, 1, 2})).scalar();
  double gb = ls::adversarial_g_loss(d, vars(f, {2, 1, 0})).scalar();
  CHECK(ga == doctest::Approx(gb).epsilon(1e-12));
}

TEST_CASE("adversarial: d_loss detaches fakes; g_loss reaches them") {
  frontsr::Rng rng(40);
  MockD d{random_tensor(rng, {1, 3, 3}, -0.3, 0.3)};
  Tensor rt = random_tensor(rng, {1, 3, 3}, 0, 1);
  Tensor ft = random_tensor(rng, {1, 3, 3}, 0, 1);

  ad::Var real = ad::leaf(rt);
  ad::Var fake = ad::leaf(ft);
  ad::Var dl = ls::adversarial_d_loss(d, {real}, {fake});
  ad::backward(dl);
  CHECK(real.grad().size() == rt.size());  // real side participates
  CHECK_THROWS(fake.grad());               // fake side cut from the record

  ad::Var fake2 = ad::leaf(ft);
  ad::Var gl = ls::adversarial_g_loss(d, {fake2});
  ad::backward(gl);
  double mag = 0.0;
  for (std::size_t i = 0; i < fake2.grad().size(); ++i) mag += std::fabs(fake2.grad()[i]);
  CHECK(mag > 0.0);
}

TEST_CASE("adversarial: gradcheck wrt real, fake, and discriminator weights") {
  frontsr::Rng rng(41);
  Tensor w = random_tensor(rng, {1, 3, 3}, -0.5, 0.5);
  Tensor rt = random_tensor(rng, {1, 3, 3}, 0, 1);
  Tensor ft = random_tensor(rng, {1, 3, 3}, 0, 1);
  // d_loss wrt real image and D weights only: fakes are detached by contract,
  // so their analytic gradient is zero by design and they must stay fixed here
  double e1 = frontsr::gradcheck(
      [&ft](const std::vector<ad::Var>& in) {
        auto dd = [&in](const ad::Var& img) {
          return ad::sigmoid(ad::sum(ad::mul(img, in[1])));
        };
        return ls::adversarial_d_loss(dd, {in[0]}, {ad::constant(ft)});
      },
      {rt, w});
  CHECK(e1 < 1e-4);
  // g_loss wrt fake image
  double e2 = frontsr::gradcheck(
      [&w](const std::vector<ad::Var>& in) {
        auto dd = [&w](const ad::Var& img) {
          return ad::sigmoid(ad::sum(ad::mul(img, ad::constant(w))));
        };
        return ls::adversarial_g_loss(dd, {in[0]});
      },
      {ft});
  CHECK(e2 < 1e-4);
}

// ---- orthogonality penalty --------------------------------------------------

TEST_CASE("orthogonal_loss: frozen small-matrix cases") {
  Tensor I2 = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(ls::orthogonal_loss({ad::constant(I2)}, ls::OrthVariant::literal).scalar() == 2.0);
  CHECK(ls::orthogonal_loss({ad::constant(I2)}, ls::OrthVariant::srip).scalar() == 0.0);
  Tensor Z({4, 2});
  CHECK(ls::orthogonal_loss({ad::constant(Z)}, ls::OrthVariant::literal).scalar() == 0.0);
  CHECK(ls::orthogonal_loss({ad::constant(Z)}, ls::OrthVariant::srip).scalar() == 2.0);
}

TEST_CASE("orthogonal_loss: srip vanishes exactly on orthonormal columns") {
  Tensor F({4, 2});
  F.at2(0, 0) = 1.0;
  F.at2(1, 1) = 1.0;
  CHECK(ls::orthogonal_loss({ad::constant(F)}, ls::OrthVariant::srip).scalar() == 0.0);
}

TEST_CASE("orthogonal_loss: srip positive off the orthonormal set") {
  // scaled column: Gram = diag(4,1) -> ||diag(3,0)||^2 = 9
  Tensor A({4, 2});
  A.at2(0, 0) = 2.0;
  A.at2(1, 1) = 1.0;
  CHECK(ls::orthogonal_loss({ad::constant(A)}, ls::OrthVariant::srip).scalar() == 9.0);
  // correlated columns: Gram = [[2,1],[1,2]] -> ||[[1,1],[1,1]]||^2 = 4
  Tensor B = Tensor::from({4, 2}, {1, 0, 1, 1, 0, 1, 0, 0});
  CHECK(ls::orthogonal_loss({ad::constant(B)}, ls::OrthVariant::srip).scalar() == 4.0);
}

TEST_CASE("orthogonal_loss: mean over blocks matches a dense oracle") {
  frontsr::Rng rng(42);
  Tensor F1 = random_tensor(rng, {6, 3}, -1, 1);
  Tensor F2 = random_tensor(rng, {6, 3}, -1, 1);
  auto gram_norms = [](const Tensor& F, bool subtract_identity) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double g = 0.0;
        for (std::size_t r = 0; r < 6; ++r) g += F.at2(r, i) * F.at2(r, j);
        if (subtract_identity && i == j) g -= 1.0;
        acc += g * g;
      }
    return acc;
  };
  for (bool srip : {false, true}) {
    auto variant = srip ? ls::OrthVariant::srip : ls::OrthVariant::literal;
    double expected = (gram_norms(F1, srip) + gram_norms(F2, srip)) / 2.0;
    double got = ls::orthogonal_loss({ad::constant(F1), ad::constant(F2)}, variant).scalar();
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("orthogonal_loss: shape validation") {
  CHECK_THROWS(ls::orthogonal_loss({}, ls::OrthVariant::srip));
  CHECK_THROWS(ls::orthogonal_loss({ad::constant(Tensor({4, 2})), ad::constant(Tensor({4, 3}))},
                                   ls::OrthVariant::srip));
  CHECK_THROWS(ls::orthogonal_loss({ad::constant(Tensor({2, 3}))}, ls::OrthVariant::srip));
}

TEST_CASE("orthogonal_loss: gradcheck both variants") {
  frontsr::Rng rng(43);
  Tensor F1 = random_tensor(rng, {5, 2}, -1, 1);
  Tensor F2 = random_tensor(rng, {5, 2}, -1, 1);
  for (auto variant : {ls::OrthVariant::literal, ls::OrthVariant::srip}) {
    double err = frontsr::gradcheck(
        [variant](const std::vector<ad::Var>& in) {
          return ls::orthogonal_loss({in[0], in[1]}, variant);
        },
        {F1, F2});
    CHECK(err < 1e-4);
  }
}

// ---- weighted total ---------------------------------------------------------

namespace {
ad::Var scalar_var(double v) { return ad::constant(Tensor::from({1}, {v})); }
}  // namespace

TEST_CASE("total_g_loss: frozen weighted sums with default weights") {
  ls::LossWeights w;
  ls::LossComponents c;
  c.pixel = scalar_var(0);
  c.patch = scalar_var(0);
  c.adv = scalar_var(0);
  c.id = scalar_var(0);
  c.tv = scalar_var(0);
  CHECK(ls::total_g_loss(w, c, false).scalar() == 0.0);

  c.pixel = scalar_var(1);
  CHECK(ls::total_g_loss(w, c, false).scalar() == 20.0);

  c.patch = scalar_var(1);
  c.adv = scalar_var(1);
  c.id = scalar_var(1);
  c.tv = scalar_var(1);
  CHECK(ls::total_g_loss(w, c, false).scalar() == 25.900100000000002);

  c.orth = scalar_var(1);
  CHECK(ls::total_g_loss(w, c, true).scalar() == 26.000100000000003);
}

TEST_CASE("total_g_loss: linear in each component") {
  frontsr::Rng rng(44);
  ls::LossWeights w;
  auto make = [&](double pix) {
    ls::LossComponents c;
    c.pixel = scalar_var(pix);
    c.patch = scalar_var(0.3);
    c.adv = scalar_var(0.7);
    c.id = scalar_var(0.2);
    c.tv = scalar_var(0.05);
    return c;
  };
  double base = ls::total_g_loss(w, make(1.0), false).scalar();
  double more = ls::total_g_loss(w, make(3.0), false).scalar();
  CHECK(more - base == doctest::Approx(2.0 * w.pixel).epsilon(1e-12));
}

TEST_CASE("total_g_loss: zero-weight components may be omitted entirely") {
  ls::LossWeights w;
  w.adv = 0.0;
  w.id = 0.0;
  ls::LossComponents c;
  c.pixel = scalar_var(1);
  c.patch = scalar_var(1);
  c.tv = scalar_var(1);
  // adv/id left undefined: skipped, contribute exactly nothing
  CHECK(ls::total_g_loss(w, c, false).scalar() == 25.0001);
}

TEST_CASE("total_g_loss: missing component with positive weight rejected") {
  ls::LossWeights w;
  ls::LossComponents c;
  c.pixel = scalar_var(1);
  c.patch = scalar_var(1);
  c.adv = scalar_var(1);
  c.tv = scalar_var(1);
  // id undefined but w.id = 0.1 > 0
  CHECK_THROWS(ls::total_g_loss(w, c, false));
}

TEST_CASE("total_g_loss: non-finite component aborts and names the term") {
  ls::LossWeights w;
  ls::LossComponents c;
  c.pixel = scalar_var(std::numeric_limits<double>::quiet_NaN());
  c.patch = scalar_var(1);
  c.adv = scalar_var(1);
  c.id = scalar_var(1);
  c.tv = scalar_var(1);
  bool threw = false;
  try {
    ls::total_g_loss(w, c, false);
  } catch (const std::exception& e) {
    threw = true;
    CHECK(std::string(e.what()).find("pixel") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("total_g_loss: negative or non-finite weights rejected") {
  ls::LossWeights w;
  w.patch = -1.0;
  ls::LossComponents c;
  c.pixel = scalar_var(1);
  c.patch = scalar_var(1);
  c.adv = scalar_var(1);
  c.id = scalar_var(1);
  c.tv = scalar_var(1);
  CHECK_THROWS(ls::total_g_loss(w, c, false));
}

TEST_CASE("total_g_loss: orthogonal term only enters in multi-image mode") {
  ls::LossWeights w;
  ls::LossComponents c;
  c.pixel = scalar_var(1);
  c.patch = scalar_var(1);
  c.adv = scalar_var(1);
  c.id = scalar_var(1);
  c.tv = scalar_var(1);
  c.orth = scalar_var(1);
  CHECK(ls::total_g_loss(w, c, false).scalar() == 25.900100000000002);
  CHECK(ls::total_g_loss(w, c, true).scalar() == 26.000100000000003);
}
