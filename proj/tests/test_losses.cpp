#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "phymoe/gradcheck.hpp"
#include "phymoe/losses.hpp"
#include "phymoe/metrics.hpp"

using namespace phymoe;
using namespace phymoe::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0,
                     double offset = 0.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = offset + scale * rng.normal();
  return t;
}

Var scalar_image(double v) { return make_const(Tensor::full({1, 1, 1}, v)); }

Tensor one_hot(int k) {
  Tensor t({4});
  t[k] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("physics_freq_reg: zero residual gives exactly zero") {
  Var r = make_const(Tensor::zeros({8, 8, 3}));
  Var reg = physics_freq_reg(r, Tensor::full({4}, 0.25), PhysicsBandSpec{});
  CHECK(reg.val()[0] == 0.0);
}

TEST_CASE("physics_freq_reg: Parseval with full-band unit weights") {
  Var r = make_const(random_tensor({8, 6, 3}, 3, 0.4));
  PhysicsBandSpec full;
  for (auto& b : full.bands) b = PhysicsBand{0.0, 1.0, 1.0, false};
  const Tensor pi = Tensor::from({4}, {0.4, 0.3, 0.2, 0.1});

  // direct spatial-sum oracle: sum_k pi_k * (sum r^2) / C with the
  // unit-normalized transform (Parseval: spectral energy == spatial energy)
  double spatial = 0;
  for (int64_t i = 0; i < r.size(); ++i) spatial += r.val()[i] * r.val()[i];
  double pi_sum = 0;
  for (int k = 0; k < 4; ++k) pi_sum += pi[k];
  const double expected = pi_sum * spatial / 3.0;

  Var reg = physics_freq_reg(r, pi, full);
  CHECK(reg.val()[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("checkerboard residual: noise band energy dwarfs the haze band") {
  Tensor checker({16, 16, 1});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) checker.at3(y, x, 0) = ((y + x) % 2 == 0) ? 0.5 : -0.5;
  Var r = make_const(std::move(checker));
  const PhysicsBandSpec bands;
  Var noise_score = physics_freq_reg(r, one_hot(1), bands);
  Var haze_score = physics_freq_reg(r, one_hot(0), bands);
  CHECK(noise_score.val()[0] > haze_score.val()[0]);
  CHECK(noise_score.val()[0] > 1.0);
  CHECK(haze_score.val()[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("physics_freq_reg is differentiable w.r.t. the residual") {
  Var r = make_param(random_tensor({6, 6, 2}, 5, 0.3));
  auto f = [&] { return physics_freq_reg(r, Tensor::full({4}, 0.25), PhysicsBandSpec{}); };
  CHECK(grad_check(f, {{"r", r}}).pass);
}

TEST_CASE("w2: identical batches score zero") {
  std::vector<Var> a, b;
  for (uint64_t i = 0; i < 4; ++i) {
    Tensor t = random_tensor({8, 8, 3}, 10 + i, 0.2, 0.5);
    a.push_back(make_const(t));
    b.push_back(make_const(t));
  }
  Var d = w2_sliced(a, b, 16, 99);
  CHECK(d.val()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(d.val()[0] >= 0.0);
}

TEST_CASE("w2: two-point transport with the identity projection") {
  std::vector<Tensor> identity{Tensor::from({1}, {1.0})};
  Var d = w2_sliced({scalar_image(0.0)}, {scalar_image(1.0)}, identity);
  CHECK(d.val()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("w2 matches the exact sorted-coupling 1-D Wasserstein") {
  Rng rng(77);
  std::vector<Var> a, b;
  std::vector<double> av, bv;
  for (int i = 0; i < 7; ++i) {
    const double x = rng.normal(0.3, 1.0);
    const double y = rng.normal(-0.2, 0.8);
    a.push_back(scalar_image(x));
    b.push_back(scalar_image(y));
    av.push_back(x);
    bv.push_back(y);
  }
  std::sort(av.begin(), av.end());
  std::sort(bv.begin(), bv.end());
  double expected = 0;
  for (size_t i = 0; i < av.size(); ++i)
    expected += (av[i] - bv[i]) * (av[i] - bv[i]);
  expected /= static_cast<double>(av.size());

  std::vector<Tensor> identity{Tensor::from({1}, {1.0})};
  Var d = w2_sliced(a, b, identity);
  CHECK(d.val()[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("w2 gradient flows through the sorted coupling") {
  std::vector<Var> a, b;
  for (uint64_t i = 0; i < 3; ++i) {
    a.push_back(make_param(random_tensor({4, 4, 1}, 30 + i, 0.3)));
    b.push_back(make_const(random_tensor({4, 4, 1}, 40 + i, 0.3)));
  }
  auto f = [&] { return w2_sliced(a, b, 8, 5); };
  CHECK(grad_check(f, {{"a0", a[0]}, {"a1", a[1]}, {"a2", a[2]}}).pass);
}

TEST_CASE("daot composition and recomposition") {
  std::vector<Var> pred, target, resid;
  std::vector<Tensor> pis;
  for (uint64_t i = 0; i < 3; ++i) {
    pred.push_back(make_const(random_tensor({8, 8, 3}, 50 + i, 0.2, 0.5)));
    target.push_back(make_const(random_tensor({8, 8, 3}, 60 + i, 0.2, 0.5)));
    resid.push_back(make_const(random_tensor({8, 8, 3}, 70 + i, 0.1)));
    pis.push_back(one_hot(static_cast<int>(i) % 4));
  }
  LossWeights w0;
  w0.lambda_freq = 0.0;
  const auto d0 = daot_loss(pred, target, resid, pis, w0, PhysicsBandSpec{}, 8, 7);
  CHECK(d0.total.val()[0] == doctest::Approx(d0.w2.val()[0]).epsilon(1e-12));

  LossWeights w1;
  w1.lambda_freq = 0.05;
  const auto d1 = daot_loss(pred, target, resid, pis, w1, PhysicsBandSpec{}, 8, 7);
  LossWeights w2x;
  w2x.lambda_freq = 0.10;
  const auto d2 = daot_loss(pred, target, resid, pis, w2x, PhysicsBandSpec{}, 8, 7);
  const double share1 = d1.total.val()[0] - d1.w2.val()[0];
  const double share2 = d2.total.val()[0] - d2.w2.val()[0];
  CHECK(share2 == doctest::Approx(2.0 * share1).epsilon(1e-9));

  // zero residual and identical batches -> exactly zero
  std::vector<Var> same = pred;
  std::vector<Var> zero_res;
  for (int i = 0; i < 3; ++i) zero_res.push_back(make_const(Tensor::zeros({8, 8, 3})));
  const auto dz = daot_loss(pred, same, zero_res, pis, w1, PhysicsBandSpec{}, 8, 7);
  CHECK(dz.total.val()[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pixel loss closed forms") {
  LossWeights lw;
  Var a = make_const(random_tensor({16, 16, 3}, 80, 0.2, 0.5));
  const auto zero = pixel_loss(a, a, DegradationKind::kHaze, lw);
  CHECK(zero.total.val()[0] == doctest::Approx(0.0).epsilon(1e-9));

  // beta = (1,0,0): plain L1 between constants 0.2 and 0.5
  LossWeights l1_only;
  l1_only.beta[0] = {1.0, 0.0, 0.0};
  Var c2 = make_const(Tensor::full({16, 16, 3}, 0.2));
  Var c5 = make_const(Tensor::full({16, 16, 3}, 0.5));
  const auto l1 = pixel_loss(c2, c5, DegradationKind::kHaze, l1_only);
  CHECK(l1.total.val()[0] == doctest::Approx(0.3).epsilon(1e-12));

  CHECK_THROWS(pixel_loss(c2, make_const(Tensor::zeros({8, 8, 3})),
                          DegradationKind::kHaze, lw));
}

TEST_CASE("pixel FFT term matches a direct 4x4 transform oracle") {
  LossWeights fft_only;
  fft_only.beta[0] = {0.0, 1.0, 0.0};
  Tensor ta = random_tensor({4, 4, 1}, 81, 0.3, 0.5);
  Tensor tb = random_tensor({4, 4, 1}, 82, 0.3, 0.5);

  // direct O(N^4) DFT with the same 1/sqrt(HW) normalization and the same
  // magnitude epsilon as the implementation
  auto direct_mag = [](const Tensor& t, int u, int v) {
    double re = 0, im = 0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double ang = -2.0 * M_PI * (u * y / 4.0 + v * x / 4.0);
        re += t.at3(y, x, 0) * std::cos(ang);
        im += t.at3(y, x, 0) * std::sin(ang);
      }
    re /= 4.0;
    im /= 4.0;
    return std::sqrt(re * re + im * im + 1e-12);
  };
  double expected = 0;
  for (int u = 0; u < 4; ++u)
    for (int v = 0; v < 4; ++v)
      expected += std::fabs(direct_mag(ta, u, v) - direct_mag(tb, u, v));
  expected /= 16.0;

  const auto parts = pixel_loss(make_const(ta), make_const(tb), DegradationKind::kHaze,
                                fft_only);
  CHECK(parts.fft.val()[0] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(parts.total.val()[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("pixel loss gradients") {
  LossWeights lw;
  Var pred = make_param(random_tensor({8, 8, 1}, 83, 0.2, 0.5));
  Var target = make_const(random_tensor({8, 8, 1}, 84, 0.2, 0.5));
  auto f = [&] { return pixel_loss(pred, target, DegradationKind::kBlur, lw).total; };
  GradCheckOptions opt;
  opt.max_coords_per_param = 12;
  CHECK(grad_check(f, {{"pred", pred}}, opt).pass);
}

TEST_CASE("balance loss closed forms and scale invariance") {
  Var uniform = make_const(Tensor::full({4}, 0.25));
  CHECK(balance_loss(uniform).val()[0] == doctest::Approx(0.0).epsilon(1e-9));

  Var spike = make_const(Tensor::from({4}, {1.0, 0.0, 0.0, 0.0}));
  CHECK(balance_loss(spike).val()[0] == doctest::Approx(3.0).epsilon(1e-6));

  // scale invariance; the 1e-8 denominator floor limits it for tiny means,
  // so probe on a well-scaled vector
  Var w = make_const(Tensor::from({4}, {8.0, 2.0, 6.0, 4.0}));
  Var wf = make_const(Tensor::from({4}, {8.0 * 7.3, 2.0 * 7.3, 6.0 * 7.3, 4.0 * 7.3}));
  CHECK(balance_loss(w).val()[0] ==
        doctest::Approx(balance_loss(wf).val()[0]).epsilon(1e-9));

  CHECK_THROWS(balance_loss(make_const(Tensor::zeros({4}))));
  CHECK_THROWS(balance_loss(make_const(Tensor::from({4}, {0.5, -0.1, 0.3, 0.3}))));
}

TEST_CASE("balance loss gradient") {
  Var w = make_param(Tensor::from({4}, {0.4, 0.1, 0.3, 0.2}));
  auto f = [&] { return balance_loss(w); };
  CHECK(grad_check(f, {{"w", w}}).pass);
}

TEST_CASE("contrastive loss closed forms") {
  // identical embeddings, same label: ratio is 1, loss 0
  Tensor z = random_tensor({6}, 90);
  double n = 0;
  for (int i = 0; i < 6; ++i) n += z[i] * z[i];
  for (int i = 0; i < 6; ++i) z[i] /= std::sqrt(n);
  Var z1 = make_const(z), z2 = make_const(z);
  CHECK(contrastive_loss({z1, z2}, {0, 0}, 0.1).val()[0] ==
        doctest::Approx(0.0).epsilon(1e-9));

  // two samples with different labels: no anchor has a positive
  CHECK_THROWS(contrastive_loss({z1, z2}, {0, 1}, 0.1));
}

TEST_CASE("contrastive loss decreases as the positive pair aligns") {
  auto unit = [](double a, double b, double c, double d) {
    Tensor t = Tensor::from({4}, {a, b, c, d});
    double n = 0;
    for (int i = 0; i < 4; ++i) n += t[i] * t[i];
    for (int i = 0; i < 4; ++i) t[i] /= std::sqrt(n);
    return make_const(t);
  };
  Var anchor = unit(1, 0, 0, 0);
  Var negative = unit(0, 0, 1, 0);
  double prev = 1e18;
  for (double theta : {1.2, 0.9, 0.6, 0.3}) {
    Var pos = unit(std::cos(theta), std::sin(theta), 0, 0);
    const double loss = contrastive_loss({anchor, pos, negative}, {0, 0, 1}, 0.2).val()[0];
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("contrastive loss invariant under a common rotation") {
  // Gram-Schmidt a random orthogonal matrix, rotate all embeddings
  const int dim = 5;
  Rng rng(91);
  std::vector<std::vector<double>> q;
  for (int i = 0; i < dim; ++i) {
    std::vector<double> v(dim);
    for (int j = 0; j < dim; ++j) v[j] = rng.normal();
    for (const auto& u : q) {
      double dot = 0;
      for (int j = 0; j < dim; ++j) dot += v[j] * u[j];
      for (int j = 0; j < dim; ++j) v[j] -= dot * u[j];
    }
    double n = 0;
    for (int j = 0; j < dim; ++j) n += v[j] * v[j];
    for (int j = 0; j < dim; ++j) v[j] /= std::sqrt(n);
    q.push_back(v);
  }
  auto rotate = [&](const Tensor& t) {
    Tensor out({dim});
    for (int i = 0; i < dim; ++i) {
      double acc = 0;
      for (int j = 0; j < dim; ++j) acc += q[i][j] * t[j];
      out[i] = acc;
    }
    return out;
  };

  std::vector<Var> zs, zr;
  std::vector<int> labels{0, 0, 1, 1};
  for (uint64_t i = 0; i < 4; ++i) {
    Tensor t = random_tensor({dim}, 100 + i);
    double n = 0;
    for (int j = 0; j < dim; ++j) n += t[j] * t[j];
    for (int j = 0; j < dim; ++j) t[j] /= std::sqrt(n);
    zs.push_back(make_const(t));
    zr.push_back(make_const(rotate(t)));
  }
  CHECK(contrastive_loss(zs, labels, 0.1).val()[0] ==
        doctest::Approx(contrastive_loss(zr, labels, 0.1).val()[0]).epsilon(1e-9));
}

TEST_CASE("contrastive gradient through the normalized embeddings") {
  std::vector<Var> raw;
  for (uint64_t i = 0; i < 4; ++i) raw.push_back(make_param(random_tensor({5}, 110 + i)));
  std::vector<int> labels{0, 1, 0, 1};
  auto f = [&] {
    std::vector<Var> z;
    for (const auto& r : raw) z.push_back(l2_normalize(r));
    return contrastive_loss(z, labels, 0.2);
  };
  CHECK(grad_check(f, {{"z0", raw[0]}, {"z1", raw[1]}, {"z2", raw[2]}, {"z3", raw[3]}}).pass);
}

TEST_CASE("total loss: units give 2.11 and the report recomposes") {
  LossWeights lw;
  Var one = make_const(Tensor::scalar(1.0));
  const auto tl = total_loss(one, one, one, one, lw);
  CHECK(tl.report.total == doctest::Approx(2.11).epsilon(1e-12));

  Var zero = make_const(Tensor::scalar(0.0));
  CHECK(total_loss(zero, zero, zero, zero, lw).report.total == 0.0);

  const auto t2 = total_loss(make_const(Tensor::scalar(0.31)), make_const(Tensor::scalar(1.7)),
                             make_const(Tensor::scalar(0.9)), make_const(Tensor::scalar(0.2)),
                             lw);
  const double manual = 0.31 + 1.0 * 1.7 + 0.01 * 0.9 + 0.1 * 0.2;
  CHECK(t2.report.total == doctest::Approx(manual).epsilon(1e-9));
  CHECK(t2.report.daot + lw.lambda1 * t2.report.pixel + lw.lambda2 * t2.report.balance +
            lw.lambda3 * t2.report.contrast ==
        doctest::Approx(t2.report.total).epsilon(1e-9));

  Var bad = make_const(Tensor::scalar(std::nan("")));
  CHECK_THROWS(total_loss(bad, zero, zero, zero, lw));
}

TEST_CASE("ssim_var agrees with the reference metric") {
  Tensor ta = random_tensor({12, 12, 3}, 120, 0.2, 0.5);
  Tensor tb = random_tensor({12, 12, 3}, 121, 0.2, 0.5);
  for (int64_t i = 0; i < ta.size(); ++i) {
    ta[i] = std::clamp(ta[i], 0.0, 1.0);
    tb[i] = std::clamp(tb[i], 0.0, 1.0);
  }
  const double ref = ssim(ImageTensor::from_tensor(ta), ImageTensor::from_tensor(tb));
  Var v = ssim_var(make_const(ta), make_const(tb));
  CHECK(v.val()[0] == doctest::Approx(ref).epsilon(1e-9));
}
