#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phymoe/ops.hpp"

using namespace phymoe;
using namespace phymoe::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// quadruple-loop reference convolution (groups, stride, reflect/valid)
Tensor conv_reference(const Tensor& x, const Tensor& w, int groups, int stride, bool same) {
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1), cin_pg = w.dim(2), Cout = w.dim(3);
  const int cout_pg = Cout / groups;
  const int ph = same ? kh / 2 : 0, pw = same ? kw / 2 : 0;
  const int Ho = (H + 2 * ph - kh) / stride + 1;
  const int Wo = (W + 2 * pw - kw) / stride + 1;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  Tensor out({Ho, Wo, Cout});
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int co = 0; co < Cout; ++co) {
        const int g = co / cout_pg;
        double acc = 0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int ci = 0; ci < cin_pg; ++ci) {
              const int yy = reflect(oy * stride - ph + ky, H);
              const int xx = reflect(ox * stride - pw + kx, W);
              acc += x.at3(yy, xx, g * cin_pg + ci) *
                     w[((static_cast<int64_t>(ky) * kw + kx) * cin_pg + ci) * Cout + co];
            }
        out.at3(oy, ox, co) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("backward of a small expression graph") {
  Var a = make_param(Tensor::scalar(3.0));
  Var b = make_param(Tensor::scalar(4.0));
  // f = (a*b + a)^2 -> df/da = 2(ab+a)(b+1), df/db = 2(ab+a)a
  Var f = square(add(mul(a, b), a));
  backward(f);
  CHECK(f.val()[0] == doctest::Approx(225.0));
  CHECK(a.grad()[0] == doctest::Approx(2 * 15 * 5));
  CHECK(b.grad()[0] == doctest::Approx(2 * 15 * 3));
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  Var a = make_param(Tensor::scalar(2.0));
  Var s = mul(a, a);          // a^2
  Var f = add(s, s);          // 2 a^2 -> df/da = 4a
  backward(f);
  CHECK(a.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("conv2d identity and averaging closed forms") {
  // 1x1 identity kernel, groups=1
  Tensor x = random_tensor({5, 6, 3}, 1);
  Tensor wid({1, 1, 3, 3});
  for (int i = 0; i < 3; ++i) wid[static_cast<int64_t>(i) * 3 + i] = 1.0;
  Var y = conv2d(make_const(x), make_const(wid));
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y.val()[i] == doctest::Approx(x[i]));

  // depthwise 3x3 averaging kernel keeps a constant image unchanged
  Tensor c = Tensor::full({6, 6, 2}, 0.37);
  Tensor wavg = Tensor::full({3, 3, 1, 2}, 1.0 / 9.0);
  Var yc = conv2d(make_const(c), make_const(wavg), 2);
  for (int64_t i = 0; i < c.size(); ++i)
    CHECK(yc.val()[i] == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("conv2d matches the quadruple-loop reference") {
  struct Case {
    int H, W, Cin, Cout, k, groups, stride;
  };
  for (const Case& c : {Case{4, 4, 2, 3, 3, 1, 1}, Case{6, 5, 4, 4, 3, 4, 1},
                        Case{8, 8, 4, 6, 5, 2, 1}, Case{8, 8, 3, 5, 3, 1, 2}}) {
    Tensor x = random_tensor({c.H, c.W, c.Cin}, 10 + static_cast<uint64_t>(c.Cout));
    Tensor w = random_tensor({c.k, c.k, c.Cin / c.groups, c.Cout},
                             20 + static_cast<uint64_t>(c.k));
    Var y = conv2d(make_const(x), make_const(w), c.groups, c.stride);
    Tensor ref = conv_reference(x, w, c.groups, c.stride, true);
    REQUIRE(y.val().same_shape(ref));
    for (int64_t i = 0; i < ref.size(); ++i)
      CHECK(y.val()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d is linear in its input") {
  Tensor xa = random_tensor({6, 6, 3}, 31);
  Tensor xb = random_tensor({6, 6, 3}, 32);
  Tensor w = random_tensor({3, 3, 3, 4}, 33);
  const double a = 1.7, b = -0.6;
  Tensor mix({6, 6, 3});
  for (int64_t i = 0; i < mix.size(); ++i) mix[i] = a * xa[i] + b * xb[i];
  Var fmix = conv2d(make_const(mix), make_const(w));
  Var fa = conv2d(make_const(xa), make_const(w));
  Var fb = conv2d(make_const(xb), make_const(w));
  for (int64_t i = 0; i < fmix.size(); ++i)
    CHECK(fmix.val()[i] ==
          doctest::Approx(a * fa.val()[i] + b * fb.val()[i]).epsilon(1e-10));
}

TEST_CASE("group_norm normalizes per group and matches a two-pass reference") {
  Tensor x = random_tensor({4, 4, 6}, 41, 2.0);
  Var y = group_norm_raw(make_const(x), 3);
  // per-group mean ~= 0, var ~= 1
  const int cpg = 2;
  for (int g = 0; g < 3; ++g) {
    double s = 0, ss = 0;
    int64_t n = 0;
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx)
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
          const double v = y.val().at3(yy, xx, c);
          s += v;
          ss += v * v;
          ++n;
        }
    const double mean = s / n;
    const double var = ss / n - mean * mean;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));

    // two-pass reference on the raw input
    double rs = 0;
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx)
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) rs += x.at3(yy, xx, c);
    const double rmean = rs / n;
    double rvar = 0;
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx)
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
          const double d = x.at3(yy, xx, c) - rmean;
          rvar += d * d;
        }
    rvar /= n;
    const double inv = 1.0 / std::sqrt(rvar + 1e-5);
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 4; ++xx)
        for (int c = g * cpg; c < (g + 1) * cpg; ++c)
          CHECK(y.val().at3(yy, xx, c) ==
                doctest::Approx((x.at3(yy, xx, c) - rmean) * inv).epsilon(1e-10));
  }
}

TEST_CASE("group_norm of a constant input is zero, not NaN") {
  Var y = group_norm_raw(make_const(Tensor::full({3, 3, 4}, 0.7)), 2);
  for (int64_t i = 0; i < y.size(); ++i) {
    CHECK(std::isfinite(y.val()[i]));
    CHECK(y.val()[i] == doctest::Approx(0.0));
  }
}

TEST_CASE("gelu closed forms") {
  Var z = gelu(make_const(Tensor::scalar(0.0)));
  CHECK(z.val()[0] == 0.0);
  Var big = gelu(make_const(Tensor::scalar(10.0)));
  CHECK(std::fabs(big.val()[0] - 10.0) < 1e-4);
  // monotone on a grid over [-0.7, 5]; the function dips to its minimum
  // near -0.75, so the scan starts right of it
  double prev = -1e9;
  for (int i = 0; i <= 60; ++i) {
    const double xv = -0.7 + 5.7 * i / 60.0;
    const double g = gelu(make_const(Tensor::scalar(xv))).val()[0];
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("softmax closed forms and invariances") {
  Var s4 = softmax_vec(make_const(Tensor::full({4}, 2.5)));
  for (int i = 0; i < 4; ++i) CHECK(s4.val()[i] == doctest::Approx(0.25).epsilon(1e-12));

  // direct evaluation of [1,0,0]
  Var s3 = softmax_vec(make_const(Tensor::from({3}, {1.0, 0.0, 0.0})));
  const double e1 = std::exp(1.0);
  CHECK(s3.val()[0] == doctest::Approx(e1 / (e1 + 2)).epsilon(1e-12));
  CHECK(s3.val()[0] == doctest::Approx(0.5761).epsilon(1e-3));
  CHECK(s3.val()[1] == doctest::Approx(0.2119).epsilon(1e-3));

  // shift invariance + simplex property on random vectors
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor l({5});
    for (int i = 0; i < 5; ++i) l[i] = rng.normal(0, 3);
    Tensor shifted = l;
    const double c = rng.normal(0, 10);
    for (int i = 0; i < 5; ++i) shifted[i] += c;
    Var a = softmax_vec(make_const(l));
    Var b = softmax_vec(make_const(shifted));
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(a.val()[i] >= 0.0);
      CHECK(a.val()[i] == doctest::Approx(b.val()[i]).epsilon(1e-9));
      sum += a.val()[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("adaptive_pool identity, global mean and quadrants") {
  Tensor x = random_tensor({4, 4, 2}, 55);
  Var same = adaptive_pool(make_const(x), 4, 4);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(same.val()[i] == x[i]);

  Var g = adaptive_pool(make_const(x), 1, 1);
  for (int c = 0; c < 2; ++c) {
    double s = 0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) s += x.at3(y, xx, c);
    CHECK(g.val()[c] == doctest::Approx(s / 16).epsilon(1e-12));
  }

  Var q = adaptive_pool(make_const(x), 2, 2);
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx)
      for (int c = 0; c < 2; ++c) {
        double s = 0;
        for (int y = 0; y < 2; ++y)
          for (int xx = 0; xx < 2; ++xx) s += x.at3(qy * 2 + y, qx * 2 + xx, c);
        CHECK(q.val().at3(qy, qx, c) == doctest::Approx(s / 4).epsilon(1e-12));
      }
}

TEST_CASE("linear closed forms and loop oracle") {
  Tensor wid({3, 3});
  for (int i = 0; i < 3; ++i) wid.at2(i, i) = 1.0;
  Tensor xin = Tensor::from({3}, {0.3, -0.7, 2.2});
  Var ident = linear(make_const(xin), make_const(wid), make_const(Tensor::zeros({3})));
  for (int i = 0; i < 3; ++i) CHECK(ident.val()[i] == xin[i]);

  Var broadcast = linear(make_const(xin), make_const(Tensor::zeros({3, 2})),
                         make_const(Tensor::from({2}, {5.0, -1.0})));
  CHECK(broadcast.val()[0] == 5.0);
  CHECK(broadcast.val()[1] == -1.0);

  Tensor w = random_tensor({4, 3}, 71);
  Tensor xr = random_tensor({4}, 72);
  Var y = linear(make_const(xr), make_const(w));
  for (int o = 0; o < 3; ++o) {
    double acc = 0;
    for (int i = 0; i < 4; ++i) acc += xr[i] * w.at2(i, o);
    CHECK(y.val()[o] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("dft2 satisfies Parseval and linear adjoint") {
  Tensor x = random_tensor({8, 6, 2}, 81);
  Var reim = dft2_reim(make_const(x));
  double spectral = 0;
  for (int64_t i = 0; i < reim.size(); ++i) spectral += reim.val()[i] * reim.val()[i];
  double spatial = 0;
  for (int64_t i = 0; i < x.size(); ++i) spatial += x[i] * x[i];
  CHECK(spectral == doctest::Approx(spatial).epsilon(1e-9));
}

TEST_CASE("upsample/concat/slice round trip") {
  Tensor x = random_tensor({3, 3, 2}, 91);
  Var up = upsample_nearest2(make_const(x));
  CHECK(up.val().dim(0) == 6);
  CHECK(up.val().at3(5, 5, 1) == x.at3(2, 2, 1));

  Var c = concat_c({make_const(x), make_const(x)});
  CHECK(c.val().dim(2) == 4);
  Var back = slice_c(c, 2, 4);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(back.val()[i] == x[i]);
}
