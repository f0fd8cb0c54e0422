#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phymoe/metrics.hpp"
#include "phymoe/rng.hpp"

using namespace phymoe;

namespace {

ImageTensor random_image(int h, int w, int c, uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w, c});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return ImageTensor::from_tensor(std::move(t));
}

ImageTensor constant_image(int h, int w, int c, double v) {
  return ImageTensor::from_tensor(Tensor::full({h, w, c}, v));
}

ImageTensor perturb(const ImageTensor& img, double amplitude, uint64_t seed) {
  Rng rng(seed);
  Tensor t = img.tensor();
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = t[i] + amplitude * (2.0 * rng.uniform() - 1.0);
    t[i] = v < 0 ? 0 : (v > 1 ? 1 : v);
  }
  return ImageTensor::from_tensor(std::move(t));
}

}  // namespace

TEST_CASE("psnr of identical images hits the cap") {
  const ImageTensor a = random_image(16, 16, 3, 1);
  CHECK(psnr(a, a) == kPsnrCap);
}

TEST_CASE("psnr closed forms") {
  // MSE = 0.01 -> 20 dB
  ImageTensor a = constant_image(8, 8, 1, 0.5);
  ImageTensor b = constant_image(8, 8, 1, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  // all-0 vs all-1 -> MSE 1 -> 0 dB
  CHECK(psnr(constant_image(8, 8, 1, 0.0), constant_image(8, 8, 1, 1.0)) ==
        doctest::Approx(0.0));
}

TEST_CASE("psnr shape mismatch throws") {
  CHECK_THROWS(psnr(constant_image(8, 8, 1, 0.1), constant_image(8, 9, 1, 0.1)));
}

TEST_CASE("psnr strictly decreases with perturbation amplitude") {
  const ImageTensor base = random_image(32, 32, 3, 7);
  const double p1 = psnr(base, perturb(base, 0.02, 11));
  const double p2 = psnr(base, perturb(base, 0.05, 11));
  const double p3 = psnr(base, perturb(base, 0.10, 11));
  CHECK(p1 > p2);
  CHECK(p2 > p3);
}

TEST_CASE("psnr invariant under identical pixel permutation") {
  const ImageTensor a = random_image(8, 8, 1, 3);
  const ImageTensor b = random_image(8, 8, 1, 4);
  // reverse both rasters with the same permutation
  Tensor pa({8, 8, 1}), pb({8, 8, 1});
  for (int64_t i = 0; i < 64; ++i) {
    pa[i] = a.tensor()[63 - i];
    pb[i] = b.tensor()[63 - i];
  }
  const double before = psnr(a, b);
  const double after = psnr(ImageTensor::from_tensor(std::move(pa)),
                            ImageTensor::from_tensor(std::move(pb)));
  CHECK(before == doctest::Approx(after).epsilon(1e-12));
}

TEST_CASE("ssim perfect match is exactly 1") {
  const ImageTensor a = random_image(16, 16, 3, 5);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim is symmetric") {
  const ImageTensor a = random_image(16, 16, 1, 21);
  const ImageTensor b = random_image(16, 16, 1, 22);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("ssim constant-0 vs constant-1 matches a hand-evaluated window") {
  // Every 8x8 window is identical, so the mean equals one window's value:
  // mu_a=0, mu_b=1, variances and covariance 0:
  //   ((2*0*1 + C1)(0 + C2)) / ((0 + 1 + C1)(0 + C2)) = C1 / (1 + C1)
  const double expected = kSsimC1 / (1.0 + kSsimC1);
  const double got = ssim(constant_image(12, 12, 1, 0.0), constant_image(12, 12, 1, 1.0));
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ssim stays within [-1, 1] on adversarial pairs") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const ImageTensor a = random_image(9, 9, 1, 100 + seed);
    const ImageTensor b = random_image(9, 9, 1, 200 + seed);
    const double v = ssim(a, b);
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
}

TEST_CASE("ssim invariant under identical flips of both inputs") {
  const ImageTensor a = random_image(16, 12, 3, 31);
  const ImageTensor b = random_image(16, 12, 3, 32);
  auto hflip = [](const ImageTensor& img) {
    Tensor t({img.height(), img.width(), img.channels()});
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < img.channels(); ++c)
          t.at3(y, x, c) = img.at(y, img.width() - 1 - x, c);
    return ImageTensor::from_tensor(std::move(t));
  };
  CHECK(ssim(a, b) == doctest::Approx(ssim(hflip(a), hflip(b))).epsilon(1e-12));
}

TEST_CASE("ssim rejects images smaller than the window") {
  CHECK_THROWS(ssim(constant_image(4, 4, 1, 0.5), constant_image(4, 4, 1, 0.5)));
}
