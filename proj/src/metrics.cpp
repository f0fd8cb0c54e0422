#include "phymoe/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace phymoe {

double mse(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr/mse shape mismatch");
  double acc = 0.0;
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  for (int64_t i = 0; i < ta.size(); ++i) {
    const double d = ta[i] - tb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(ta.size());
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;  // cap corresponds to the MSE machine floor
  const double v = 10.0 * std::log10(1.0 / m);
  return v > kPsnrCap ? kPsnrCap : v;
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim shape mismatch");
  const int h = a.height(), w = a.width(), ch = a.channels();
  const int win = kSsimWindow;
  if (h < win || w < win) throw std::invalid_argument("image smaller than SSIM window");

  const double inv_n = 1.0 / (win * win);
  double total = 0.0;
  int64_t count = 0;
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y + win <= h; ++y) {
      for (int x = 0; x + win <= w; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < win; ++dy) {
          for (int dx = 0; dx < win; ++dx) {
            const double va = a.at(y + dy, x + dx, c);
            const double vb = b.at(y + dy, x + dx, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double mu_a = sa * inv_n;
        const double mu_b = sb * inv_n;
        const double var_a = saa * inv_n - mu_a * mu_a;
        const double var_b = sbb * inv_n - mu_b * mu_b;
        const double cov = sab * inv_n - mu_a * mu_b;
        const double num = (2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2);
        const double den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

MetricReport compare(const ImageTensor& a, const ImageTensor& b) {
  return MetricReport{psnr(a, b), ssim(a, b)};
}

}  // namespace phymoe
