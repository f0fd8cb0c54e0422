#pragma once

#include "phymoe/image.hpp"

namespace phymoe {

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

// Reference-quality metrics, 64-bit throughout; these double as oracles
// for the training stack.
inline constexpr double kPsnrCap = 100.0;  // returned when MSE underflows

double mse(const ImageTensor& a, const ImageTensor& b);
double psnr(const ImageTensor& a, const ImageTensor& b);

// Mean of local SSIM over 8x8 uniform windows, stride 1,
// C1=(0.01)^2, C2=(0.03)^2 on the [0,1] range.
double ssim(const ImageTensor& a, const ImageTensor& b);

MetricReport compare(const ImageTensor& a, const ImageTensor& b);

inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

}  // namespace phymoe
