#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "phymoe/degrade.hpp"
#include "phymoe/ops.hpp"

namespace phymoe {

/// Characteristic band of one degradation over normalized radial frequency
/// rho in [0,1]; blur optionally weights by direction.
struct PhysicsBand {
  double lo = 0.0, hi = 1.0;
  double weight = 1.0;
  bool directional = false;  // cos^2 weighting around theta*pi when known
};

struct PhysicsBandSpec {
  std::array<PhysicsBand, kNumKinds> bands{
      PhysicsBand{0.0, 0.15, 1.0, false},   // haze: low-frequency attenuation
      PhysicsBand{0.5, 1.0, 1.0, false},    // noise: broadband, high-heavy
      PhysicsBand{0.0, 0.10, 1.0, false},   // lowlight: DC-adjacent band
      PhysicsBand{0.15, 0.6, 1.0, true},    // blur: mid-band, directional
  };
};

struct LossWeights {
  double lambda1 = 1.0;    // pixel
  double lambda2 = 0.01;   // balance
  double lambda3 = 0.1;    // contrast
  double lambda_freq = 0.01;
  // per-kind (l1, fft, ssim) pixel-loss table, canonical kind order
  std::array<std::array<double, 3>, kNumKinds> beta{{
      {1.0, 0.1, 0.5},    // haze
      {1.0, 0.05, 0.3},   // noise
      {1.0, 0.1, 0.5},    // lowlight
      {1.0, 0.3, 0.3},    // blur
  }};
};

struct LossReport {
  double daot = 0, pixel = 0, balance = 0, contrast = 0, total = 0;
  double w2 = 0, freq_reg = 0, l1 = 0, fft = 0, ssim_term = 0;

  std::string to_json_line() const;
};

// Posterior-weighted residual band energy (Eq-style frequency regularizer).
// pi carries plain weights (one-hot label or detached posterior); gradient
// flows through the residual only. theta, when present, orients the blur
// band weighting.
Var physics_freq_reg(const Var& residual, const Tensor& pi, const PhysicsBandSpec& bands,
                     std::optional<double> theta = std::nullopt);

// Sliced Wasserstein-2 (squared) between two batches of images: 4x4-pooled
// features projected on unit directions, sorted, mean squared difference.
Var w2_sliced(const std::vector<Var>& pred, const std::vector<Var>& target,
              const std::vector<Tensor>& projections, int pool_hw = 4);
// Seeded random projections (P directions over the pooled feature dim).
Var w2_sliced(const std::vector<Var>& pred, const std::vector<Var>& target,
              int n_projections, uint64_t seed, int pool_hw = 4);

struct DaotParts {
  Var total, w2, freq;
};
DaotParts daot_loss(const std::vector<Var>& pred, const std::vector<Var>& target,
                    const std::vector<Var>& residual, const std::vector<Tensor>& pi,
                    const LossWeights& weights, const PhysicsBandSpec& bands,
                    int n_projections, uint64_t proj_seed);

// Differentiable SSIM (uniform window, valid padding), shared constants
// with the metrics module.
Var ssim_var(const Var& a, const Var& b);

struct PixelParts {
  Var total, l1, fft, ssim_term;
};
PixelParts pixel_loss(const Var& pred, const Var& target, DegradationKind kind,
                      const LossWeights& weights);

// Coefficient of variation of the mean expert activation (population
// variance over squared mean).
Var balance_loss(const Var& mean_activation);

// Supervised contrastive loss over L2-normalized embeddings; anchors
// without positives are skipped; throws when none has a positive.
Var contrastive_loss(const std::vector<Var>& z, const std::vector<int>& labels,
                     double tau_c);

struct TotalLoss {
  Var total;
  LossReport report;
};
TotalLoss total_loss(const Var& daot, const Var& pixel, const Var& balance,
                     const Var& contrast, const LossWeights& weights);

}  // namespace phymoe
