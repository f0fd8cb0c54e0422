#pragma once

#include <array>
#include <optional>

#include "phymoe/blocks.hpp"
#include "phymoe/degrade.hpp"
#include "phymoe/image.hpp"

namespace phymoe {

// Expert ids follow the canonical degradation order:
// 0 dehaze, 1 denoise, 2 lowlight, 3 deblur.

struct HazeParams {
  Tensor t_eq12;              // sigmoid-activated, scaled output before refinement
  Tensor t_rgb;               // refined transmittance actually inverted with
  Tensor A;                   // blended atmospheric light, per pixel/channel
  std::array<double, 3> s_rgb{1, 1, 1};
  double w_mix = 0.5;
};

struct NoiseTier {
  double mu_s = 0.0;
  double sigma_s = 1.0;
};

struct NoiseTierParams {
  Tensor sigma_map;
  std::array<NoiseTier, 3> tiers;
};

struct RetinexParams {
  Tensor L;           // illumination, floored at 1e-3
  Tensor gamma_map;   // > 0.1
};

struct BlurParams {
  double kappa = 0.0;
  double sigma_x = 1.0, sigma_y = 1.0;
  double theta = 0.0;
  double a = 0.0;                       // |sigma_x - sigma_y|
  std::array<double, 3> w_dir{1, 0, 0};
};

// Fixed tier anchors: mild / moderate / severe.
inline constexpr std::array<NoiseTier, 3> kNoiseTiers{
    NoiseTier{0.03, 0.02}, NoiseTier{0.08, 0.03}, NoiseTier{0.15, 0.05}};

struct ExpertConfig {
  int width = 16;         // feature channels of the estimation nets
  int cond_channels = 32; // channels of the injected residual embedding
  int adapter_rank = 8;   // rank of the conditioning projection
};

// Eq-style direction weights used by the deblur expert; exposed for tests.
std::array<double, 3> direction_logits(double a, double theta);

// Oracle-mode physical inversions (no learned parameters). These are the
// algebraic inverses of apply_haze / apply_lowlight.
ImageTensor dehaze_oracle(const ImageTensor& x, double t, const std::array<double, 3>& A);
ImageTensor dehaze_oracle(const ImageTensor& x, const Tensor& t_field,
                          const std::array<double, 3>& A);
ImageTensor lowlight_oracle(const ImageTensor& x, double L, double gamma);

/// One physics-aware expert with a small estimation network, conditioning
/// injection, and the physical restoration path.
class Expert {
 public:
  virtual ~Expert() = default;
  // cond may be undefined; modulation then collapses to identity.
  virtual Var forward(const Var& x, const Var& cond) const = 0;
};

class DehazeExpert : public Expert {
 public:
  DehazeExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg);
  Var forward(const Var& x, const Var& cond) const override;
  HazeParams last_params() const { return last_; }

 private:
  Conv stem1_, stem2_, t_head_, t_refine_;
  FilmCond film_;
  Var s_raw_;       // per-channel scale, sigmoid-activated
  Var wmix_w_, wmix_b_;
  mutable HazeParams last_;
};

class DenoiseExpert : public Expert {
 public:
  DenoiseExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg);
  Var forward(const Var& x, const Var& cond) const override;
  NoiseTierParams last_params() const { return last_; }

 private:
  Conv stem1_, stem2_, coarse_, sigma_head_;
  FilmCond film_;
  std::array<Conv, 3> residual_fix_;
  std::array<Tensor, 3> gauss_;  // fixed depthwise kernels of growing strength
  mutable NoiseTierParams last_;
};

class LowlightExpert : public Expert {
 public:
  LowlightExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg);
  Var forward(const Var& x, const Var& cond) const override;
  RetinexParams last_params() const { return last_; }

 private:
  Conv stem1_, stem2_, l_head_, g_head_;
  FilmCond film_;
  Var l_global_w_;
  mutable RetinexParams last_;
};

class DeblurExpert : public Expert {
 public:
  DeblurExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg);
  Var forward(const Var& x, const Var& cond) const override;
  BlurParams last_params() const { return last_; }

 private:
  Conv stem1_, stem2_;
  FilmCond film_;
  Var p_w1_, p_b1_, p_w2_, p_b2_;
  std::array<Tensor, 3> gauss_;  // isotropic / horizontal / vertical
  mutable BlurParams last_;
};

/// The four experts plus dispatch; counts real expert evaluations so the
/// sparsity contract is observable.
class ExpertBank {
 public:
  ExpertBank(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg);

  Var apply(int expert_id, const Var& x, const Var& cond) const;
  // Convenience over the ResidualEmbedding level matching the call site.
  int count() const { return kNumKinds; }

  const DehazeExpert& dehaze() const { return *dehaze_; }
  const DenoiseExpert& denoise() const { return *denoise_; }
  const LowlightExpert& lowlight() const { return *lowlight_; }
  const DeblurExpert& deblur() const { return *deblur_; }

  static void reset_call_counter();
  static int64_t call_count();

 private:
  std::unique_ptr<DehazeExpert> dehaze_;
  std::unique_ptr<DenoiseExpert> denoise_;
  std::unique_ptr<LowlightExpert> lowlight_;
  std::unique_ptr<DeblurExpert> deblur_;
};

// Fixed normalized Gaussian tensors used as constant depthwise kernels.
Tensor gaussian_kernel_2d(int k, double sigma, int channels);
Tensor gaussian_kernel_1d(int k, double sigma, bool horizontal, int channels);

}  // namespace phymoe
