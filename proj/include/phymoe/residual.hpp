#pragma once

#include <vector>

#include "phymoe/blocks.hpp"

namespace phymoe {

/// Multi-scale residual embeddings, one per decoder level. source_scales
/// records which pyramid stage (1..3) each level derives from.
struct ResidualEmbedding {
  std::vector<Var> levels;
  std::vector<int> source_scales;
};

struct FrequencyFeature {
  Var f_low, f_mid, f_high, f_edge;  // 7x7 / 5x5 / 3x3 / 1x1 branches
  Var f_concat;
  int branch_channels = 0;
};

/// Point on the 4-simplex ordered (haze, noise, lowlight, blur).
struct DegradationPosterior {
  Var pi;

  int argmax() const {
    const Tensor& t = pi.val();
    int best = 0;
    for (int i = 1; i < static_cast<int>(t.size()); ++i)
      if (t[i] > t[best]) best = i;
    return best;
  }
  double entropy() const {
    const Tensor& t = pi.val();
    double h = 0;
    for (int64_t i = 0; i < t.size(); ++i)
      if (t[i] > 0) h -= t[i] * std::log(t[i]);
    return h;
  }
};

struct RmpConfig {
  int in_channels = 3;
  int embed_dim = 32;
  int gn_groups = 4;
  int gdfn_expand = 2;
  std::vector<int> decoder_dims{32, 64, 128};
};

/// Residual manifold projector: residual encoder, cascaded MDTA/GDFN
/// pyramid, and per-decoder-level 1x1 projections.
class Rmp {
 public:
  Rmp() = default;
  Rmp(ModuleCtx& ctx, const std::string& name, const RmpConfig& cfg);

  Var encode(const Var& residual) const;  // -> R0 (H,W,d)
  // (R1 full res, R2 half, R3 quarter); input must be divisible by 4.
  std::array<Var, 3> pyramid(const Var& r0) const;
  ResidualEmbedding project(const std::array<Var, 3>& pyr) const;

  ResidualEmbedding run(const Var& residual, Var* r1_out = nullptr) const;

 private:
  RmpConfig cfg_;
  Conv enc1_, enc2_;
  Conv pre1_, pre2_, pre3_;      // 1x1 entries of the three stages
  Mdta mdta1_, mdta2_, mdta3_;
  Gdfn gdfn1_, gdfn2_, gdfn3_;
  Conv down2_, down3_;           // stride-2 3x3 after stages 2 and 3
  std::vector<Conv> proj_;       // per decoder level
};

struct FaddConfig {
  int in_channels = 3;
  int branch_channels = 8;  // width of each kernel branch
  int embed_dim = 32;       // channels of R1 feeding the posterior head
  int pool_hw = 4;          // adaptive pool target before Flatten
};

/// Frequency-aware degradation decomposer: four grouped-conv branches with
/// 7/5/3/1 kernels plus the posterior head over R1.
class Fadd {
 public:
  Fadd() = default;
  Fadd(ModuleCtx& ctx, const std::string& name, const FaddConfig& cfg);

  FrequencyFeature decompose(const Var& x) const;
  DegradationPosterior posterior(const Var& r1) const;
  Var posterior_logits(const Var& r1) const;

 private:
  FaddConfig cfg_;
  Conv pre_;                       // grouped 1x1 pre-projection
  Conv b7_, b5_, b3_, b1_;
  Var head_w_, head_b_;            // zero-initialized posterior head
};

}  // namespace phymoe
