#pragma once

#include <string>

#include "phymoe/ops.hpp"

namespace phymoe {

/// Parameter construction context: a store plus the init stream. Modules
/// create their parameters on first use keyed by name, so rebuilding the
/// same module graph reuses the same tensors.
struct ModuleCtx {
  ParamStore& store;
  Rng& init_rng;
};

/// k x k convolution with optional bias. init_scale < 0 selects He init;
/// 0 gives a zero-initialized head.
class Conv {
 public:
  Conv() = default;
  Conv(ModuleCtx& ctx, const std::string& name, int k, int cin, int cout,
       int groups = 1, int stride = 1, bool bias = true, double init_scale = -1.0,
       ops::Pad pad = ops::Pad::kSameReflect);
  Var operator()(const Var& x) const;

 private:
  Var w_, b_;
  int groups_ = 1, stride_ = 1;
  ops::Pad pad_ = ops::Pad::kSameReflect;
};

/// Depthwise-separable transposed-attention block:
/// Conv1x1 -> DWConv3x3 -> Conv1x1 -> GroupNorm. `heads` sets the group
/// count of the first pointwise convolution.
class Mdta {
 public:
  Mdta() = default;
  Mdta(ModuleCtx& ctx, const std::string& name, int channels, int heads, int gn_groups);
  Var operator()(const Var& x) const;

 private:
  Conv pw_in_, dw_, pw_out_;
  Var gamma_, beta_;
  int gn_groups_ = 1;
};

/// Gated feed-forward block: Conv1x1 -> DWConv3x3 -> GELU on the main path,
/// multiplied by a parallel Conv1x1 gate, then projected back.
class Gdfn {
 public:
  Gdfn() = default;
  Gdfn(ModuleCtx& ctx, const std::string& name, int channels, int expand);
  Var operator()(const Var& x) const;

 private:
  Conv pw_in_, dw_, gate_, pw_out_;
};

/// Rank-factorized channel scale-and-shift conditioning. Zero-initialized
/// projection, so modulation starts as identity.
class FilmCond {
 public:
  FilmCond() = default;
  FilmCond(ModuleCtx& ctx, const std::string& name, int emb_channels, int feat_channels,
           int rank);
  // emb is resized spatially (nearest up / mean down) to match feat.
  Var operator()(const Var& feat, const Var& emb) const;

 private:
  Conv down_, up_;
  int feat_channels_ = 0;
};

/// Plain residual conv block: x + Conv3(gelu(Conv3(x))).
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ModuleCtx& ctx, const std::string& name, int channels);
  Var operator()(const Var& x) const;

 private:
  Conv c1_, c2_;
};

// Nearest-neighbor / mean resize to the target spatial extents (factors of 2).
Var resize_spatial(const Var& x, int out_h, int out_w);

}  // namespace phymoe
