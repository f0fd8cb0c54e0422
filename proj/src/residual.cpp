#include "phymoe/residual.hpp"

#include <stdexcept>

#include "phymoe/degrade.hpp"

namespace phymoe {

using namespace ops;

Rmp::Rmp(ModuleCtx& ctx, const std::string& name, const RmpConfig& cfg) : cfg_(cfg) {
  const int d = cfg.embed_dim;
  enc1_ = Conv(ctx, name + ".enc1", 3, cfg.in_channels, d);
  enc2_ = Conv(ctx, name + ".enc2", 3, d, d);
  pre1_ = Conv(ctx, name + ".pre1", 1, d, d);
  pre2_ = Conv(ctx, name + ".pre2", 1, d, d);
  pre3_ = Conv(ctx, name + ".pre3", 1, d, d);
  // MDTA here is convolutional; the head notion does not apply, so the
  // pointwise convs stay ungrouped.
  mdta1_ = Mdta(ctx, name + ".mdta1", d, 1, cfg.gn_groups);
  mdta2_ = Mdta(ctx, name + ".mdta2", d, 1, cfg.gn_groups);
  mdta3_ = Mdta(ctx, name + ".mdta3", d, 1, cfg.gn_groups);
  gdfn1_ = Gdfn(ctx, name + ".gdfn1", d, cfg.gdfn_expand);
  gdfn2_ = Gdfn(ctx, name + ".gdfn2", d, cfg.gdfn_expand);
  gdfn3_ = Gdfn(ctx, name + ".gdfn3", d, cfg.gdfn_expand);
  down2_ = Conv(ctx, name + ".down2", 3, d, d, 1, 2);
  down3_ = Conv(ctx, name + ".down3", 3, d, d, 1, 2);
  for (size_t i = 0; i < cfg.decoder_dims.size(); ++i)
    proj_.emplace_back(ctx, name + ".proj" + std::to_string(i), 1, d,
                       cfg.decoder_dims[i]);
}

Var Rmp::encode(const Var& residual) const { return enc2_(gelu(enc1_(residual))); }

std::array<Var, 3> Rmp::pyramid(const Var& r0) const {
  const int h = r0.val().dim(0), w = r0.val().dim(1);
  if (h % 4 || w % 4 || h < 8 || w < 8)
    throw std::invalid_argument("pyramid input must be >= 8 and divisible by 4");
  Var r1 = gdfn1_(mdta1_(pre1_(r0)));
  Var r2 = down2_(gdfn2_(mdta2_(pre2_(r0))));
  Var r3 = down3_(gdfn3_(mdta3_(pre3_(r2))));
  return {r1, r2, r3};
}

ResidualEmbedding Rmp::project(const std::array<Var, 3>& pyr) const {
  ResidualEmbedding emb;
  for (size_t i = 0; i < proj_.size(); ++i) {
    const int src = static_cast<int>(i % 3);
    emb.levels.push_back(proj_[i](pyr[static_cast<size_t>(src)]));
    emb.source_scales.push_back(src + 1);
  }
  return emb;
}

ResidualEmbedding Rmp::run(const Var& residual, Var* r1_out) const {
  const auto pyr = pyramid(encode(residual));
  if (r1_out) *r1_out = pyr[0];
  return project(pyr);
}

Fadd::Fadd(ModuleCtx& ctx, const std::string& name, const FaddConfig& cfg) : cfg_(cfg) {
  const int b = cfg.branch_channels;
  // Equal channel budget per kernel branch via a grouped pointwise
  // pre-projection (grouped when the input width allows it).
  const int pre_groups = (cfg.in_channels % 4 == 0) ? 4 : 1;
  pre_ = Conv(ctx, name + ".pre", 1, cfg.in_channels, 4 * b, pre_groups);
  b7_ = Conv(ctx, name + ".b7", 7, b, b);
  b5_ = Conv(ctx, name + ".b5", 5, b, b);
  b3_ = Conv(ctx, name + ".b3", 3, b, b);
  b1_ = Conv(ctx, name + ".b1", 1, b, b);
  const int head_in = cfg.pool_hw * cfg.pool_hw * cfg.embed_dim;
  head_w_ = ctx.store.create(name + ".head.w",
                             [&] { return init_zeros({head_in, kNumKinds}); });
  head_b_ = ctx.store.create(name + ".head.b",
                             [&] { return init_zeros({kNumKinds}); });
}

FrequencyFeature Fadd::decompose(const Var& x) const {
  if (x.val().dim(0) < 7 || x.val().dim(1) < 7)
    throw std::invalid_argument("fadd input smaller than the 7x7 branch kernel");
  const int b = cfg_.branch_channels;
  Var p = pre_(x);
  FrequencyFeature f;
  f.branch_channels = b;
  f.f_low = b7_(slice_c(p, 0, b));
  f.f_mid = b5_(slice_c(p, b, 2 * b));
  f.f_high = b3_(slice_c(p, 2 * b, 3 * b));
  f.f_edge = b1_(slice_c(p, 3 * b, 4 * b));
  f.f_concat = concat_c({f.f_low, f.f_mid, f.f_high, f.f_edge});
  return f;
}

Var Fadd::posterior_logits(const Var& r1) const {
  Var pooled = adaptive_pool(r1, cfg_.pool_hw, cfg_.pool_hw);
  return linear(flatten(pooled), head_w_, head_b_);
}

DegradationPosterior Fadd::posterior(const Var& r1) const {
  return DegradationPosterior{softmax_vec(posterior_logits(r1))};
}

}  // namespace phymoe
