#include "phymoe/blocks.hpp"

#include <stdexcept>

namespace phymoe {

using namespace ops;

Conv::Conv(ModuleCtx& ctx, const std::string& name, int k, int cin, int cout,
           int groups, int stride, bool bias, double init_scale, ops::Pad pad)
    : groups_(groups), stride_(stride), pad_(pad) {
  const int cin_pg = cin / groups;
  const int fan_in = k * k * cin_pg;
  w_ = ctx.store.create(name + ".w", [&] {
    if (init_scale == 0.0) return init_zeros({k, k, cin_pg, cout});
    if (init_scale > 0.0) return init_normal({k, k, cin_pg, cout}, init_scale, ctx.init_rng);
    return init_he({k, k, cin_pg, cout}, fan_in, ctx.init_rng);
  });
  if (bias) b_ = ctx.store.create(name + ".b", [&] { return init_zeros({cout}); });
}

Var Conv::operator()(const Var& x) const {
  Var y = conv2d(x, w_, groups_, stride_, pad_);
  if (b_.defined()) y = shift_channels(y, b_);
  return y;
}

Mdta::Mdta(ModuleCtx& ctx, const std::string& name, int channels, int heads, int gn_groups)
    : gn_groups_(gn_groups) {
  if (channels % heads) throw std::invalid_argument("MDTA channels % heads != 0");
  if (channels % gn_groups) throw std::invalid_argument("MDTA channels % gn_groups != 0");
  pw_in_ = Conv(ctx, name + ".pw_in", 1, channels, channels, heads);
  dw_ = Conv(ctx, name + ".dw", 3, channels, channels, channels);
  pw_out_ = Conv(ctx, name + ".pw_out", 1, channels, channels);
  gamma_ = ctx.store.create(name + ".gn.gamma", [&] { return init_full({channels}, 1.0); });
  beta_ = ctx.store.create(name + ".gn.beta", [&] { return init_zeros({channels}); });
}

Var Mdta::operator()(const Var& x) const {
  return group_norm(pw_out_(dw_(pw_in_(x))), gamma_, beta_, gn_groups_);
}

Gdfn::Gdfn(ModuleCtx& ctx, const std::string& name, int channels, int expand) {
  const int hidden = channels * expand;
  pw_in_ = Conv(ctx, name + ".pw_in", 1, channels, hidden);
  dw_ = Conv(ctx, name + ".dw", 3, hidden, hidden, hidden);
  gate_ = Conv(ctx, name + ".gate", 1, channels, hidden);
  pw_out_ = Conv(ctx, name + ".pw_out", 1, hidden, channels);
}

Var Gdfn::operator()(const Var& x) const {
  Var main = gelu(dw_(pw_in_(x)));
  return pw_out_(mul(main, gate_(x)));
}

FilmCond::FilmCond(ModuleCtx& ctx, const std::string& name, int emb_channels,
                   int feat_channels, int rank)
    : feat_channels_(feat_channels) {
  down_ = Conv(ctx, name + ".down", 1, emb_channels, rank);
  up_ = Conv(ctx, name + ".up", 1, rank, 2 * feat_channels, 1, 1, true, 0.0);
}

Var FilmCond::operator()(const Var& feat, const Var& emb) const {
  const int H = feat.val().dim(0), W = feat.val().dim(1);
  Var e = resize_spatial(emb, H, W);
  Var m = up_(gelu(down_(e)));
  Var scale = slice_c(m, 0, feat_channels_);
  Var shift = slice_c(m, feat_channels_, 2 * feat_channels_);
  return add(mul(feat, add_scalar(scale, 1.0)), shift);
}

ResBlock::ResBlock(ModuleCtx& ctx, const std::string& name, int channels) {
  c1_ = Conv(ctx, name + ".c1", 3, channels, channels);
  c2_ = Conv(ctx, name + ".c2", 3, channels, channels);
}

Var ResBlock::operator()(const Var& x) const { return add(x, c2_(gelu(c1_(x)))); }

Var resize_spatial(const Var& x, int out_h, int out_w) {
  int h = x.val().dim(0), w = x.val().dim(1);
  Var cur = x;
  while (h < out_h || w < out_w) {
    cur = upsample_nearest2(cur);
    h = cur.val().dim(0);
    w = cur.val().dim(1);
  }
  if (h > out_h || w > out_w) cur = adaptive_pool(cur, out_h, out_w);
  return cur;
}

}  // namespace phymoe
