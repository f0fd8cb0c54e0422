#include "phymoe/experts.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace phymoe {

using namespace ops;

namespace {

int64_t g_expert_calls = 0;

constexpr double kDivEps = 1e-6;

// Tile a single-channel map across the image channels.
Var tile3(const Var& one, int channels) {
  if (channels == 1) return one;
  std::vector<Var> reps(static_cast<size_t>(channels), one);
  return concat_c(reps);
}

// Per-channel mean of the brightest decile; x is data, not a graph input.
Tensor bright_decile_mean(const Tensor& x) {
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int64_t n = static_cast<int64_t>(H) * W;
  const int64_t top = std::max<int64_t>(1, n / 10);
  Tensor out({C});
  std::vector<double> vals(static_cast<size_t>(n));
  for (int c = 0; c < C; ++c) {
    for (int64_t i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = x[i * C + c];
    std::nth_element(vals.begin(), vals.begin() + (n - top), vals.end());
    double s = 0;
    for (int64_t i = n - top; i < n; ++i) s += vals[static_cast<size_t>(i)];
    out[c] = s / static_cast<double>(top);
  }
  return out;
}

Tensor box_mean(const Tensor& x, int k) {
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int half = k / 2;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  Tensor out({H, W, C});
  const double inv = 1.0 / (k * k);
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int dy = -half; dy <= half; ++dy)
          for (int dx = -half; dx <= half; ++dx)
            s += x.at3(reflect(y + dy, H), reflect(xx + dx, W), c);
        out.at3(y, xx, c) = s * inv;
      }
  return out;
}

}  // namespace

std::array<double, 3> direction_logits(double a, double theta) {
  return {1.0 - a, a * (1.0 + std::cos(theta * M_PI)), a * (1.0 + std::sin(theta * M_PI))};
}

Tensor gaussian_kernel_2d(int k, double sigma, int channels) {
  Tensor w({k, k, 1, channels});
  const int half = k / 2;
  double sum = 0;
  for (int y = -half; y <= half; ++y)
    for (int x = -half; x <= half; ++x) {
      const double g = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      w[((static_cast<int64_t>(y + half) * k + (x + half)) * 1 + 0) * channels] = g;
      sum += g;
    }
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      const double v = w[(static_cast<int64_t>(y) * k + x) * channels] / sum;
      for (int c = 0; c < channels; ++c)
        w[(static_cast<int64_t>(y) * k + x) * channels + c] = v;
    }
  return w;
}

Tensor gaussian_kernel_1d(int k, double sigma, bool horizontal, int channels) {
  const int kh = horizontal ? 1 : k;
  const int kw = horizontal ? k : 1;
  Tensor w({kh, kw, 1, channels});
  const int half = k / 2;
  double sum = 0;
  std::vector<double> g(static_cast<size_t>(k));
  for (int i = -half; i <= half; ++i) {
    g[static_cast<size_t>(i + half)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += g[static_cast<size_t>(i + half)];
  }
  for (int i = 0; i < k; ++i)
    for (int c = 0; c < channels; ++c)
      w[static_cast<int64_t>(i) * channels + c] = g[static_cast<size_t>(i)] / sum;
  return w;
}

ImageTensor dehaze_oracle(const ImageTensor& x, double t, const std::array<double, 3>& A) {
  Tensor out = x.tensor();
  const int C = x.channels();
  for (int64_t i = 0; i < out.size(); ++i) {
    const double a = A[static_cast<size_t>(i % C) % 3];
    out[i] = (out[i] - a * (1.0 - t)) / (t + kDivEps);
  }
  return ImageTensor::from_tensor_clamped(std::move(out));
}

ImageTensor dehaze_oracle(const ImageTensor& x, const Tensor& t_field,
                          const std::array<double, 3>& A) {
  Tensor out = x.tensor();
  const int C = x.channels();
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx) {
      const double t = t_field.at2(y, xx);
      for (int c = 0; c < C; ++c) {
        const double a = A[static_cast<size_t>(c % 3)];
        out.at3(y, xx, c) = (x.at(y, xx, c) - a * (1.0 - t)) / (t + kDivEps);
      }
    }
  return ImageTensor::from_tensor_clamped(std::move(out));
}

ImageTensor lowlight_oracle(const ImageTensor& x, double L, double gamma) {
  Tensor out = x.tensor();
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = std::pow(out[i] / (L + kDivEps), 1.0 / gamma);
  return ImageTensor::from_tensor_clamped(std::move(out));
}

// ---------------- dehaze ----------------

DehazeExpert::DehazeExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg) {
  const int w = cfg.width;
  stem1_ = Conv(ctx, name + ".stem1", 3, 3, w);
  stem2_ = Conv(ctx, name + ".stem2", 3, w, w);
  film_ = FilmCond(ctx, name + ".film", cfg.cond_channels, w, cfg.adapter_rank);
  t_head_ = Conv(ctx, name + ".t_head", 1, w, 3);
  // weak spatial refinement around a mild-haze prior
  t_refine_ = Conv(ctx, name + ".t_refine", 3, 3, 3, 1, 1, true, 0.1);
  s_raw_ = ctx.store.create(name + ".s_raw", [&] { return init_full({3}, 3.0); });
  wmix_w_ = ctx.store.create(name + ".wmix.w", [&] { return init_zeros({w, 1}); });
  wmix_b_ = ctx.store.create(name + ".wmix.b", [&] { return init_zeros({1}); });
}

Var DehazeExpert::forward(const Var& x, const Var& cond) const {
  ++g_expert_calls;
  const int C = x.val().dim(2);
  Var feat = gelu(stem2_(gelu(stem1_(x))));
  if (cond.defined()) feat = film_(feat, cond);

  // Per-channel transmittance, sigmoid-scaled, then spatially refined.
  Var s = sigmoid(s_raw_);
  Var t12 = scale_channels(sigmoid(t_head_(feat)), s);
  Var t = sigmoid(add_scalar(t_refine_(t12), 1.7));  // prior near t ~ 0.85

  // Atmospheric light: global bright-decile mean blended with a local mean.
  const Tensor a_global_c = bright_decile_mean(x.val());
  Tensor a_global_full(x.val().shape());
  for (int64_t i = 0; i < a_global_full.size(); ++i)
    a_global_full[i] = a_global_c[i % C];
  Var a_global = make_const(std::move(a_global_full));
  Var a_local = make_const(box_mean(x.val(), 15));
  Var w_mix = sigmoid(linear(global_pool_vec(feat), wmix_w_, wmix_b_));
  Var one_minus = add_scalar(neg(w_mix), 1.0);
  Var A = add(mul_bc(a_global, w_mix), mul_bc(a_local, one_minus));

  // J = (I - A(1-t)) / (t + eps)
  Var one_minus_t = add_scalar(neg(t), 1.0);
  Var numer = sub(x, mul(A, one_minus_t));
  Var out = clamp01(div(numer, add_scalar(t, kDivEps)));

  last_.t_eq12 = t12.val();
  last_.t_rgb = t.val();
  last_.A = A.val();
  for (int c = 0; c < 3; ++c) last_.s_rgb[static_cast<size_t>(c)] = s.val()[c];
  last_.w_mix = w_mix.val()[0];
  return out;
}

// ---------------- denoise ----------------

DenoiseExpert::DenoiseExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg) {
  const int w = cfg.width;
  stem1_ = Conv(ctx, name + ".stem1", 3, 3, w);
  stem2_ = Conv(ctx, name + ".stem2", 3, w, w);
  film_ = FilmCond(ctx, name + ".film", cfg.cond_channels, w, cfg.adapter_rank);
  coarse_ = Conv(ctx, name + ".coarse", 3, w, w);
  sigma_head_ = Conv(ctx, name + ".sigma_head", 1, 2 * w, 1, 1, 1, true, 0.0);
  for (int s = 0; s < 3; ++s)
    residual_fix_[static_cast<size_t>(s)] =
        Conv(ctx, name + ".fix" + std::to_string(s), 1, w, 3, 1, 1, true, 0.0);
  gauss_[0] = gaussian_kernel_2d(3, 0.5, 3);
  gauss_[1] = gaussian_kernel_2d(7, 1.0, 3);
  gauss_[2] = gaussian_kernel_2d(13, 2.0, 3);
}

Var DenoiseExpert::forward(const Var& x, const Var& cond) const {
  ++g_expert_calls;
  const int H = x.val().dim(0), W = x.val().dim(1);
  Var feat = gelu(stem2_(gelu(stem1_(x))));
  if (cond.defined()) feat = film_(feat, cond);

  // multi-scale noise analysis: full-res plus a half-res pass
  Var half = adaptive_pool(feat, std::max(1, H / 2), std::max(1, W / 2));
  Var up = resize_spatial(gelu(coarse_(half)), H, W);
  Var joint = concat_c({feat, up});
  // head starts at sigma ~= 0.05 via the bias; bounded to (0, 0.25)
  Var sigma = mul_scalar(sigmoid(add_scalar(sigma_head_(joint), -1.386)), 0.25);

  std::array<Var, 3> weights;
  for (int s = 0; s < 3; ++s) {
    const auto tier = kNoiseTiers[static_cast<size_t>(s)];
    Var d = add_scalar(sigma, -tier.mu_s);
    weights[static_cast<size_t>(s)] =
        exp_v(mul_scalar(square(d), -0.5 / (tier.sigma_s * tier.sigma_s)));
  }

  Var num, den;
  for (int s = 0; s < 3; ++s) {
    Var filt = conv2d(x, make_const(gauss_[static_cast<size_t>(s)]), 3);
    filt = add(filt, residual_fix_[static_cast<size_t>(s)](feat));
    Var w3 = tile3(weights[static_cast<size_t>(s)], 3);
    Var contrib = mul(w3, filt);
    num = s == 0 ? contrib : add(num, contrib);
    den = s == 0 ? weights[0] : add(den, weights[static_cast<size_t>(s)]);
  }
  Var out = clamp01(div(num, tile3(add_scalar(den, 1e-8), 3)));

  last_.sigma_map = sigma.val();
  last_.tiers = kNoiseTiers;
  return out;
}

// ---------------- lowlight ----------------

LowlightExpert::LowlightExpert(ModuleCtx& ctx, const std::string& name,
                               const ExpertConfig& cfg) {
  const int w = cfg.width;
  stem1_ = Conv(ctx, name + ".stem1", 3, 3, w);
  stem2_ = Conv(ctx, name + ".stem2", 3, w, w);
  film_ = FilmCond(ctx, name + ".film", cfg.cond_channels, w, cfg.adapter_rank);
  l_head_ = Conv(ctx, name + ".l_head", 1, w, 1, 1, 1, true, 0.0);
  g_head_ = Conv(ctx, name + ".g_head", 1, w, 1, 1, 1, true, 0.0);
  l_global_w_ = ctx.store.create(name + ".l_glob.w", [&] { return init_zeros({w, 1}); });
}

Var LowlightExpert::forward(const Var& x, const Var& cond) const {
  ++g_expert_calls;
  const int C = x.val().dim(2);
  Var feat = gelu(stem2_(gelu(stem1_(x))));
  if (cond.defined()) feat = film_(feat, cond);

  // illumination: local map plus a global offset; starts near L = 1
  Var l_local = l_head_(feat);
  Var l_global = linear(global_pool_vec(feat), l_global_w_);
  Var l_pre = add_bc(l_local, add_scalar(l_global, 6.0));
  Var L = add_scalar(mul_scalar(sigmoid(l_pre), 1.0 - 1e-3), 1e-3);

  // spatially adaptive gamma, softplus-floored; starts near gamma = 1
  Var gamma = add_scalar(softplus(add_scalar(g_head_(feat), 0.3783)), 0.1);

  Var ratio = div(x, tile3(add_scalar(L, kDivEps), C));
  Var base = max_scalar(ratio, 1e-8);
  Var expo = tile3(div(make_const(Tensor::full({L.val().dim(0), L.val().dim(1), 1}, 1.0)),
                       gamma),
                   C);
  Var out = clamp01(pow_vv(base, expo));

  last_.L = L.val();
  last_.gamma_map = gamma.val();
  return out;
}

// ---------------- deblur ----------------

DeblurExpert::DeblurExpert(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg) {
  const int w = cfg.width;
  stem1_ = Conv(ctx, name + ".stem1", 3, 3, w);
  stem2_ = Conv(ctx, name + ".stem2", 3, w, w);
  film_ = FilmCond(ctx, name + ".film", cfg.cond_channels, w, cfg.adapter_rank);
  Rng& rng = ctx.init_rng;
  p_w1_ = ctx.store.create(name + ".p.w1", [&] { return init_he({w, 16}, w, rng); });
  p_b1_ = ctx.store.create(name + ".p.b1", [&] { return init_zeros({16}); });
  p_w2_ = ctx.store.create(name + ".p.w2", [&] { return init_zeros({16, 4}); });
  p_b2_ = ctx.store.create(name + ".p.b2", [&] {
    Tensor b({4});
    b[0] = -2.0;  // kappa starts small
    return b;
  });
  gauss_[0] = gaussian_kernel_2d(5, 1.0, 3);
  gauss_[1] = gaussian_kernel_1d(5, 1.5, true, 3);
  gauss_[2] = gaussian_kernel_1d(5, 1.5, false, 3);
}

Var DeblurExpert::forward(const Var& x, const Var& cond) const {
  ++g_expert_calls;
  Var feat = gelu(stem2_(gelu(stem1_(x))));
  if (cond.defined()) feat = film_(feat, cond);

  Var h = gelu(linear(global_pool_vec(feat), p_w1_, p_b1_));
  Var p = linear(h, p_w2_, p_b2_);  // [kappa_raw, sx_raw, sy_raw, theta_raw]
  Var kappa = softplus(index_scalar(p, 0));
  Var sx = add_scalar(mul_scalar(sigmoid(index_scalar(p, 1)), 2.7), 0.3);
  Var sy = add_scalar(mul_scalar(sigmoid(index_scalar(p, 2)), 2.7), 0.3);
  Var theta = sigmoid(index_scalar(p, 3));
  Var a = abs_v(sub(sx, sy));

  Var tp = mul_scalar(theta, M_PI);
  Var one_minus_a = add_scalar(neg(a), 1.0);
  Var lx = mul(a, add_scalar(cos_v(tp), 1.0));
  Var ly = mul(a, add_scalar(sin_v(tp), 1.0));
  Var w_dir = softmax_vec(stack_scalars({one_minus_a, lx, ly}));

  Var blur_mix;
  for (int d = 0; d < 3; ++d) {
    Var b = conv2d(x, make_const(gauss_[static_cast<size_t>(d)]), 3);
    Var contrib = mul_bc(b, index_scalar(w_dir, d));
    blur_mix = d == 0 ? contrib : add(blur_mix, contrib);
  }
  // unsharp blend: x + kappa * (x - directional blur)
  Var out = clamp01(add(x, mul_bc(sub(x, blur_mix), kappa)));

  last_.kappa = kappa.val()[0];
  last_.sigma_x = sx.val()[0];
  last_.sigma_y = sy.val()[0];
  last_.theta = theta.val()[0];
  last_.a = a.val()[0];
  for (int d = 0; d < 3; ++d) last_.w_dir[static_cast<size_t>(d)] = w_dir.val()[d];
  return out;
}

// ---------------- bank ----------------

ExpertBank::ExpertBank(ModuleCtx& ctx, const std::string& name, const ExpertConfig& cfg) {
  dehaze_ = std::make_unique<DehazeExpert>(ctx, name + ".dehaze", cfg);
  denoise_ = std::make_unique<DenoiseExpert>(ctx, name + ".denoise", cfg);
  lowlight_ = std::make_unique<LowlightExpert>(ctx, name + ".lowlight", cfg);
  deblur_ = std::make_unique<DeblurExpert>(ctx, name + ".deblur", cfg);
}

Var ExpertBank::apply(int expert_id, const Var& x, const Var& cond) const {
  switch (expert_id) {
    case 0: return dehaze_->forward(x, cond);
    case 1: return denoise_->forward(x, cond);
    case 2: return lowlight_->forward(x, cond);
    case 3: return deblur_->forward(x, cond);
    default: throw std::invalid_argument("unknown expert id");
  }
}

void ExpertBank::reset_call_counter() { g_expert_calls = 0; }
int64_t ExpertBank::call_count() { return g_expert_calls; }

}  // namespace phymoe
