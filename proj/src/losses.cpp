#include "phymoe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "phymoe/metrics.hpp"

namespace phymoe {

using namespace ops;

std::string LossReport::to_json_line() const {
  nlohmann::json j;
  j["daot"] = daot;
  j["pixel"] = pixel;
  j["balance"] = balance;
  j["contrast"] = contrast;
  j["total"] = total;
  j["w2"] = w2;
  j["freq_reg"] = freq_reg;
  j["l1"] = l1;
  j["fft"] = fft;
  j["ssim_term"] = ssim_term;
  return j.dump();
}

// Band mask over normalized radial frequency, optionally direction-weighted.
static Tensor band_mask(int H, int W, const PhysicsBand& band, std::optional<double> theta) {
  Tensor mask({H, W, 1});
  for (int u = 0; u < H; ++u) {
    const double fu = 2.0 * std::min(u, H - u) / H;
    for (int v = 0; v < W; ++v) {
      const double fv = 2.0 * std::min(v, W - v) / W;
      const double rho = std::sqrt(fu * fu + fv * fv) / std::sqrt(2.0);
      if (rho < band.lo || rho >= band.hi) continue;
      double w = band.weight;
      if (band.directional && theta.has_value() && rho > 0) {
        const double su = u <= H / 2 ? fu : -fu;
        const double sv = v <= W / 2 ? fv : -fv;
        const double phi = std::atan2(su, sv);
        const double d = phi - *theta * M_PI;
        w *= std::cos(d) * std::cos(d);
      }
      mask.at3(u, v, 0) = w;
    }
  }
  // hi == 1.0 should include the Nyquist shell
  if (band.hi >= 1.0) {
    for (int u = 0; u < H; ++u) {
      const double fu = 2.0 * std::min(u, H - u) / H;
      for (int v = 0; v < W; ++v) {
        const double fv = 2.0 * std::min(v, W - v) / W;
        const double rho = std::sqrt(fu * fu + fv * fv) / std::sqrt(2.0);
        if (rho >= band.lo && rho <= 1.0 && mask.at3(u, v, 0) == 0.0)
          mask.at3(u, v, 0) = band.weight;
      }
    }
  }
  return mask;
}

Var physics_freq_reg(const Var& residual, const Tensor& pi, const PhysicsBandSpec& bands,
                     std::optional<double> theta) {
  if (pi.size() != kNumKinds) throw std::invalid_argument("pi must have 4 entries");
  const int H = residual.val().dim(0), W = residual.val().dim(1), C = residual.val().dim(2);
  Var reim = dft2_reim(residual);
  Var re = slice_c(reim, 0, C);
  Var im = slice_c(reim, C, 2 * C);
  Var power = add(square(re), square(im));  // (H,W,C)

  Var acc;
  bool first = true;
  for (int k = 0; k < kNumKinds; ++k) {
    if (pi[k] == 0.0) continue;
    Tensor mask1 = band_mask(H, W, bands.bands[static_cast<size_t>(k)],
                             bands.bands[static_cast<size_t>(k)].directional ? theta
                                                                             : std::nullopt);
    Tensor maskC({H, W, C});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) maskC.at3(y, x, c) = mask1.at3(y, x, 0);
    Var term = sum_all(mul(power, make_const(std::move(maskC))));
    term = mul_scalar(term, pi[k] / static_cast<double>(C));
    acc = first ? term : add(acc, term);
    first = false;
  }
  if (first) return make_const(Tensor::scalar(0.0));
  return acc;
}

static std::vector<Tensor> seeded_projections(int dim, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n));
  for (int p = 0; p < n; ++p) {
    Tensor u({dim});
    double norm2 = 0;
    for (int i = 0; i < dim; ++i) {
      u[i] = rng.normal();
      norm2 += u[i] * u[i];
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (int i = 0; i < dim; ++i) u[i] *= inv;
    out.push_back(std::move(u));
  }
  return out;
}

Var w2_sliced(const std::vector<Var>& pred, const std::vector<Var>& target,
              const std::vector<Tensor>& projections, int pool_hw) {
  if (pred.empty() || pred.size() != target.size())
    throw std::invalid_argument("w2: batch too small or mismatched");
  const size_t B = pred.size();

  std::vector<Var> pv, tv;
  for (size_t i = 0; i < B; ++i) {
    const int ph = std::min(pool_hw, pred[i].val().dim(0));
    const int pw = std::min(pool_hw, pred[i].val().dim(1));
    pv.push_back(flatten(adaptive_pool(pred[i], ph, pw)));
    tv.push_back(flatten(adaptive_pool(target[i], ph, pw)));
  }

  std::vector<Var> slices;
  for (const Tensor& u : projections) {
    std::vector<Var> a, b;
    for (size_t i = 0; i < B; ++i) {
      a.push_back(dot_const(pv[i], u));
      b.push_back(dot_const(tv[i], u));
    }
    // sorted coupling: order fixed at forward, gradients flow through it
    std::vector<size_t> ia(B), ib(B);
    for (size_t i = 0; i < B; ++i) ia[i] = ib[i] = i;
    std::stable_sort(ia.begin(), ia.end(),
                     [&](size_t l, size_t r) { return a[l].val()[0] < a[r].val()[0]; });
    std::stable_sort(ib.begin(), ib.end(),
                     [&](size_t l, size_t r) { return b[l].val()[0] < b[r].val()[0]; });
    std::vector<Var> sq;
    for (size_t i = 0; i < B; ++i) sq.push_back(square(sub(a[ia[i]], b[ib[i]])));
    slices.push_back(mean_scalars(sq));
  }
  return mean_scalars(slices);
}

Var w2_sliced(const std::vector<Var>& pred, const std::vector<Var>& target,
              int n_projections, uint64_t seed, int pool_hw) {
  if (pred.empty()) throw std::invalid_argument("w2: batch too small");
  const int ph = std::min(pool_hw, pred[0].val().dim(0));
  const int pw = std::min(pool_hw, pred[0].val().dim(1));
  const int dim = ph * pw * pred[0].val().dim(2);
  return w2_sliced(pred, target, seeded_projections(dim, n_projections, seed), pool_hw);
}

DaotParts daot_loss(const std::vector<Var>& pred, const std::vector<Var>& target,
                    const std::vector<Var>& residual, const std::vector<Tensor>& pi,
                    const LossWeights& weights, const PhysicsBandSpec& bands,
                    int n_projections, uint64_t proj_seed) {
  DaotParts parts;
  parts.w2 = w2_sliced(pred, target, n_projections, proj_seed);
  std::vector<Var> regs;
  for (size_t i = 0; i < residual.size(); ++i)
    regs.push_back(physics_freq_reg(residual[i], pi[i], bands));
  parts.freq = mean_scalars(regs);
  parts.total = add(parts.w2, mul_scalar(parts.freq, weights.lambda_freq));
  return parts;
}

Var ssim_var(const Var& a, const Var& b) {
  const int H = a.val().dim(0), W = a.val().dim(1), C = a.val().dim(2);
  const int win = std::min({kSsimWindow, H, W});
  Tensor wk({win, win, 1, C});
  const double inv = 1.0 / (win * win);
  for (int64_t i = 0; i < wk.size(); ++i) wk[i] = inv;
  Var wkv = make_const(std::move(wk));
  auto box = [&](const Var& x) { return conv2d(x, wkv, C, 1, Pad::kValid); };

  Var mu_a = box(a), mu_b = box(b);
  Var var_a = sub(box(mul(a, a)), square(mu_a));
  Var var_b = sub(box(mul(b, b)), square(mu_b));
  Var cov = sub(box(mul(a, b)), mul(mu_a, mu_b));
  Var num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), kSsimC1),
                add_scalar(mul_scalar(cov, 2.0), kSsimC2));
  Var den = mul(add_scalar(add(square(mu_a), square(mu_b)), kSsimC1),
                add_scalar(add(var_a, var_b), kSsimC2));
  return mean_all(div(num, den));
}

PixelParts pixel_loss(const Var& pred, const Var& target, DegradationKind kind,
                      const LossWeights& weights) {
  if (!pred.val().same_shape(target.val()))
    throw std::invalid_argument("pixel_loss shape mismatch");
  const auto& beta = weights.beta[static_cast<size_t>(kind)];
  const int C = pred.val().dim(2);

  PixelParts parts;
  Var zero = make_const(Tensor::scalar(0.0));
  parts.l1 = beta[0] != 0.0 ? mean_all(abs_v(sub(pred, target))) : zero;

  if (beta[1] != 0.0) {
    auto mag = [&](const Var& x) {
      Var reim = dft2_reim(x);
      Var re = slice_c(reim, 0, C);
      Var im = slice_c(reim, C, 2 * C);
      return sqrt_v(add_scalar(add(square(re), square(im)), 1e-12));
    };
    parts.fft = mean_all(abs_v(sub(mag(pred), mag(target))));
  } else {
    parts.fft = zero;
  }

  parts.ssim_term = beta[2] != 0.0
                        ? add_scalar(neg(ssim_var(pred, target)), 1.0)
                        : zero;

  parts.total = add(add(mul_scalar(parts.l1, beta[0]), mul_scalar(parts.fft, beta[1])),
                    mul_scalar(parts.ssim_term, beta[2]));
  return parts;
}

Var balance_loss(const Var& mean_activation) {
  const Tensor& w = mean_activation.val();
  if (w.rank() != 1) throw std::invalid_argument("balance_loss expects a vector");
  bool all_zero = true;
  for (int64_t i = 0; i < w.size(); ++i) {
    if (w[i] < 0) throw std::invalid_argument("balance_loss entries must be >= 0");
    if (w[i] != 0) all_zero = false;
  }
  if (all_zero) throw std::invalid_argument("balance_loss of an all-zero vector");

  Var mu = mean_all(mean_activation);
  Var centered = add_bc(mean_activation, neg(mu));
  Var var = mean_all(square(centered));  // population variance
  return div(var, add_scalar(square(mu), 1e-8));
}

Var contrastive_loss(const std::vector<Var>& z, const std::vector<int>& labels,
                     double tau_c) {
  if (!(tau_c > 0)) throw std::invalid_argument("tau_c must be positive");
  if (z.size() != labels.size() || z.size() < 2)
    throw std::invalid_argument("contrastive_loss needs >= 2 labeled embeddings");
  const size_t B = z.size();
  const double inv_tau = 1.0 / tau_c;

  std::vector<Var> anchor_losses;
  for (size_t i = 0; i < B; ++i) {
    Var num, den;
    bool has_pos = false, first_den = true;
    for (size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      Var e = exp_v(mul_scalar(sum_all(mul(z[i], z[j])), inv_tau));
      den = first_den ? e : add(den, e);
      first_den = false;
      if (labels[j] == labels[i]) {
        num = has_pos ? add(num, e) : e;
        has_pos = true;
      }
    }
    if (!has_pos) continue;  // skipped anchor
    anchor_losses.push_back(sub(log_v(den), log_v(num)));
  }
  if (anchor_losses.empty())
    throw std::invalid_argument("contrastive_loss: no anchor has a positive");
  return mean_scalars(anchor_losses);
}

TotalLoss total_loss(const Var& daot, const Var& pixel, const Var& balance,
                     const Var& contrast, const LossWeights& weights) {
  for (const Var* v : {&daot, &pixel, &balance, &contrast})
    if (!v->val().all_finite()) throw std::runtime_error("non-finite loss part");
  TotalLoss out;
  out.total = add(add(daot, mul_scalar(pixel, weights.lambda1)),
                  add(mul_scalar(balance, weights.lambda2),
                      mul_scalar(contrast, weights.lambda3)));
  out.report.daot = daot.val()[0];
  out.report.pixel = pixel.val()[0];
  out.report.balance = balance.val()[0];
  out.report.contrast = contrast.val()[0];
  out.report.total = out.total.val()[0];
  return out;
}

}  // namespace phymoe
