#pragma once

#include <vector>

#include "phymoe/autodiff.hpp"
#include "phymoe/image.hpp"

namespace phymoe {
namespace ops {

// ---- elementwise ----
Var add(const Var& a, const Var& b);      // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var exp_v(const Var& a);
Var log_v(const Var& a);       // caller guarantees positive input
Var sqrt_v(const Var& a);
Var abs_v(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh_v(const Var& a);
Var softplus(const Var& a);
Var gelu(const Var& a);        // tanh approximation
Var cos_v(const Var& a);
Var sin_v(const Var& a);
Var pow_vv(const Var& base, const Var& expo);  // same shape, base > 0
Var clamp01(const Var& a);     // pass-through gradient inside [0,1]
Var max_scalar(const Var& a, double m);
Var min_scalar(const Var& a, double m);

// ---- broadcast with a scalar Var (shape {1}) ----
Var mul_bc(const Var& a, const Var& s);
Var add_bc(const Var& a, const Var& s);
Var div_bc(const Var& a, const Var& s);

// ---- channel-wise broadcast over HWC ----
Var scale_channels(const Var& x, const Var& s);  // s shape {C}
Var shift_channels(const Var& x, const Var& b);  // b shape {C}

// ---- reductions / reshapes ----
Var sum_all(const Var& a);    // -> {1}
Var mean_all(const Var& a);   // -> {1}
Var reshape(const Var& a, std::vector<int> shape);
Var flatten(const Var& a);
Var dot_const(const Var& a, const Tensor& u);       // rank-1 . const -> {1}
Var index_scalar(const Var& a, int64_t i);          // -> {1}
Var stack_scalars(const std::vector<Var>& xs);      // n x {1} -> {n}
Var mean_scalars(const std::vector<Var>& xs);       // -> {1}
Var l2_normalize(const Var& a, double eps = 1e-12);

// ---- structure ----
Var concat_c(const std::vector<Var>& xs);           // HWC along channels
Var slice_c(const Var& x, int c0, int c1);
Var upsample_nearest2(const Var& x);

enum class Pad { kSameReflect, kValid };

// Grouped cross-correlation. x: (H,W,Cin); w: (kh,kw,Cin/groups,Cout).
// Output channel co belongs to input group co / (Cout/groups).
Var conv2d(const Var& x, const Var& w, int groups = 1, int stride = 1,
           Pad pad = Pad::kSameReflect);

// Normalized per channel group over (H,W,C/groups); no affine.
Var group_norm_raw(const Var& x, int groups, double eps = 1e-5);
// With per-channel affine (gamma, beta of shape {C}).
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               double eps = 1e-5);

Var softmax_vec(const Var& logits);
Var adaptive_pool(const Var& x, int out_h, int out_w);
Var global_pool_vec(const Var& x);  // -> {C}

// x rank-1 {in}; w {in,out}; optional bias {out}.
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);

// 2-D DFT with 1/sqrt(HW) normalization; output (H,W,2C): first C channels
// real part, next C imaginary part.
Var dft2_reim(const Var& x);

// ---- helpers ----
Var image_var(const ImageTensor& img);
ImageTensor to_image_clamped(const Var& v);

// Multiply-accumulate accounting for conv2d/linear, used by the parameter
// and cost report.
struct MacScope {
  MacScope();
  ~MacScope();
  int64_t macs() const;
};
void mac_add(int64_t n);

}  // namespace ops
}  // namespace phymoe
