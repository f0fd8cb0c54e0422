#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phymoe/gradcheck.hpp"
#include "phymoe/ops.hpp"

using namespace phymoe;
using namespace phymoe::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0,
                     double offset = 0.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = offset + scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("quadratic has near-exact gradients") {
  Var p = make_param(random_tensor({6}, 1));
  auto f = [&] { return sum_all(square(p)); };
  const auto report = grad_check(f, {{"p", p}}, {1e-8, 1e-5});
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("elementwise op gradients") {
  Var a = make_param(random_tensor({3, 4, 2}, 2, 0.5, 0.1));
  Var b = make_param(random_tensor({3, 4, 2}, 3, 0.5, 2.0));
  struct Case {
    const char* name;
    std::function<Var()> f;
  };
  const std::vector<Case> cases = {
      {"add", [&] { return mean_all(add(a, b)); }},
      {"sub_mul", [&] { return mean_all(mul(sub(a, b), a)); }},
      {"div", [&] { return mean_all(div(a, b)); }},
      {"exp", [&] { return mean_all(exp_v(a)); }},
      {"sigmoid", [&] { return mean_all(sigmoid(a)); }},
      {"tanh", [&] { return mean_all(tanh_v(a)); }},
      {"softplus", [&] { return mean_all(softplus(a)); }},
      {"gelu", [&] { return mean_all(gelu(a)); }},
      {"cos", [&] { return mean_all(cos_v(a)); }},
      {"sin", [&] { return mean_all(sin_v(a)); }},
      {"sqrt", [&] { return mean_all(sqrt_v(add_scalar(square(a), 0.1))); }},
      {"log", [&] { return mean_all(log_v(add_scalar(square(a), 0.5))); }},
      {"scalar_bc", [&] { return mean_all(mul_bc(a, mean_all(b))); }},
      {"div_bc", [&] { return mean_all(div_bc(a, add_scalar(mean_all(square(b)), 1.0))); }},
      {"l2norm", [&] { return sum_all(square(l2_normalize(flatten(a)))); }},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    const auto report = grad_check(c.f, {{"a", a}, {"b", b}});
    CHECK(report.pass);
  }
}

TEST_CASE("pow gradients for both operands") {
  Var base = make_param(random_tensor({2, 2, 1}, 5, 0.2, 0.9));
  Var expo = make_param(random_tensor({2, 2, 1}, 6, 0.1, 1.2));
  auto f = [&] { return mean_all(pow_vv(base, expo)); };
  CHECK(grad_check(f, {{"base", base}, {"expo", expo}}).pass);
}

TEST_CASE("conv2d gradients: grouped, depthwise, strided") {
  Var x = make_param(random_tensor({4, 4, 4}, 7, 0.7));
  Var w1 = make_param(random_tensor({3, 3, 4, 4}, 8, 0.4));
  Var wd = make_param(random_tensor({3, 3, 1, 4}, 9, 0.4));
  Var ws = make_param(random_tensor({3, 3, 2, 6}, 10, 0.4));

  auto f1 = [&] { return mean_all(square(conv2d(x, w1))); };
  CHECK(grad_check(f1, {{"x", x}, {"w", w1}}).pass);

  auto fd = [&] { return mean_all(square(conv2d(x, wd, 4))); };
  CHECK(grad_check(fd, {{"x", x}, {"w", wd}}).pass);

  auto fs = [&] { return mean_all(square(conv2d(x, ws, 2, 2))); };
  CHECK(grad_check(fs, {{"x", x}, {"w", ws}}).pass);

  auto fv = [&] { return mean_all(square(conv2d(x, w1, 1, 1, Pad::kValid))); };
  CHECK(grad_check(fv, {{"x", x}, {"w", w1}}).pass);
}

TEST_CASE("conv2d -> gelu -> sum composite") {
  Var x = make_param(random_tensor({4, 4, 2}, 11, 0.6));
  Var w = make_param(random_tensor({3, 3, 2, 3}, 12, 0.5));
  auto f = [&] { return sum_all(gelu(conv2d(x, w))); };
  const auto report = grad_check(f, {{"x", x}, {"w", w}});
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("softmax -> log-sum composite") {
  Var logits = make_param(random_tensor({5}, 13, 1.5));
  auto f = [&] {
    Var p = softmax_vec(logits);
    return sum_all(mul(p, log_v(add_scalar(p, 1e-6))));
  };
  CHECK(grad_check(f, {{"logits", logits}}).pass);
}

TEST_CASE("group_norm gradients incl. affine") {
  Var x = make_param(random_tensor({3, 3, 4}, 14, 1.2));
  Var gamma = make_param(random_tensor({4}, 15, 0.3, 1.0));
  Var beta = make_param(random_tensor({4}, 16, 0.3));
  auto f = [&] { return mean_all(square(group_norm(x, gamma, beta, 2))); };
  CHECK(grad_check(f, {{"x", x}, {"gamma", gamma}, {"beta", beta}}).pass);
}

TEST_CASE("pool, linear, reshape, dft gradients") {
  Var x = make_param(random_tensor({4, 6, 3}, 17, 0.8));

  auto fpool = [&] { return mean_all(square(adaptive_pool(x, 2, 3))); };
  CHECK(grad_check(fpool, {{"x", x}}).pass);

  Var w = make_param(random_tensor({8, 3}, 18, 0.5));
  Var b = make_param(random_tensor({3}, 19, 0.5));
  auto flin = [&] {
    Var pooled = flatten(adaptive_pool(slice_c(x, 0, 2), 2, 2));
    return mean_all(square(linear(pooled, w, b)));
  };
  CHECK(grad_check(flin, {{"x", x}, {"w", w}, {"b", b}}).pass);

  auto fdft = [&] { return mean_all(square(dft2_reim(x))); };
  CHECK(grad_check(fdft, {{"x", x}}).pass);

  auto fup = [&] { return mean_all(square(upsample_nearest2(x))); };
  CHECK(grad_check(fup, {{"x", x}}).pass);

  auto fcat = [&] {
    return mean_all(square(concat_c({slice_c(x, 0, 1), slice_c(x, 2, 3)})));
  };
  CHECK(grad_check(fcat, {{"x", x}}).pass);
}

TEST_CASE("channel broadcast gradients") {
  Var x = make_param(random_tensor({3, 3, 4}, 20, 0.6));
  Var s = make_param(random_tensor({4}, 21, 0.4, 1.0));
  Var b = make_param(random_tensor({4}, 22, 0.4));
  auto f = [&] { return mean_all(square(shift_channels(scale_channels(x, s), b))); };
  CHECK(grad_check(f, {{"x", x}, {"s", s}, {"b", b}}).pass);
}

TEST_CASE("clamp and floor ops use the pass-through subgradient away from kinks") {
  Var x = make_param(random_tensor({4, 4, 1}, 23, 0.3, 0.5));
  auto f = [&] { return mean_all(square(clamp01(x))); };
  CHECK(grad_check(f, {{"x", x}}).pass);

  auto fm = [&] { return mean_all(max_scalar(x, 0.4)); };
  CHECK(grad_check(fm, {{"x", x}}).pass);
}

TEST_CASE("sampled-coordinate mode still catches the analytic gradient") {
  Var p = make_param(random_tensor({64}, 24));
  auto f = [&] { return sum_all(square(p)); };
  GradCheckOptions opt;
  opt.max_coords_per_param = 5;
  const auto report = grad_check(f, {{"p", p}}, opt);
  CHECK(report.pass);
}

TEST_CASE("tolerance tighter than the scheme accuracy fails as expected") {
  Var x = make_param(random_tensor({3, 3, 2}, 25, 0.7));
  Var w = make_param(random_tensor({3, 3, 2, 2}, 26, 0.5));
  auto f = [&] { return sum_all(gelu(conv2d(x, w))); };
  const auto report = grad_check(f, {{"x", x}, {"w", w}}, {1e-13, 1e-5});
  CHECK_FALSE(report.pass);
}
