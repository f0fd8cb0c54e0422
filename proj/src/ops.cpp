#include "phymoe/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace phymoe {
namespace ops {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* what) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.val().shape_str() + " vs " + b.val().shape_str());
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// MAC accounting (single-threaded trainer; plain globals are fine).
int64_t g_macs = 0;
int g_mac_depth = 0;

}  // namespace

MacScope::MacScope() {
  if (g_mac_depth++ == 0) g_macs = 0;
}
MacScope::~MacScope() { --g_mac_depth; }
int64_t MacScope::macs() const { return g_macs; }
void mac_add(int64_t n) {
  if (g_mac_depth > 0) g_macs += n;
}

// ---------- elementwise ----------

static Var binary_ew(const Var& a, const Var& b, const char* name,
                     double (*fwd)(double, double),
                     void (*bwd)(double, double, double, double&, double&)) {
  check_same_shape(a, b, name);
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(ta[i], tb[i]);
  return make_node(std::move(out), name, {a, b}, [a, b, bwd](Node& n) {
    const Tensor& g = n.grad;
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    Tensor* da = ga ? &a.node()->grad_ref() : nullptr;
    Tensor* db = gb ? &b.node()->grad_ref() : nullptr;
    for (int64_t i = 0; i < g.size(); ++i) {
      double dda = 0, ddb = 0;
      bwd(ta[i], tb[i], g[i], dda, ddb);
      if (da) (*da)[i] += dda;
      if (db) (*db)[i] += ddb;
    }
  });
}

Var add(const Var& a, const Var& b) {
  return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double g, double& da, double& db) {
                     da = g;
                     db = g;
                   });
}

Var sub(const Var& a, const Var& b) {
  return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double g, double& da, double& db) {
                     da = g;
                     db = -g;
                   });
}

Var mul(const Var& a, const Var& b) {
  return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double g, double& da, double& db) {
                     da = g * y;
                     db = g * x;
                   });
}

Var div(const Var& a, const Var& b) {
  return binary_ew(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double g, double& da, double& db) {
                     da = g / y;
                     db = -g * x / (y * y);
                   });
}

static Var unary_ew(const Var& a, const char* name, double (*fwd)(double),
                    double (*dfn)(double)) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(ta[i]);
  return make_node(std::move(out), name, {a}, [a, dfn](Node& n) {
    const Tensor& g = n.grad;
    Tensor& da = a.node()->grad_ref();
    const Tensor& ta = a.val();
    for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * dfn(ta[i]);
  });
}

Var neg(const Var& a) {
  return unary_ew(a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] + s;
  return make_node(std::move(out), "add_scalar", {a},
                   [a](Node& n) { a.node()->accumulate(n.grad); });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] * s;
  return make_node(std::move(out), "mul_scalar", {a}, [a, s](Node& n) {
    Tensor& da = a.node()->grad_ref();
    for (int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i] * s;
  });
}

Var exp_v(const Var& a) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(ta[i]);
  auto node = make_node(std::move(out), "exp", {a}, nullptr);
  Var self = node;
  node.node()->backward_fn = [a, self](Node& n) {
    Tensor& da = a.node()->grad_ref();
    const Tensor& y = self.val();
    for (int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i] * y[i];
  };
  return node;
}

Var log_v(const Var& a) {
  return unary_ew(a, "log", [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Var sqrt_v(const Var& a) {
  return unary_ew(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double x) { return 0.5 / std::sqrt(x); });
}

Var abs_v(const Var& a) {
  return unary_ew(a, "abs", [](double x) { return std::fabs(x); },
                  [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary_ew(a, "square", [](double x) { return x * x; },
                  [](double x) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary_ew(a, "sigmoid",
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double x) {
                    const double s = 1.0 / (1.0 + std::exp(-x));
                    return s * (1.0 - s);
                  });
}

Var tanh_v(const Var& a) {
  return unary_ew(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double x) {
                    const double t = std::tanh(x);
                    return 1.0 - t * t;
                  });
}

Var softplus(const Var& a) {
  return unary_ew(a, "softplus",
                  [](double x) { return x > 0 ? x + std::log1p(std::exp(-x))
                                              : std::log1p(std::exp(x)); },
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var gelu(const Var& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_ew(a, "gelu",
                  [](double x) {
                    const double u = kC * (x + kA * x * x * x);
                    return 0.5 * x * (1.0 + std::tanh(u));
                  },
                  [](double x) {
                    const double u = kC * (x + kA * x * x * x);
                    const double t = std::tanh(u);
                    const double sech2 = 1.0 - t * t;
                    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kC * (1.0 + 3.0 * kA * x * x);
                  });
}

Var cos_v(const Var& a) {
  return unary_ew(a, "cos", [](double x) { return std::cos(x); },
                  [](double x) { return -std::sin(x); });
}

Var sin_v(const Var& a) {
  return unary_ew(a, "sin", [](double x) { return std::sin(x); },
                  [](double x) { return std::cos(x); });
}

Var pow_vv(const Var& base, const Var& expo) {
  check_same_shape(base, expo, "pow");
  Tensor out(base.shape());
  const Tensor& tb = base.val();
  const Tensor& te = expo.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(tb[i], te[i]);
  return make_node(std::move(out), "pow", {base, expo}, [base, expo](Node& n) {
    const Tensor& g = n.grad;
    const Tensor& tb = base.val();
    const Tensor& te = expo.val();
    Tensor* db = base.requires_grad() ? &base.node()->grad_ref() : nullptr;
    Tensor* de = expo.requires_grad() ? &expo.node()->grad_ref() : nullptr;
    for (int64_t i = 0; i < g.size(); ++i) {
      const double p = std::pow(tb[i], te[i]);
      if (db) (*db)[i] += g[i] * te[i] * p / tb[i];
      if (de) (*de)[i] += g[i] * p * std::log(tb[i]);
    }
  });
}

Var clamp01(const Var& a) {
  return unary_ew(a, "clamp01",
                  [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
                  [](double x) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; });
}

Var max_scalar(const Var& a, double m) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] > m ? ta[i] : m;
  return make_node(std::move(out), "max_scalar", {a}, [a, m](Node& n) {
    Tensor& da = a.node()->grad_ref();
    const Tensor& ta = a.val();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (ta[i] >= m) da[i] += n.grad[i];
  });
}

Var min_scalar(const Var& a, double m) {
  Tensor out(a.shape());
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] < m ? ta[i] : m;
  return make_node(std::move(out), "min_scalar", {a}, [a, m](Node& n) {
    Tensor& da = a.node()->grad_ref();
    const Tensor& ta = a.val();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (ta[i] <= m) da[i] += n.grad[i];
  });
}

// ---------- scalar broadcast ----------

static void check_scalar(const Var& s, const char* what) {
  if (s.size() != 1) throw std::invalid_argument(std::string(what) + ": expected scalar var");
}

Var mul_bc(const Var& a, const Var& s) {
  check_scalar(s, "mul_bc");
  Tensor out(a.shape());
  const double sv = s.val()[0];
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] * sv;
  return make_node(std::move(out), "mul_bc", {a, s}, [a, s](Node& n) {
    const Tensor& g = n.grad;
    const double sv = s.val()[0];
    const Tensor& ta = a.val();
    if (a.requires_grad()) {
      Tensor& da = a.node()->grad_ref();
      for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * sv;
    }
    if (s.requires_grad()) {
      double acc = 0;
      for (int64_t i = 0; i < g.size(); ++i) acc += g[i] * ta[i];
      s.node()->accumulate_at(0, acc);
    }
  });
}

Var add_bc(const Var& a, const Var& s) {
  check_scalar(s, "add_bc");
  Tensor out(a.shape());
  const double sv = s.val()[0];
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] + sv;
  return make_node(std::move(out), "add_bc", {a, s}, [a, s](Node& n) {
    const Tensor& g = n.grad;
    if (a.requires_grad()) a.node()->accumulate(g);
    if (s.requires_grad()) {
      double acc = 0;
      for (int64_t i = 0; i < g.size(); ++i) acc += g[i];
      s.node()->accumulate_at(0, acc);
    }
  });
}

Var div_bc(const Var& a, const Var& s) {
  check_scalar(s, "div_bc");
  Tensor out(a.shape());
  const double sv = s.val()[0];
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = ta[i] / sv;
  return make_node(std::move(out), "div_bc", {a, s}, [a, s](Node& n) {
    const Tensor& g = n.grad;
    const double sv = s.val()[0];
    const Tensor& ta = a.val();
    if (a.requires_grad()) {
      Tensor& da = a.node()->grad_ref();
      for (int64_t i = 0; i < g.size(); ++i) da[i] += g[i] / sv;
    }
    if (s.requires_grad()) {
      double acc = 0;
      for (int64_t i = 0; i < g.size(); ++i) acc += g[i] * ta[i];
      s.node()->accumulate_at(0, -acc / (sv * sv));
    }
  });
}

// ---------- channel broadcast ----------

static void check_hwc_c(const Var& x, const Var& c, const char* what) {
  if (x.val().rank() != 3 || c.val().rank() != 1 || c.val().dim(0) != x.val().dim(2))
    throw std::invalid_argument(std::string(what) + ": expected HWC and {C}");
}

Var scale_channels(const Var& x, const Var& s) {
  check_hwc_c(x, s, "scale_channels");
  const int C = x.val().dim(2);
  Tensor out(x.shape());
  const Tensor& tx = x.val();
  const Tensor& ts = s.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = tx[i] * ts[i % C];
  return make_node(std::move(out), "scale_channels", {x, s}, [x, s, C](Node& n) {
    const Tensor& g = n.grad;
    const Tensor& tx = x.val();
    const Tensor& ts = s.val();
    if (x.requires_grad()) {
      Tensor& dx = x.node()->grad_ref();
      for (int64_t i = 0; i < g.size(); ++i) dx[i] += g[i] * ts[i % C];
    }
    if (s.requires_grad()) {
      Tensor& ds = s.node()->grad_ref();
      for (int64_t i = 0; i < g.size(); ++i) ds[i % C] += g[i] * tx[i];
    }
  });
}

Var shift_channels(const Var& x, const Var& b) {
  check_hwc_c(x, b, "shift_channels");
  const int C = x.val().dim(2);
  Tensor out(x.shape());
  const Tensor& tx = x.val();
  const Tensor& tb = b.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = tx[i] + tb[i % C];
  return make_node(std::move(out), "shift_channels", {x, b}, [x, b, C](Node& n) {
    const Tensor& g = n.grad;
    if (x.requires_grad()) x.node()->accumulate(g);
    if (b.requires_grad()) {
      Tensor& db = b.node()->grad_ref();
      for (int64_t i = 0; i < g.size(); ++i) db[i % C] += g[i];
    }
  });
}

// ---------- reductions / reshapes ----------

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a.val().sum());
  return make_node(std::move(out), "sum", {a}, [a](Node& n) {
    const double g = n.grad[0];
    Tensor& da = a.node()->grad_ref();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(a.val().sum() * inv);
  return make_node(std::move(out), "mean", {a}, [a, inv](Node& n) {
    const double g = n.grad[0] * inv;
    Tensor& da = a.node()->grad_ref();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size()) throw std::invalid_argument("reshape size mismatch");
  Tensor out = a.val();
  out = Tensor::from(std::move(shape), std::vector<double>(out.data(), out.data() + out.size()));
  return make_node(std::move(out), "reshape", {a}, [a](Node& n) {
    Tensor& da = a.node()->grad_ref();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += n.grad[i];
  });
}

Var flatten(const Var& a) { return reshape(a, {static_cast<int>(a.size())}); }

Var dot_const(const Var& a, const Tensor& u) {
  if (a.size() != u.size()) throw std::invalid_argument("dot_const size mismatch");
  double acc = 0;
  const Tensor& ta = a.val();
  for (int64_t i = 0; i < ta.size(); ++i) acc += ta[i] * u[i];
  Tensor uc = u;
  return make_node(Tensor::scalar(acc), "dot_const", {a}, [a, uc](Node& n) {
    const double g = n.grad[0];
    Tensor& da = a.node()->grad_ref();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += g * uc[i];
  });
}

Var index_scalar(const Var& a, int64_t i) {
  if (i < 0 || i >= a.size()) throw std::out_of_range("index_scalar");
  return make_node(Tensor::scalar(a.val()[i]), "index", {a},
                   [a, i](Node& n) { a.node()->accumulate_at(i, n.grad[0]); });
}

Var stack_scalars(const std::vector<Var>& xs) {
  Tensor out({static_cast<int>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw std::invalid_argument("stack_scalars expects scalars");
    out[static_cast<int64_t>(i)] = xs[i].val()[0];
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), "stack", parents, [parents](Node& n) {
    for (size_t i = 0; i < parents.size(); ++i)
      if (parents[i].requires_grad())
        parents[i].node()->accumulate_at(0, n.grad[static_cast<int64_t>(i)]);
  });
}

Var mean_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_scalars of empty list");
  return mean_all(stack_scalars(xs));
}

Var l2_normalize(const Var& a, double eps) {
  Var nrm = sqrt_v(add_scalar(sum_all(square(a)), eps));
  return div_bc(a, nrm);
}

// ---------- structure ----------

Var concat_c(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat of nothing");
  const int H = xs[0].val().dim(0), W = xs[0].val().dim(1);
  int C = 0;
  for (const auto& x : xs) {
    if (x.val().rank() != 3 || x.val().dim(0) != H || x.val().dim(1) != W)
      throw std::invalid_argument("concat_c spatial mismatch");
    C += x.val().dim(2);
  }
  Tensor out({H, W, C});
  int off = 0;
  for (const auto& x : xs) {
    const int c = x.val().dim(2);
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int ci = 0; ci < c; ++ci) out.at3(y, xx, off + ci) = x.val().at3(y, xx, ci);
    off += c;
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), "concat_c", parents, [parents, H, W](Node& n) {
    int off = 0;
    for (const auto& x : parents) {
      const int c = x.val().dim(2);
      if (x.requires_grad()) {
        Tensor& dx = x.node()->grad_ref();
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            for (int ci = 0; ci < c; ++ci) dx.at3(y, xx, ci) += n.grad.at3(y, xx, off + ci);
      }
      off += c;
    }
  });
}

Var slice_c(const Var& x, int c0, int c1) {
  const Tensor& tx = x.val();
  if (tx.rank() != 3 || c0 < 0 || c1 > tx.dim(2) || c0 >= c1)
    throw std::invalid_argument("slice_c bounds");
  const int H = tx.dim(0), W = tx.dim(1), C = c1 - c0;
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) out.at3(y, xx, c) = tx.at3(y, xx, c0 + c);
  return make_node(std::move(out), "slice_c", {x}, [x, c0, H, W, C](Node& n) {
    Tensor& dx = x.node()->grad_ref();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) dx.at3(y, xx, c0 + c) += n.grad.at3(y, xx, c);
  });
}

Var upsample_nearest2(const Var& x) {
  const Tensor& tx = x.val();
  if (tx.rank() != 3) throw std::invalid_argument("upsample expects HWC");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  Tensor out({H * 2, W * 2, C});
  for (int y = 0; y < 2 * H; ++y)
    for (int xx = 0; xx < 2 * W; ++xx)
      for (int c = 0; c < C; ++c) out.at3(y, xx, c) = tx.at3(y / 2, xx / 2, c);
  return make_node(std::move(out), "upsample2", {x}, [x, H, W, C](Node& n) {
    Tensor& dx = x.node()->grad_ref();
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx)
        for (int c = 0; c < C; ++c) dx.at3(y / 2, xx / 2, c) += n.grad.at3(y, xx, c);
  });
}

// ---------- conv2d ----------

Var conv2d(const Var& x, const Var& w, int groups, int stride, Pad pad) {
  const Tensor& tx = x.val();
  const Tensor& tw = w.val();
  if (tx.rank() != 3 || tw.rank() != 4) throw std::invalid_argument("conv2d rank");
  const int H = tx.dim(0), W = tx.dim(1), Cin = tx.dim(2);
  const int kh = tw.dim(0), kw = tw.dim(1), cin_pg = tw.dim(2), Cout = tw.dim(3);
  // reflect-same padding needs a center pixel; valid mode takes any size
  if (pad == Pad::kSameReflect && (kh % 2 == 0 || kw % 2 == 0))
    throw std::invalid_argument("conv2d kernel must be odd for same padding");
  if (groups < 1 || Cin % groups || Cout % groups)
    throw std::invalid_argument("conv2d channel/group mismatch");
  if (cin_pg != Cin / groups) throw std::invalid_argument("conv2d weight channel mismatch");
  const int cout_pg = Cout / groups;
  const int ph = pad == Pad::kSameReflect ? kh / 2 : 0;
  const int pw = pad == Pad::kSameReflect ? kw / 2 : 0;
  const int Ho = (H + 2 * ph - kh) / stride + 1;
  const int Wo = (W + 2 * pw - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d output would be empty");

  mac_add(static_cast<int64_t>(Ho) * Wo * kh * kw * cin_pg * Cout);

  Tensor out({Ho, Wo, Cout});
  const double* xp = tx.data();
  const double* wp = tw.data();
  double* op = out.data();
  std::vector<double> acc(static_cast<size_t>(Cout));
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < kh; ++ky) {
        const int yy = reflect_index(oy * stride - ph + ky, H);
        for (int kx = 0; kx < kw; ++kx) {
          const int xx = reflect_index(ox * stride - pw + kx, W);
          const double* xrow = xp + (static_cast<size_t>(yy) * W + xx) * Cin;
          const double* wrow = wp + (static_cast<size_t>(ky) * kw + kx) * cin_pg * Cout;
          for (int g = 0; g < groups; ++g) {
            for (int ci = 0; ci < cin_pg; ++ci) {
              const double xv = xrow[g * cin_pg + ci];
              const double* wr = wrow + static_cast<size_t>(ci) * Cout + g * cout_pg;
              double* ar = acc.data() + g * cout_pg;
              for (int co = 0; co < cout_pg; ++co) ar[co] += xv * wr[co];
            }
          }
        }
      }
      std::memcpy(op + (static_cast<size_t>(oy) * Wo + ox) * Cout, acc.data(),
                  sizeof(double) * static_cast<size_t>(Cout));
    }
  }

  return make_node(
      std::move(out), "conv2d", {x, w},
      [x, w, groups, stride, pad, H, W, Cin, kh, kw, cin_pg, Cout, cout_pg, ph, pw, Ho,
       Wo](Node& n) {
        const Tensor& g = n.grad;
        const Tensor& tx = x.val();
        const Tensor& tw = w.val();
        Tensor* dx = x.requires_grad() ? &x.node()->grad_ref() : nullptr;
        Tensor* dw = w.requires_grad() ? &w.node()->grad_ref() : nullptr;
        const double* gp = g.data();
        for (int oy = 0; oy < Ho; ++oy) {
          for (int ox = 0; ox < Wo; ++ox) {
            const double* grow = gp + (static_cast<size_t>(oy) * Wo + ox) * Cout;
            for (int ky = 0; ky < kh; ++ky) {
              const int yy = reflect_index(oy * stride - ph + ky, H);
              for (int kx = 0; kx < kw; ++kx) {
                const int xx = reflect_index(ox * stride - pw + kx, W);
                const size_t xoff = (static_cast<size_t>(yy) * W + xx) * Cin;
                const size_t woff = (static_cast<size_t>(ky) * kw + kx) * cin_pg * Cout;
                for (int gi = 0; gi < groups; ++gi) {
                  for (int ci = 0; ci < cin_pg; ++ci) {
                    const double xv = tx[static_cast<int64_t>(xoff + gi * cin_pg + ci)];
                    const size_t wro = woff + static_cast<size_t>(ci) * Cout + gi * cout_pg;
                    const double* wr = tw.data() + wro;
                    const double* gr = grow + gi * cout_pg;
                    if (dx) {
                      double a = 0;
                      for (int co = 0; co < cout_pg; ++co) a += gr[co] * wr[co];
                      (*dx)[static_cast<int64_t>(xoff + gi * cin_pg + ci)] += a;
                    }
                    if (dw) {
                      double* dwr = dw->data() + wro;
                      for (int co = 0; co < cout_pg; ++co) dwr[co] += gr[co] * xv;
                    }
                  }
                }
              }
            }
          }
        }
      });
}

// ---------- group norm ----------

Var group_norm_raw(const Var& x, int groups, double eps) {
  const Tensor& tx = x.val();
  if (tx.rank() != 3) throw std::invalid_argument("group_norm expects HWC");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  if (C % groups) throw std::invalid_argument("group_norm channels % groups != 0");
  const int cpg = C / groups;
  const int64_t n_per_group = static_cast<int64_t>(H) * W * cpg;

  std::vector<double> mean(static_cast<size_t>(groups), 0.0);
  std::vector<double> inv_std(static_cast<size_t>(groups), 0.0);
  for (int g = 0; g < groups; ++g) {
    double s = 0, ss = 0;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
          const double v = tx.at3(y, xx, c);
          s += v;
          ss += v * v;
        }
    const double mu = s / static_cast<double>(n_per_group);
    const double var = ss / static_cast<double>(n_per_group) - mu * mu;
    mean[static_cast<size_t>(g)] = mu;
    inv_std[static_cast<size_t>(g)] = 1.0 / std::sqrt(var + eps);
  }

  Tensor out(tx.shape());
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        const int g = c / cpg;
        out.at3(y, xx, c) =
            (tx.at3(y, xx, c) - mean[static_cast<size_t>(g)]) * inv_std[static_cast<size_t>(g)];
      }

  return make_node(std::move(out), "group_norm", {x},
                   [x, groups, cpg, H, W, C, mean, inv_std, n_per_group](Node& n) {
                     // dx = (1/sigma) * (g - mean(g) - xhat * mean(g*xhat)) per group
                     const Tensor& g = n.grad;
                     const Tensor& tx = x.val();
                     Tensor& dx = x.node()->grad_ref();
                     for (int gi = 0; gi < groups; ++gi) {
                       const double mu = mean[static_cast<size_t>(gi)];
                       const double is = inv_std[static_cast<size_t>(gi)];
                       double gsum = 0, gxsum = 0;
                       for (int y = 0; y < H; ++y)
                         for (int xx = 0; xx < W; ++xx)
                           for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                             const double xh = (tx.at3(y, xx, c) - mu) * is;
                             gsum += g.at3(y, xx, c);
                             gxsum += g.at3(y, xx, c) * xh;
                           }
                       const double inv_n = 1.0 / static_cast<double>(n_per_group);
                       for (int y = 0; y < H; ++y)
                         for (int xx = 0; xx < W; ++xx)
                           for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                             const double xh = (tx.at3(y, xx, c) - mu) * is;
                             dx.at3(y, xx, c) +=
                                 is * (g.at3(y, xx, c) - gsum * inv_n - xh * gxsum * inv_n);
                           }
                     }
                   });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  return shift_channels(scale_channels(group_norm_raw(x, groups, eps), gamma), beta);
}

// ---------- softmax / pooling / linear ----------

Var softmax_vec(const Var& logits) {
  const Tensor& tl = logits.val();
  if (tl.rank() != 1) throw std::invalid_argument("softmax_vec expects rank-1");
  const int64_t n = tl.size();
  double mx = tl[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, tl[i]);
  Tensor out(tl.shape());
  double z = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(tl[i] - mx);
    z += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= z;
  auto node = make_node(std::move(out), "softmax", {logits}, nullptr);
  Var self = node;
  node.node()->backward_fn = [logits, self](Node& n) {
    const Tensor& y = self.val();
    const Tensor& g = n.grad;
    double dot = 0;
    for (int64_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    Tensor& dl = logits.node()->grad_ref();
    for (int64_t i = 0; i < y.size(); ++i) dl[i] += (g[i] - dot) * y[i];
  };
  return node;
}

Var adaptive_pool(const Var& x, int out_h, int out_w) {
  const Tensor& tx = x.val();
  if (tx.rank() != 3) throw std::invalid_argument("adaptive_pool expects HWC");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  if (out_h > H || out_w > W || out_h < 1 || out_w < 1)
    throw std::invalid_argument("adaptive_pool output larger than input");
  auto bin = [](int i, int n, int out) {
    const int s = (i * n) / out;
    const int e = ((i + 1) * n + out - 1) / out;
    return std::pair<int, int>{s, e};
  };
  Tensor out({out_h, out_w, C});
  for (int oy = 0; oy < out_h; ++oy) {
    const auto [ys, ye] = bin(oy, H, out_h);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto [xs, xe] = bin(ox, W, out_w);
      const double inv = 1.0 / ((ye - ys) * (xe - xs));
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int y = ys; y < ye; ++y)
          for (int xx = xs; xx < xe; ++xx) s += tx.at3(y, xx, c);
        out.at3(oy, ox, c) = s * inv;
      }
    }
  }
  return make_node(std::move(out), "adaptive_pool", {x},
                   [x, out_h, out_w, H, W, C, bin](Node& n) {
                     Tensor& dx = x.node()->grad_ref();
                     for (int oy = 0; oy < out_h; ++oy) {
                       const auto [ys, ye] = bin(oy, H, out_h);
                       for (int ox = 0; ox < out_w; ++ox) {
                         const auto [xs, xe] = bin(ox, W, out_w);
                         const double inv = 1.0 / ((ye - ys) * (xe - xs));
                         for (int c = 0; c < C; ++c) {
                           const double g = n.grad.at3(oy, ox, c) * inv;
                           for (int y = ys; y < ye; ++y)
                             for (int xx = xs; xx < xe; ++xx) dx.at3(y, xx, c) += g;
                         }
                       }
                     }
                   });
}

Var global_pool_vec(const Var& x) {
  return flatten(adaptive_pool(x, 1, 1));
}

Var linear(const Var& x, const Var& w) {
  const Tensor& tx = x.val();
  const Tensor& tw = w.val();
  if (tx.rank() != 1 || tw.rank() != 2 || tx.dim(0) != tw.dim(0))
    throw std::invalid_argument("linear shape mismatch");
  const int in = tw.dim(0), out_n = tw.dim(1);
  mac_add(static_cast<int64_t>(in) * out_n);
  Tensor out({out_n});
  for (int o = 0; o < out_n; ++o) {
    double acc = 0;
    for (int i = 0; i < in; ++i) acc += tx[i] * tw.at2(i, o);
    out[o] = acc;
  }
  return make_node(std::move(out), "linear", {x, w}, [x, w, in, out_n](Node& n) {
    const Tensor& g = n.grad;
    const Tensor& tx = x.val();
    const Tensor& tw = w.val();
    if (x.requires_grad()) {
      Tensor& dx = x.node()->grad_ref();
      for (int i = 0; i < in; ++i) {
        double a = 0;
        for (int o = 0; o < out_n; ++o) a += g[o] * tw.at2(i, o);
        dx[i] += a;
      }
    }
    if (w.requires_grad()) {
      Tensor& dw = w.node()->grad_ref();
      for (int i = 0; i < in; ++i)
        for (int o = 0; o < out_n; ++o) dw.at2(i, o) += tx[i] * g[o];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = linear(x, w);
  if (y.val().rank() != 1 || !y.val().same_shape(b.val()))
    throw std::invalid_argument("linear bias shape mismatch");
  return add(y, b);
}

// ---------- DFT ----------

namespace {

struct DftTables {
  int H, W;
  std::vector<double> cw, sw, ch, sh;  // per-axis cos/sin basis
  double norm;

  explicit DftTables(int h, int w) : H(h), W(w) {
    norm = 1.0 / std::sqrt(static_cast<double>(H) * W);
    cw.resize(static_cast<size_t>(W) * W);
    sw.resize(static_cast<size_t>(W) * W);
    for (int v = 0; v < W; ++v)
      for (int xx = 0; xx < W; ++xx) {
        const double a = -2.0 * M_PI * v * xx / W;
        cw[static_cast<size_t>(v) * W + xx] = std::cos(a);
        sw[static_cast<size_t>(v) * W + xx] = std::sin(a);
      }
    ch.resize(static_cast<size_t>(H) * H);
    sh.resize(static_cast<size_t>(H) * H);
    for (int u = 0; u < H; ++u)
      for (int y = 0; y < H; ++y) {
        const double a = -2.0 * M_PI * u * y / H;
        ch[static_cast<size_t>(u) * H + y] = std::cos(a);
        sh[static_cast<size_t>(u) * H + y] = std::sin(a);
      }
  }

  // Separable 2-D transform of a real input; adjoint flips the sine sign
  // (the basis matrices are symmetric, so transpose == same tables).
  void apply(const Tensor& in, Tensor& out_re, Tensor& out_im, bool adjoint) const {
    const int C = in.dim(2);
    const double sgn = adjoint ? -1.0 : 1.0;
    Tensor rre({H, W, C}), rim({H, W, C});
    for (int y = 0; y < H; ++y)
      for (int v = 0; v < W; ++v) {
        const double* crow = cw.data() + static_cast<size_t>(v) * W;
        const double* srow = sw.data() + static_cast<size_t>(v) * W;
        for (int c = 0; c < C; ++c) {
          double re = 0, im = 0;
          for (int xx = 0; xx < W; ++xx) {
            const double val = in.at3(y, xx, c);
            re += val * crow[xx];
            im += val * sgn * srow[xx];
          }
          rre.at3(y, v, c) = re;
          rim.at3(y, v, c) = im;
        }
      }
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v) {
        const double* crow = ch.data() + static_cast<size_t>(u) * H;
        const double* srow = sh.data() + static_cast<size_t>(u) * H;
        for (int c = 0; c < C; ++c) {
          double re = 0, im = 0;
          for (int y = 0; y < H; ++y) {
            const double cr = crow[y], sr = sgn * srow[y];
            re += rre.at3(y, v, c) * cr - rim.at3(y, v, c) * sr;
            im += rre.at3(y, v, c) * sr + rim.at3(y, v, c) * cr;
          }
          out_re.at3(u, v, c) = re * norm;
          out_im.at3(u, v, c) = im * norm;
        }
      }
  }
};

}  // namespace

Var dft2_reim(const Var& x) {
  const Tensor& tx = x.val();
  if (tx.rank() != 3) throw std::invalid_argument("dft2 expects HWC");
  const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
  auto tables = std::make_shared<DftTables>(H, W);

  Tensor re({H, W, C}), im({H, W, C});
  tables->apply(tx, re, im, false);
  Tensor out({H, W, 2 * C});
  for (int u = 0; u < H; ++u)
    for (int v = 0; v < W; ++v)
      for (int c = 0; c < C; ++c) {
        out.at3(u, v, c) = re.at3(u, v, c);
        out.at3(u, v, C + c) = im.at3(u, v, c);
      }

  return make_node(std::move(out), "dft2", {x}, [x, tables, H, W, C](Node& n) {
    // dL/dx_p = sum_w [ g_re cos(a) + g_im sin(a) ]; realized through the
    // adjoint transform of each gradient plane.
    Tensor gre({H, W, C}), gim({H, W, C});
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v)
        for (int c = 0; c < C; ++c) {
          gre.at3(u, v, c) = n.grad.at3(u, v, c);
          gim.at3(u, v, c) = n.grad.at3(u, v, C + c);
        }
    Tensor are({H, W, C}), aim({H, W, C});
    tables->apply(gre, are, aim, true);
    Tensor bre({H, W, C}), bim({H, W, C});
    tables->apply(gim, bre, bim, true);
    Tensor& dx = x.node()->grad_ref();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c)
          dx.at3(y, xx, c) += are.at3(y, xx, c) - bim.at3(y, xx, c);
  });
}

// ---------- helpers ----------

Var image_var(const ImageTensor& img) { return make_const(img.tensor()); }

ImageTensor to_image_clamped(const Var& v) {
  return ImageTensor::from_tensor_clamped(v.val());
}

}  // namespace ops
}  // namespace phymoe
