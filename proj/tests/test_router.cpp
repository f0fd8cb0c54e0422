#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "json.hpp"
#include "phymoe/router.hpp"

using namespace phymoe;
using namespace phymoe::ops;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

struct Fixture {
  ParamStore store;
  Rng rng{11};
  ModuleCtx ctx{store, rng};
};

FrequencyFeature fake_freq(uint64_t seed) {
  FrequencyFeature f;
  f.branch_channels = 2;
  f.f_low = make_const(random_tensor({8, 8, 2}, seed, 0.3));
  f.f_mid = make_const(random_tensor({8, 8, 2}, seed + 1, 0.3));
  f.f_high = make_const(random_tensor({8, 8, 2}, seed + 2, 0.3));
  f.f_edge = make_const(random_tensor({8, 8, 2}, seed + 3, 0.3));
  f.f_concat = concat_c({f.f_low, f.f_mid, f.f_high, f.f_edge});
  return f;
}

RouterConfig small_router(double alpha) {
  RouterConfig cfg;
  cfg.visual_width = 4;
  cfg.freq_channels = 8;
  cfg.alpha = alpha;
  return cfg;
}

}  // namespace

TEST_CASE("alpha = 0 makes the logits independent of the posterior") {
  Fixture fx;
  Router router(fx.ctx, "r", small_router(0.0));
  Var img = make_const(random_tensor({8, 8, 3}, 21, 0.2));
  const auto freq = fake_freq(31);
  Var pi1 = make_const(Tensor::from({4}, {1.0, 0.0, 0.0, 0.0}));
  Var pi2 = make_const(Tensor::from({4}, {0.1, 0.2, 0.3, 0.4}));
  const auto f1 = router.features(img, freq, pi1);
  const auto f2 = router.features(img, freq, pi2);
  for (int i = 0; i < 4; ++i) CHECK(f1.logits.val()[i] == f2.logits.val()[i]);
}

TEST_CASE("one-hot posterior selects a row of the degradation table") {
  Fixture fx;
  Router router(fx.ctx, "r", small_router(1.0));
  Var w_deg = fx.store.get("r.w_deg");
  w_deg.val_mut() = random_tensor({4, 4}, 41, 0.7);
  Var img = make_const(random_tensor({8, 8, 3}, 22, 0.2));
  const auto freq = fake_freq(32);
  for (int j = 0; j < 4; ++j) {
    Tensor onehot({4});
    onehot[j] = 1.0;
    const auto f = router.features(img, freq, make_const(onehot));
    for (int e = 0; e < 4; ++e)
      CHECK(f.h_deg.val()[e] == doctest::Approx(w_deg.val().at2(j, e)).epsilon(1e-12));
  }
}

TEST_CASE("fused logits recompose from the three heads") {
  Fixture fx;
  const double alpha = 0.63;
  Router router(fx.ctx, "r", small_router(alpha));
  Var img = make_const(random_tensor({8, 8, 3}, 23, 0.2));
  const auto freq = fake_freq(33);
  Var pi = make_const(Tensor::from({4}, {0.4, 0.3, 0.2, 0.1}));
  const auto f = router.features(img, freq, pi);
  for (int e = 0; e < 4; ++e) {
    const double manual =
        f.h_visual.val()[e] + f.h_freq.val()[e] + alpha * f.h_deg.val()[e];
    CHECK(f.logits.val()[e] == doctest::Approx(manual).epsilon(1e-12));
  }
}

TEST_CASE("route closed forms") {
  Var logits = make_const(Tensor::from({4}, {2.0, 1.0, 0.0, 0.0}));

  // k = K keeps the full distribution
  const auto dk = route(logits, 1.0, 4);
  for (size_t i = 0; i < 4; ++i)
    CHECK(dk.top_weights[i].val()[0] ==
          doctest::Approx(dk.full_weights.val()[static_cast<int64_t>(i)]).epsilon(1e-12));

  // k = 1 concentrates all mass
  const auto d1 = route(logits, 1.0, 1);
  CHECK(d1.top_indices == std::vector<int>{0});
  CHECK(d1.top_weights[0].val()[0] == doctest::Approx(1.0).epsilon(1e-12));

  // direct softmax evaluation for [2,1,0,0], tau=1
  const double z = std::exp(2.0) + std::exp(1.0) + 2.0;
  const auto d2 = route(logits, 1.0, 2);
  CHECK(d2.full_weights.val()[0] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-9));
  CHECK(d2.full_weights.val()[1] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-9));
  CHECK(d2.top_indices == std::vector<int>{0, 1});
  // renormalized over the top 2
  const double w0 = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0));
  CHECK(d2.top_weights[0].val()[0] == doctest::Approx(w0).epsilon(1e-9));
  CHECK(d2.top_weights[0].val()[0] == doctest::Approx(0.7311).epsilon(1e-3));
  CHECK(d2.top_weights[1].val()[0] == doctest::Approx(0.2689).epsilon(1e-3));

  CHECK_THROWS(route(logits, 0.0, 1));
  CHECK_THROWS(route(logits, 1.0, 0));
  CHECK_THROWS(route(logits, 1.0, 5));
}

TEST_CASE("ties break toward the lower index") {
  Var logits = make_const(Tensor::from({4}, {1.0, 1.0, 1.0, 1.0}));
  const auto d = route(logits, 1.0, 2);
  CHECK(d.top_indices == std::vector<int>{0, 1});
}

TEST_CASE("temperature concentrates the maximum weight") {
  Var logits = make_const(Tensor::from({4}, {1.2, 0.3, -0.5, 0.9}));
  double prev = 0.0;
  for (double tau : {2.0, 1.0, 0.5, 0.1}) {
    const auto d = route(logits, tau, 1);
    const double top = d.full_weights.val()[0];
    CHECK(top >= prev);
    prev = top;
  }
}

TEST_CASE("top-k set invariant under shift and joint rescale") {
  Tensor base = Tensor::from({4}, {0.7, -0.2, 1.4, 0.1});
  const auto d0 = route(make_const(base), 1.0, 2);

  Tensor shifted = base;
  for (int i = 0; i < 4; ++i) shifted[i] += 3.3;
  CHECK(route(make_const(shifted), 1.0, 2).top_indices == d0.top_indices);

  Tensor scaled = base;
  for (int i = 0; i < 4; ++i) scaled[i] *= 2.5;
  CHECK(route(make_const(scaled), 2.5, 2).top_indices == d0.top_indices);
  // weights also match under the joint rescale
  const auto ds = route(make_const(scaled), 2.5, 2);
  for (int i = 0; i < 4; ++i)
    CHECK(ds.full_weights.val()[i] == doctest::Approx(d0.full_weights.val()[i]).epsilon(1e-12));
}

TEST_CASE("moe_forward: sparsity is observable and weights are convex") {
  Var logits = make_const(Tensor::from({4}, {3.0, 2.0, -1.0, -2.0}));

  // k=1 equals the single expert's output
  const auto d1 = route(logits, 1.0, 1);
  int calls = 0;
  Var out1 = moe_forward(d1, [&](int id) {
    ++calls;
    CHECK(id == 0);
    return make_const(Tensor::full({4, 4, 1}, 0.2));
  });
  CHECK(calls == 1);
  for (int64_t i = 0; i < out1.size(); ++i)
    CHECK(out1.val()[i] == doctest::Approx(0.2).epsilon(1e-12));

  // equal weights over constants 0.2 and 0.6 -> 0.4
  Var even = make_const(Tensor::from({4}, {1.0, 1.0, -5.0, -5.0}));
  const auto d2 = route(even, 1.0, 2);
  calls = 0;
  Var out2 = moe_forward(d2, [&](int id) {
    ++calls;
    return make_const(Tensor::full({4, 4, 1}, id == 0 ? 0.2 : 0.6));
  });
  CHECK(calls == 2);
  for (int64_t i = 0; i < out2.size(); ++i)
    CHECK(out2.val()[i] == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("dynamic_k follows the posterior entropy") {
  DynamicKPolicy policy;
  DegradationPosterior onehot{make_const(Tensor::from({4}, {1.0, 0.0, 0.0, 0.0}))};
  CHECK(dynamic_k(onehot, policy) == 1);
  DegradationPosterior uniform{make_const(Tensor::full({4}, 0.25))};
  CHECK(dynamic_k(uniform, policy) == 2);
  // boundary exactly met -> the lower k
  DynamicKPolicy tight;
  tight.entropy_threshold = std::log(4.0);
  CHECK(dynamic_k(uniform, tight) == 1);
}

TEST_CASE("trace records carry the documented fields") {
  Var logits = make_const(Tensor::from({4}, {0.5, 0.1, -0.3, 2.0}));
  const auto d = route(logits, 0.7, 2);
  Tensor pi = Tensor::from({4}, {0.7, 0.1, 0.1, 0.1});
  const auto j = nlohmann::json::parse(d.to_json_record(12, pi));
  CHECK(j.at("sample_id") == 12);
  CHECK(j.at("pi").size() == 4);
  CHECK(j.at("logits").size() == 4);
  CHECK(j.at("tau") == doctest::Approx(0.7));
  CHECK(j.at("k") == 2);
  CHECK(j.at("top_indices").size() == 2);
  CHECK(j.at("top_weights").size() == 2);
  double s = 0;
  for (double w : j.at("top_weights").get<std::vector<double>>()) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}
