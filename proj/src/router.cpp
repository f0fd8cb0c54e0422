#include "phymoe/router.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace phymoe {

using namespace ops;

Router::Router(ModuleCtx& ctx, const std::string& name, const RouterConfig& cfg) : cfg_(cfg) {
  vis1_ = Conv(ctx, name + ".vis1", 3, 3, cfg.visual_width);
  vis2_ = Conv(ctx, name + ".vis2", 3, cfg.visual_width, cfg.n_experts);
  Rng& rng = ctx.init_rng;
  freq_w_ = ctx.store.create(name + ".freq.w", [&] {
    return init_normal({cfg.freq_channels, cfg.n_experts}, 0.01, rng);
  });
  freq_b_ = ctx.store.create(name + ".freq.b", [&] { return init_zeros({cfg.n_experts}); });
  // Identity-scaled prior: class j prefers expert j until training says
  // otherwise (class order matches expert order by construction).
  w_deg_ = ctx.store.create(name + ".w_deg", [&] {
    Tensor w({kNumKinds, cfg.n_experts});
    for (int i = 0; i < std::min(kNumKinds, cfg.n_experts); ++i) w.at2(i, i) = 2.0;
    return w;
  });
  alpha_ = ctx.store.create(name + ".alpha", [&] { return Tensor::scalar(cfg.alpha); });
  if (!cfg.train_alpha) {
    // frozen knob: keep it out of the gradient path
    alpha_ = make_const(Tensor::scalar(cfg.alpha));
  }
}

RoutingFeatures Router::features(const Var& image, const FrequencyFeature& freq,
                                 const DegradationPosterior& pi) const {
  return features(image, freq, pi.pi);
}

RoutingFeatures Router::features(const Var& image, const FrequencyFeature& freq,
                                 const Var& pi) const {
  RoutingFeatures rf;
  rf.alpha = alpha_.val()[0];
  rf.h_visual = global_pool_vec(vis2_(gelu(vis1_(image))));
  rf.h_freq = linear(global_pool_vec(freq.f_concat), freq_w_, freq_b_);
  rf.h_deg = linear(pi, w_deg_);
  rf.logits = add(add(rf.h_visual, rf.h_freq), mul_bc(rf.h_deg, alpha_));
  return rf;
}

RoutingDecision route(const Var& logits, double tau, int k) {
  const int K = static_cast<int>(logits.size());
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (k < 1 || k > K) throw std::invalid_argument("k out of range");

  RoutingDecision d;
  d.logits = logits;
  d.temperature = tau;
  d.k = k;
  d.full_weights = softmax_vec(mul_scalar(logits, 1.0 / tau));

  // top-k, ties broken toward the lower index
  std::vector<int> idx(static_cast<size_t>(K));
  for (int i = 0; i < K; ++i) idx[static_cast<size_t>(i)] = i;
  const Tensor& w = d.full_weights.val();
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w[a] > w[b]; });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  d.top_indices = idx;

  std::vector<Var> selected;
  for (int i : idx) selected.push_back(index_scalar(d.full_weights, i));
  Var denom = selected[0];
  for (size_t i = 1; i < selected.size(); ++i) denom = add(denom, selected[i]);
  for (auto& s : selected) d.top_weights.push_back(div(s, denom));
  return d;
}

Var moe_forward(const RoutingDecision& decision, const std::function<Var(int)>& get_expert) {
  Var out;
  for (size_t i = 0; i < decision.top_indices.size(); ++i) {
    Var e = get_expert(decision.top_indices[i]);
    Var contrib = ops::mul_bc(e, decision.top_weights[i]);
    out = i == 0 ? contrib : ops::add(out, contrib);
  }
  return out;
}

int dynamic_k(const DegradationPosterior& pi, const DynamicKPolicy& policy) {
  return pi.entropy() <= policy.entropy_threshold ? policy.k_low : policy.k_high;
}

std::string RoutingDecision::to_json_record(int64_t sample_id, const Tensor& pi) const {
  nlohmann::json j;
  j["sample_id"] = sample_id;
  std::vector<double> pv(pi.data(), pi.data() + pi.size());
  j["pi"] = pv;
  std::vector<double> lg(logits.val().data(), logits.val().data() + logits.val().size());
  j["logits"] = lg;
  j["tau"] = temperature;
  j["k"] = k;
  j["top_indices"] = top_indices;
  std::vector<double> tw;
  for (const auto& w : top_weights) tw.push_back(w.val()[0]);
  j["top_weights"] = tw;
  return j.dump();
}

}  // namespace phymoe
