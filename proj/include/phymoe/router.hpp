#pragma once

#include <functional>

#include "phymoe/experts.hpp"
#include "phymoe/residual.hpp"

namespace phymoe {

struct RoutingFeatures {
  Var h_visual, h_freq, h_deg;  // length-K each
  Var logits;                   // h_visual + h_freq + alpha * h_deg
  double alpha = 1.0;
};

struct RoutingDecision {
  Var logits;                    // fused pre-softmax logits
  Var full_weights;              // softmax(logits / tau), length K
  std::vector<int> top_indices;  // k largest, ties to the lowest index
  std::vector<Var> top_weights;  // renormalized over the selection
  double temperature = 1.0;
  int k = 1;

  std::string to_json_record(int64_t sample_id, const Tensor& pi) const;
};

struct RouterConfig {
  int n_experts = 4;
  int visual_width = 8;
  int freq_channels = 32;  // channels of the FADD concatenation
  double alpha = 1.0;
  bool train_alpha = false;
};

/// Probabilistic expert allocator fusing visual, frequency and
/// degradation-prior heads.
class Router {
 public:
  Router() = default;
  Router(ModuleCtx& ctx, const std::string& name, const RouterConfig& cfg);

  RoutingFeatures features(const Var& image, const FrequencyFeature& freq,
                           const DegradationPosterior& pi) const;
  RoutingFeatures features(const Var& image, const FrequencyFeature& freq,
                           const Var& pi) const;

 private:
  RouterConfig cfg_;
  Conv vis1_, vis2_;
  Var freq_w_, freq_b_;
  Var w_deg_;  // 4 x K embedding table, identity-scaled init
  Var alpha_;
};

// Temperature-controlled Top-K selection over fused logits.
RoutingDecision route(const Var& logits, double tau, int k);

// Weighted sum of the selected experts only; get_expert is invoked once per
// selected index, never for the rest.
Var moe_forward(const RoutingDecision& decision,
                const std::function<Var(int)>& get_expert);

struct DynamicKPolicy {
  double entropy_threshold = 0.6 * std::log(4.0);
  int k_low = 1;   // entropy at or below the threshold
  int k_high = 2;
};

int dynamic_k(const DegradationPosterior& pi, const DynamicKPolicy& policy);

}  // namespace phymoe
