#pragma once

#include <memory>

#include "phymoe/losses.hpp"
#include "phymoe/router.hpp"

namespace phymoe {

struct ModelConfig {
  int embed_dim = 32;                      // d
  std::vector<int> encoder_groups{4, 6, 6, 8};
  std::vector<int> decoder_blocks{2, 4, 4};
  std::vector<int> heads{1, 2, 4, 8};
  int adapter_rank = 8;
  int n_experts = 4;
  int k_train = 2;
  int k_infer = 1;
  double tau = 1.0;
  double tau_c = 0.1;
  double alpha = 1.0;

  // realization extents
  int stage1_blocks = 2;
  int expert_width = 16;
  int fadd_width = 8;
  int router_visual_width = 8;
  int gn_groups = 4;
  int gdfn_expand = 2;
  int w2_projections = 64;
  int posterior_pool = 4;
  uint64_t init_seed = 0x5eed;

  LossWeights losses;
  PhysicsBandSpec bands;

  int n_levels() const { return static_cast<int>(decoder_blocks.size()); }
  std::vector<int> decoder_dims() const;
  void validate() const;

  // Small CPU-scale preset exercising every mechanism.
  static ModelConfig desk();
};

struct ForwardOut {
  Var x0;        // stage-1 coarse restoration
  Var r0;        // y - x0
  Var xhat;      // final output in [0,1]
  Var r1;        // full-resolution pyramid feature
  DegradationPosterior pi;
  Var pi_logits;
  Var z;         // contrastive embedding (L2-normalized pooled R1)
  RoutingDecision decision;
  FrequencyFeature freq;
  ResidualEmbedding emb;
};

/// Two-stage cascade: a plain U-shaped coarse restorer, then the
/// residual-guided expert network with sparse routing.
class RestorationModel {
 public:
  explicit RestorationModel(const ModelConfig& cfg);
  ~RestorationModel();

  Var stage1_forward(const Var& y) const;
  // Full cascade. k <= 0 selects dynamic-k from the posterior entropy.
  ForwardOut forward(const Var& y, int k, double tau) const;
  ForwardOut forward(const Var& y) const;  // inference defaults

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ExpertBank& experts() const { return *experts_; }

 private:
  struct Stage1;
  struct Stage2;

  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<Rng> init_rng_;
  std::unique_ptr<ModuleCtx> ctx_;
  std::unique_ptr<Stage1> s1_;
  std::unique_ptr<Rmp> rmp_;
  std::unique_ptr<Fadd> fadd_;
  std::unique_ptr<Router> router_;
  std::unique_ptr<ExpertBank> experts_;
  std::unique_ptr<Stage2> s2_;
};

struct CostReport {
  int64_t param_count = 0;
  int64_t macs_per_forward = 0;  // at the probe resolution
  int resolution = 0;
  std::string to_json() const;
};

// Exact parameter count plus a measured multiply-accumulate estimate for
// one full forward pass at the given square resolution.
CostReport count_params(const ModelConfig& cfg, int resolution = 64);

}  // namespace phymoe
