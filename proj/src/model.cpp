#include "phymoe/model.hpp"

#include <stdexcept>

#include "json.hpp"

namespace phymoe {

using namespace ops;

std::vector<int> ModelConfig::decoder_dims() const {
  std::vector<int> dims;
  for (int i = 0; i < n_levels(); ++i) dims.push_back(embed_dim << i);
  return dims;
}

void ModelConfig::validate() const {
  if (embed_dim <= 0 || n_experts != 4) throw std::invalid_argument("bad model config");
  if (decoder_blocks.empty() || encoder_groups.size() < decoder_blocks.size() + 1)
    throw std::invalid_argument("encoder_groups must cover decoder levels plus bottleneck");
  if (heads.size() < encoder_groups.size())
    throw std::invalid_argument("heads must cover every encoder level");
  for (size_t i = 0; i < encoder_groups.size(); ++i) {
    const int ch = embed_dim << i;
    if (ch % heads[i]) throw std::invalid_argument("channels not divisible by heads");
    if (ch % gn_groups) throw std::invalid_argument("channels not divisible by gn groups");
  }
  if (k_train < 1 || k_train > n_experts || k_infer < 1 || k_infer > n_experts)
    throw std::invalid_argument("k out of range");
  if (!(tau > 0) || !(tau_c > 0)) throw std::invalid_argument("temperatures must be positive");
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.encoder_groups = {1, 1, 1, 1};
  cfg.decoder_blocks = {1, 1, 1};
  cfg.heads = {1, 2, 4, 8};
  cfg.stage1_blocks = 1;
  cfg.expert_width = 8;
  cfg.fadd_width = 4;
  cfg.router_visual_width = 8;
  cfg.gn_groups = 4;
  cfg.gdfn_expand = 2;
  cfg.w2_projections = 32;
  return cfg;
}

// ---------------- stage 1 ----------------

struct RestorationModel::Stage1 {
  std::vector<int> ch;
  Conv stem;
  std::vector<std::vector<ResBlock>> down_blocks;
  std::vector<Conv> downs;
  std::vector<Conv> ups;
  std::vector<std::vector<ResBlock>> up_blocks;
  Conv head;

  Stage1(ModuleCtx& ctx, const std::string& name, const ModelConfig& cfg) {
    const int d = cfg.embed_dim;
    ch = {d, 2 * d, 4 * d};
    stem = Conv(ctx, name + ".stem", 3, 3, d);
    for (int i = 0; i < 3; ++i) {
      std::vector<ResBlock> blocks;
      for (int b = 0; b < cfg.stage1_blocks; ++b)
        blocks.emplace_back(ctx, name + ".d" + std::to_string(i) + ".b" + std::to_string(b),
                            ch[static_cast<size_t>(i)]);
      down_blocks.push_back(std::move(blocks));
      if (i < 2)
        downs.emplace_back(ctx, name + ".down" + std::to_string(i), 3,
                           ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i + 1)], 1, 2);
    }
    for (int i = 1; i >= 0; --i) {
      ups.emplace_back(ctx, name + ".up" + std::to_string(i), 3,
                       ch[static_cast<size_t>(i + 1)], ch[static_cast<size_t>(i)]);
      std::vector<ResBlock> blocks;
      for (int b = 0; b < cfg.stage1_blocks; ++b)
        blocks.emplace_back(ctx, name + ".u" + std::to_string(i) + ".b" + std::to_string(b),
                            ch[static_cast<size_t>(i)]);
      up_blocks.push_back(std::move(blocks));
    }
    head = Conv(ctx, name + ".head", 3, d, 3, 1, 1, true, 0.05);
  }

  Var operator()(const Var& y) const {
    Var x = stem(y);
    std::vector<Var> skips;
    for (int i = 0; i < 3; ++i) {
      for (const auto& b : down_blocks[static_cast<size_t>(i)]) x = b(x);
      if (i < 2) {
        skips.push_back(x);
        x = downs[static_cast<size_t>(i)](x);
      }
    }
    for (int j = 0; j < 2; ++j) {
      const int lev = 1 - j;
      x = ups[static_cast<size_t>(j)](upsample_nearest2(x));
      x = add(x, skips[static_cast<size_t>(lev)]);
      for (const auto& b : up_blocks[static_cast<size_t>(j)]) x = b(x);
    }
    return clamp01(add(y, head(x)));
  }
};

// ---------------- stage 2 refinement ----------------

struct RestorationModel::Stage2 {
  int n_levels;
  std::vector<int> dims;   // per level, plus bottleneck at dims[n_levels]
  Conv stem;
  std::vector<std::vector<Mdta>> enc_blocks;  // residual attention groups
  std::vector<Conv> downs;
  std::vector<Conv> ups;
  std::vector<FilmCond> films;
  std::vector<std::vector<std::pair<Mdta, Gdfn>>> dec_blocks;
  Conv head;

  Stage2(ModuleCtx& ctx, const std::string& name, const ModelConfig& cfg) {
    n_levels = cfg.n_levels();
    const int d = cfg.embed_dim;
    for (int i = 0; i <= n_levels; ++i) dims.push_back(d << i);
    stem = Conv(ctx, name + ".stem", 3, 6, dims[0]);
    for (int i = 0; i <= n_levels; ++i) {
      std::vector<Mdta> blocks;
      for (int b = 0; b < cfg.encoder_groups[static_cast<size_t>(i)]; ++b)
        blocks.emplace_back(ctx, name + ".enc" + std::to_string(i) + ".b" + std::to_string(b),
                            dims[static_cast<size_t>(i)], cfg.heads[static_cast<size_t>(i)],
                            cfg.gn_groups);
      enc_blocks.push_back(std::move(blocks));
      if (i < n_levels)
        downs.emplace_back(ctx, name + ".down" + std::to_string(i), 3,
                           dims[static_cast<size_t>(i)], dims[static_cast<size_t>(i + 1)], 1, 2);
    }
    const auto dec_dims = cfg.decoder_dims();
    for (int i = n_levels - 1; i >= 0; --i) {
      ups.emplace_back(ctx, name + ".up" + std::to_string(i), 3,
                       dims[static_cast<size_t>(i + 1)], dims[static_cast<size_t>(i)]);
      films.emplace_back(ctx, name + ".film" + std::to_string(i),
                         dec_dims[static_cast<size_t>(i)], dims[static_cast<size_t>(i)],
                         cfg.adapter_rank);
      std::vector<std::pair<Mdta, Gdfn>> blocks;
      for (int b = 0; b < cfg.decoder_blocks[static_cast<size_t>(i)]; ++b) {
        blocks.emplace_back(
            Mdta(ctx, name + ".dec" + std::to_string(i) + ".m" + std::to_string(b),
                 dims[static_cast<size_t>(i)], cfg.heads[static_cast<size_t>(i)],
                 cfg.gn_groups),
            Gdfn(ctx, name + ".dec" + std::to_string(i) + ".g" + std::to_string(b),
                 dims[static_cast<size_t>(i)], cfg.gdfn_expand));
      }
      dec_blocks.push_back(std::move(blocks));
    }
    head = Conv(ctx, name + ".head", 3, dims[0], 3, 1, 1, true, 0.0);
  }

  Var operator()(const Var& y, const Var& x_moe, const ResidualEmbedding& emb) const {
    Var x = stem(concat_c({y, x_moe}));
    std::vector<Var> skips;
    for (int i = 0; i <= n_levels; ++i) {
      for (const auto& b : enc_blocks[static_cast<size_t>(i)]) x = add(x, b(x));
      if (i < n_levels) {
        skips.push_back(x);
        x = downs[static_cast<size_t>(i)](x);
      }
    }
    for (int j = 0; j < n_levels; ++j) {
      const int lev = n_levels - 1 - j;
      x = ups[static_cast<size_t>(j)](upsample_nearest2(x));
      x = add(x, skips[static_cast<size_t>(lev)]);
      x = films[static_cast<size_t>(j)](x, emb.levels[static_cast<size_t>(lev)]);
      for (const auto& [m, g] : dec_blocks[static_cast<size_t>(j)]) {
        x = add(x, m(x));
        x = add(x, g(x));
      }
    }
    return clamp01(add(x_moe, head(x)));
  }
};

// ---------------- assembly ----------------

RestorationModel::RestorationModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  init_rng_ = std::make_unique<Rng>(cfg.init_seed);
  ctx_ = std::make_unique<ModuleCtx>(ModuleCtx{store_, *init_rng_});

  s1_ = std::make_unique<Stage1>(*ctx_, "stage1", cfg_);

  RmpConfig rmp_cfg;
  rmp_cfg.embed_dim = cfg_.embed_dim;
  rmp_cfg.gn_groups = cfg_.gn_groups;
  rmp_cfg.gdfn_expand = cfg_.gdfn_expand;
  rmp_cfg.decoder_dims = cfg_.decoder_dims();
  rmp_ = std::make_unique<Rmp>(*ctx_, "rmp", rmp_cfg);

  FaddConfig fadd_cfg;
  fadd_cfg.branch_channels = cfg_.fadd_width;
  fadd_cfg.embed_dim = cfg_.embed_dim;
  fadd_cfg.pool_hw = cfg_.posterior_pool;
  fadd_ = std::make_unique<Fadd>(*ctx_, "fadd", fadd_cfg);

  RouterConfig router_cfg;
  router_cfg.n_experts = cfg_.n_experts;
  router_cfg.visual_width = cfg_.router_visual_width;
  router_cfg.freq_channels = 4 * cfg_.fadd_width;
  router_cfg.alpha = cfg_.alpha;
  router_ = std::make_unique<Router>(*ctx_, "router", router_cfg);

  ExpertConfig expert_cfg;
  expert_cfg.width = cfg_.expert_width;
  expert_cfg.cond_channels = cfg_.decoder_dims()[0];
  expert_cfg.adapter_rank = cfg_.adapter_rank;
  experts_ = std::make_unique<ExpertBank>(*ctx_, "experts", expert_cfg);

  s2_ = std::make_unique<Stage2>(*ctx_, "stage2", cfg_);
}

RestorationModel::~RestorationModel() = default;

Var RestorationModel::stage1_forward(const Var& y) const { return (*s1_)(y); }

ForwardOut RestorationModel::forward(const Var& y, int k, double tau) const {
  ForwardOut out;
  out.x0 = stage1_forward(y);
  out.r0 = sub(y, out.x0);

  out.emb = rmp_->run(out.r0, &out.r1);
  out.freq = fadd_->decompose(out.r0);
  out.pi_logits = fadd_->posterior_logits(out.r1);
  out.pi = DegradationPosterior{softmax_vec(out.pi_logits)};
  out.z = l2_normalize(global_pool_vec(out.r1));

  if (k <= 0) k = dynamic_k(out.pi, DynamicKPolicy{});
  RoutingFeatures rf = router_->features(y, out.freq, out.pi);
  out.decision = route(rf.logits, tau, k);

  Var x_moe = moe_forward(out.decision, [&](int id) {
    return experts_->apply(id, y, out.emb.levels[0]);
  });
  out.xhat = (*s2_)(y, x_moe, out.emb);
  return out;
}

ForwardOut RestorationModel::forward(const Var& y) const {
  return forward(y, cfg_.k_infer, cfg_.tau);
}

std::string CostReport::to_json() const {
  nlohmann::json j;
  j["param_count"] = param_count;
  j["macs_per_forward"] = macs_per_forward;
  j["resolution"] = resolution;
  return j.dump(2);
}

CostReport count_params(const ModelConfig& cfg, int resolution) {
  RestorationModel model(cfg);
  CostReport report;
  report.param_count = model.params().total_size();
  report.resolution = resolution;
  MacScope scope;
  Var y = make_const(Tensor::full({resolution, resolution, 3}, 0.5));
  model.forward(y, cfg.n_experts, cfg.tau);  // all experts active: upper bound
  report.macs_per_forward = scope.macs();
  return report;
}

}  // namespace phymoe
