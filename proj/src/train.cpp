#include "phymoe/train.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "phymoe/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace phymoe {

using namespace ops;

double lr_at_step(const TrainConfig& cfg, int64_t step, int64_t total_steps,
                  int64_t warmup_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const int64_t last = total_steps - 1;
  if (last <= warmup_steps) return cfg.min_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(last - warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

void AdamW::step(ParamStore& params, double lr, const std::vector<std::string>& frozen) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params.items_mut()) {
    bool skip = false;
    for (const auto& prefix : frozen)
      if (name.rfind(prefix, 0) == 0) skip = true;
    if (skip) continue;

    Tensor& value = p.val_mut();
    const Tensor& g = p.grad();
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      m_.emplace(name, Tensor::zeros(value.shape()));
      v_.emplace(name, Tensor::zeros(value.shape()));
      mit = m_.find(name);
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (int64_t i = 0; i < value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                        cfg_.weight_decay * value[i]);
    }
  }
}

namespace {

struct Sample {
  ImageTensor degraded, clean;
  DegradationKind kind;
};

std::vector<Sample> load_split(const CorpusManifest& manifest, Split split) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    out.push_back({load_image(e.degraded_path), load_image(e.clean_path), e.spec.kind});
  }
  return out;
}

ImageTensor augment(const ImageTensor& img, bool hflip, int rot_k, int crop_y, int crop_x,
                    int crop) {
  const int h = crop > 0 ? crop : img.height();
  const int w = crop > 0 ? crop : img.width();
  Tensor out({h, w, img.channels()});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sy = y + crop_y, sx = x + crop_x;
      if (hflip) sx = (crop > 0 ? crop_x + w - 1 - (sx - crop_x) : img.width() - 1 - sx);
      for (int c = 0; c < img.channels(); ++c) out.at3(y, x, c) = img.at(sy, sx, c);
    }
  ImageTensor base = ImageTensor::from_tensor(std::move(out));
  for (int r = 0; r < rot_k; ++r) {
    Tensor rot({base.width(), base.height(), base.channels()});
    for (int y = 0; y < base.height(); ++y)
      for (int x = 0; x < base.width(); ++x)
        for (int c = 0; c < base.channels(); ++c)
          rot.at3(x, base.height() - 1 - y, c) = base.at(y, x, c);
    base = ImageTensor::from_tensor(std::move(rot));
  }
  return base;
}

Tensor one_hot_kind(DegradationKind k) {
  Tensor t({kNumKinds});
  t[static_cast<int>(k)] = 1.0;
  return t;
}

}  // namespace

TrainResult train(RestorationModel& model, const CorpusManifest& manifest,
                  const TrainConfig& cfg) {
  const auto train_set = load_split(manifest, Split::kTrain);
  if (train_set.empty()) throw std::invalid_argument("manifest has no train split");
  const ModelConfig& mc = model.config();
  const LossWeights& lw = mc.losses;

  const int64_t usable = static_cast<int64_t>(train_set.size());
  const int64_t steps_per_epoch = std::max<int64_t>(1, usable / cfg.batch_size);
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  const int64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  AdamW opt(cfg);
  TrainResult result;
  std::vector<std::string> frozen;
  if (cfg.freeze_stage1) frozen.push_back("stage1.");

  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(mix_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
    std::vector<int> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    epoch_rng.shuffle(order);

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      const double lr = lr_at_step(cfg, step, total_steps, warmup_steps);

      std::vector<Var> xhat_b, target_b, resid_b, z_b;
      std::vector<Tensor> pi_weight_b;
      std::vector<int> labels;
      std::vector<Var> pixel_terms, ce_terms, s1_terms;
      std::vector<Var> act_vecs;

      const int bs = static_cast<int>(
          std::min<int64_t>(cfg.batch_size, usable - b * cfg.batch_size));
      for (int s = 0; s < bs; ++s) {
        const Sample& sample = train_set[static_cast<size_t>(
            order[static_cast<size_t>(b * cfg.batch_size + s)])];

        const bool hflip = epoch_rng.uniform() < 0.5;
        const int rot_k = static_cast<int>(epoch_rng.uniform_index(4));
        int cy = 0, cx = 0;
        const int crop = cfg.crop_size > 0 && cfg.crop_size < sample.degraded.height()
                             ? cfg.crop_size
                             : 0;
        if (crop > 0) {
          cy = static_cast<int>(
              epoch_rng.uniform_index(sample.degraded.height() - crop + 1));
          cx = static_cast<int>(
              epoch_rng.uniform_index(sample.degraded.width() - crop + 1));
        }
        const ImageTensor deg = augment(sample.degraded, hflip, rot_k, cy, cx, crop);
        const ImageTensor cln = augment(sample.clean, hflip, rot_k, cy, cx, crop);

        Var y = image_var(deg);
        Var target = image_var(cln);
        ForwardOut out = model.forward(y, mc.k_train, mc.tau);

        xhat_b.push_back(out.xhat);
        target_b.push_back(target);
        resid_b.push_back(sub(y, out.xhat));
        z_b.push_back(out.z);
        labels.push_back(static_cast<int>(sample.kind));
        pi_weight_b.push_back(cfg.use_gt_pi_for_freq ? one_hot_kind(sample.kind)
                                                     : out.pi.pi.val());

        pixel_terms.push_back(pixel_loss(out.xhat, target, sample.kind, lw).total);
        Var p_label = index_scalar(out.pi.pi, static_cast<int>(sample.kind));
        ce_terms.push_back(neg(log_v(max_scalar(p_label, 1e-12))));
        s1_terms.push_back(mean_all(abs_v(sub(out.x0, target))));

        // expert activation scattered over the K slots
        std::vector<Var> slots(static_cast<size_t>(mc.n_experts),
                               make_const(Tensor::scalar(0.0)));
        for (size_t i = 0; i < out.decision.top_indices.size(); ++i)
          slots[static_cast<size_t>(out.decision.top_indices[i])] =
              out.decision.top_weights[i];
        act_vecs.push_back(stack_scalars(slots));
      }
      if (static_cast<int>(xhat_b.size()) < 2) continue;  // losses need a real batch

      DaotParts daot = daot_loss(xhat_b, target_b, resid_b, pi_weight_b, lw, mc.bands,
                                 mc.w2_projections, mix_seed(cfg.seed, 0xd1c7));
      Var pixel = mean_scalars(pixel_terms);

      Var mean_act = act_vecs[0];
      for (size_t i = 1; i < act_vecs.size(); ++i) mean_act = add(mean_act, act_vecs[i]);
      mean_act = mul_scalar(mean_act, 1.0 / static_cast<double>(act_vecs.size()));
      Var balance = cfg.enable_balance ? balance_loss(mean_act)
                                       : make_const(Tensor::scalar(0.0));

      Var contrast = make_const(Tensor::scalar(0.0));
      if (cfg.enable_contrast) {
        bool any_pos = false;
        for (size_t i = 0; i < labels.size() && !any_pos; ++i)
          for (size_t j = i + 1; j < labels.size(); ++j)
            if (labels[i] == labels[j]) {
              any_pos = true;
              break;
            }
        if (any_pos)
          contrast = contrastive_loss(z_b, labels, mc.tau_c);
        else
          std::cerr << "[train] step " << step
                    << ": no positive pairs in batch, contrastive term skipped\n";
      }

      TotalLoss tl = total_loss(daot.total, pixel, balance, contrast, lw);
      Var ce = mean_scalars(ce_terms);
      Var s1 = mean_scalars(s1_terms);
      Var objective = add(tl.total, add(mul_scalar(ce, cfg.posterior_ce_weight),
                                        mul_scalar(s1, cfg.stage1_l1_weight)));

      if (!std::isfinite(objective.val()[0]))
        throw TrainingDiverged(step, "non-finite loss at step " + std::to_string(step));

      model.params().zero_grads();
      backward(objective);
      opt.step(model.params(), lr, frozen);

      tl.report.w2 = daot.w2.val()[0];
      tl.report.freq_reg = daot.freq.val()[0];
      json line = json::parse(tl.report.to_json_line());
      line["epoch"] = epoch;
      line["step"] = step;
      line["lr"] = lr;
      line["aux_posterior_ce"] = ce.val()[0];
      line["aux_stage1_l1"] = s1.val()[0];
      result.log_lines.push_back(line.dump());
      result.final_train_total = tl.report.total;
      ++step;
    }

    if (cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0) {
      EvalReport val = evaluate(model, manifest, Split::kVal);
      json line;
      line["epoch"] = epoch;
      line["val_psnr_4d"] = val.avg4d_psnr;
      line["val_ssim_4d"] = val.avg4d_ssim;
      result.log_lines.push_back(line.dump());
    }
  }
  result.steps = step;
  return result;
}

EvalReport evaluate(const RestorationModel& model, const CorpusManifest& manifest,
                    Split split, int k, double tau) {
  if (k == 0) k = model.config().k_infer;
  if (tau <= 0) tau = model.config().tau;
  EvalReport report;
  for (const auto* e : manifest.split_entries(split)) {
    const ImageTensor deg = load_image(e->degraded_path);
    const ImageTensor cln = load_image(e->clean_path);
    ForwardOut out = model.forward(image_var(deg), k, tau);
    const ImageTensor restored = to_image_clamped(out.xhat);
    EvalRow& row = report.per_kind[static_cast<size_t>(e->spec.kind)];
    row.psnr += psnr(restored, cln);
    row.ssim += ssim(restored, cln);
    row.baseline_psnr += psnr(deg, cln);
    row.baseline_ssim += ssim(deg, cln);
    row.count += 1;
  }
  int kinds = 0;
  for (auto& row : report.per_kind) {
    if (row.count == 0) continue;
    row.psnr /= row.count;
    row.ssim /= row.count;
    row.baseline_psnr /= row.count;
    row.baseline_ssim /= row.count;
    report.avg4d_psnr += row.psnr;
    report.avg4d_ssim += row.ssim;
    report.baseline_avg4d_psnr += row.baseline_psnr;
    ++kinds;
  }
  if (kinds > 0) {
    report.avg4d_psnr /= kinds;
    report.avg4d_ssim /= kinds;
    report.baseline_avg4d_psnr /= kinds;
  }
  return report;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "kind      count  psnr_db   ssim     base_psnr  base_ssim\n";
  for (int k = 0; k < kNumKinds; ++k) {
    const EvalRow& r = per_kind[static_cast<size_t>(k)];
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-9s %5d  %8.3f  %7.4f  %9.3f  %9.4f\n",
                  kind_name(static_cast<DegradationKind>(k)), r.count, r.psnr, r.ssim,
                  r.baseline_psnr, r.baseline_ssim);
    os << buf;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-9s %5s  %8.3f  %7.4f  %9.3f\n", "4d-avg", "-",
                avg4d_psnr, avg4d_ssim, baseline_avg4d_psnr);
  os << buf;
  return os.str();
}

std::string EvalReport::to_json() const {
  json j;
  for (int k = 0; k < kNumKinds; ++k) {
    const EvalRow& r = per_kind[static_cast<size_t>(k)];
    j[kind_name(static_cast<DegradationKind>(k))] = {{"count", r.count},
                                                     {"psnr", r.psnr},
                                                     {"ssim", r.ssim},
                                                     {"baseline_psnr", r.baseline_psnr},
                                                     {"baseline_ssim", r.baseline_ssim}};
  }
  j["avg4d_psnr"] = avg4d_psnr;
  j["avg4d_ssim"] = avg4d_ssim;
  j["baseline_avg4d_psnr"] = baseline_avg4d_psnr;
  return j.dump(2);
}

RouteInspection route_inspect(const RestorationModel& model, const CorpusManifest& manifest,
                              Split split, int k, double tau) {
  if (k == 0) k = model.config().k_infer;
  if (tau <= 0) tau = model.config().tau;
  RouteInspection insp;
  int64_t sample_id = 0;
  for (const auto* e : manifest.split_entries(split)) {
    const ImageTensor deg = load_image(e->degraded_path);
    ForwardOut out = model.forward(image_var(deg), k, tau);
    insp.trace_lines.push_back(out.decision.to_json_record(sample_id, out.pi.pi.val()));
    const int truth = static_cast<int>(e->spec.kind);
    for (int idx : out.decision.top_indices)
      insp.usage_histogram[static_cast<size_t>(idx)] += 1;
    const int top1 = out.decision.top_indices[0];  // indices sorted; weights renormalized
    // top-1 = largest renormalized weight
    int best = top1;
    double best_w = -1;
    for (size_t i = 0; i < out.decision.top_indices.size(); ++i)
      if (out.decision.top_weights[i].val()[0] > best_w) {
        best_w = out.decision.top_weights[i].val()[0];
        best = out.decision.top_indices[i];
      }
    insp.confusion[static_cast<size_t>(truth)][static_cast<size_t>(best)] += 1;
    if (best == truth) insp.routing_accuracy += 1;
    if (out.pi.argmax() == truth) insp.posterior_accuracy += 1;
    ++sample_id;
  }
  insp.samples = sample_id;
  if (sample_id > 0) {
    insp.routing_accuracy /= static_cast<double>(sample_id);
    insp.posterior_accuracy /= static_cast<double>(sample_id);
  }
  return insp;
}

// ---------------- checkpoints ----------------

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["embed_dim"] = cfg.embed_dim;
  j["encoder_groups"] = cfg.encoder_groups;
  j["decoder_blocks"] = cfg.decoder_blocks;
  j["heads"] = cfg.heads;
  j["adapter_rank"] = cfg.adapter_rank;
  j["n_experts"] = cfg.n_experts;
  j["k_train"] = cfg.k_train;
  j["k_infer"] = cfg.k_infer;
  j["tau"] = cfg.tau;
  j["tau_c"] = cfg.tau_c;
  j["alpha"] = cfg.alpha;
  j["stage1_blocks"] = cfg.stage1_blocks;
  j["expert_width"] = cfg.expert_width;
  j["fadd_width"] = cfg.fadd_width;
  j["router_visual_width"] = cfg.router_visual_width;
  j["gn_groups"] = cfg.gn_groups;
  j["gdfn_expand"] = cfg.gdfn_expand;
  j["w2_projections"] = cfg.w2_projections;
  j["posterior_pool"] = cfg.posterior_pool;
  j["init_seed"] = cfg.init_seed;
  j["lambda1"] = cfg.losses.lambda1;
  j["lambda2"] = cfg.losses.lambda2;
  j["lambda3"] = cfg.losses.lambda3;
  j["lambda_freq"] = cfg.losses.lambda_freq;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.embed_dim = j.at("embed_dim");
  cfg.encoder_groups = j.at("encoder_groups").get<std::vector<int>>();
  cfg.decoder_blocks = j.at("decoder_blocks").get<std::vector<int>>();
  cfg.heads = j.at("heads").get<std::vector<int>>();
  cfg.adapter_rank = j.at("adapter_rank");
  cfg.n_experts = j.at("n_experts");
  cfg.k_train = j.at("k_train");
  cfg.k_infer = j.at("k_infer");
  cfg.tau = j.at("tau");
  cfg.tau_c = j.at("tau_c");
  cfg.alpha = j.at("alpha");
  cfg.stage1_blocks = j.at("stage1_blocks");
  cfg.expert_width = j.at("expert_width");
  cfg.fadd_width = j.at("fadd_width");
  cfg.router_visual_width = j.at("router_visual_width");
  cfg.gn_groups = j.at("gn_groups");
  cfg.gdfn_expand = j.at("gdfn_expand");
  cfg.w2_projections = j.at("w2_projections");
  cfg.posterior_pool = j.at("posterior_pool");
  cfg.init_seed = j.at("init_seed");
  cfg.losses.lambda1 = j.at("lambda1");
  cfg.losses.lambda2 = j.at("lambda2");
  cfg.losses.lambda3 = j.at("lambda3");
  cfg.losses.lambda_freq = j.at("lambda_freq");
  return cfg;
}

void save_checkpoint(RestorationModel& model, const std::string& path, int64_t step,
                     uint64_t seed) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write("PMC1", 4);
    write_u32(os, 1);  // version
    write_u32(os, static_cast<uint32_t>(model.params().count()));
    for (auto& [name, p] : model.params().items_mut()) {
      write_u32(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const auto& shape = p.val().shape();
      write_u32(os, static_cast<uint32_t>(shape.size()));
      for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
      Tensor& value = p.val_mut();
      for (int64_t i = 0; i < value.size(); ++i) {
        const float f = static_cast<float>(value[i]);
        value[i] = static_cast<double>(f);  // keep live params at stored precision
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(os, bits);
      }
    }
  }
  fs::rename(tmp, path);

  json meta;
  meta["model_config"] = json::parse(model_config_to_json(model.config()));
  meta["step"] = step;
  meta["seed"] = seed;
  const std::string meta_tmp = path + ".json.tmp";
  {
    std::ofstream os(meta_tmp, std::ios::binary);
    os << meta.dump(2) << "\n";
  }
  fs::rename(meta_tmp, path + ".json");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream meta_in(path + ".json", std::ios::binary);
  if (!meta_in) throw std::runtime_error("missing checkpoint sidecar: " + path + ".json");
  const json meta = json::parse(meta_in);

  LoadedCheckpoint out;
  out.step = meta.at("step");
  out.seed = meta.at("seed");
  out.model = std::make_unique<RestorationModel>(
      model_config_from_json(meta.at("model_config").dump()));

  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "PMC1", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint32_t version = read_u32(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t count = read_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(is));
    Var p = out.model->params().get(name);
    if (p.val().shape() != shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    Tensor& value = p.val_mut();
    for (int64_t e = 0; e < value.size(); ++e) {
      const uint32_t bits = read_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      value[e] = static_cast<double>(f);
    }
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return out;
}

}  // namespace phymoe
