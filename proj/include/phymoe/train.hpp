#pragma once

#include <map>
#include <stdexcept>

#include "phymoe/model.hpp"

namespace phymoe {

struct TrainConfig {
  double lr = 1e-4;
  double min_lr = 1e-6;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 1e-2;
  int warmup_epochs = 10;
  int epochs = 20;
  int batch_size = 4;
  int image_size = 64;
  int crop_size = 0;  // 0: train on full-size images
  uint64_t seed = 1;

  bool freeze_stage1 = false;      // sequential mode: stage 1 left untouched
  bool enable_balance = true;      // ablation switches for the aggregate loss
  bool enable_contrast = true;
  bool use_gt_pi_for_freq = true;  // one-hot label weights in the band term

  // Auxiliary supervision (logged separately; the reported total stays the
  // four-term objective): posterior classification and stage-1 fidelity.
  double posterior_ce_weight = 0.5;
  double stage1_l1_weight = 0.5;

  int val_every = 1;  // epochs between validation metric passes (0: off)
};

// Step-indexed learning rate: linear warmup, then cosine to min_lr, hitting
// min_lr exactly at the last step.
double lr_at_step(const TrainConfig& cfg, int64_t step, int64_t total_steps,
                  int64_t warmup_steps);

/// Decoupled-weight-decay Adam over a ParamStore, iterated in name order.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(ParamStore& params, double lr, const std::vector<std::string>& frozen = {});
  int64_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int64_t step, const std::string& what)
      : std::runtime_error(what), step(step) {}
  int64_t step;
};

struct EvalRow {
  double psnr = 0, ssim = 0, baseline_psnr = 0, baseline_ssim = 0;
  int count = 0;
};

struct EvalReport {
  std::array<EvalRow, kNumKinds> per_kind;
  double avg4d_psnr = 0, avg4d_ssim = 0;
  double baseline_avg4d_psnr = 0;
  std::string to_table() const;
  std::string to_json() const;
};

struct TrainResult {
  std::vector<std::string> log_lines;  // one JSON object per step
  int64_t steps = 0;
  double final_train_total = 0;
};

TrainResult train(RestorationModel& model, const CorpusManifest& manifest,
                  const TrainConfig& cfg);

EvalReport evaluate(const RestorationModel& model, const CorpusManifest& manifest,
                    Split split, int k = 0, double tau = 0.0);

struct RouteInspection {
  std::vector<std::string> trace_lines;            // JSONL records
  std::array<int64_t, kNumKinds> usage_histogram{};  // expert selections
  std::array<std::array<int, kNumKinds>, kNumKinds> confusion{};  // [true][expert]
  double routing_accuracy = 0;    // top-1 expert == true kind
  double posterior_accuracy = 0;  // posterior argmax == true kind
  int64_t samples = 0;
};

RouteInspection route_inspect(const RestorationModel& model, const CorpusManifest& manifest,
                              Split split, int k, double tau);

// Checkpoint container: versioned binary parameter blobs (little-endian
// f32) plus a JSON metadata sidecar at <path>.json. Saving quantizes the
// live parameters to the stored precision so a reload reproduces forward
// outputs bit-identically.
void save_checkpoint(RestorationModel& model, const std::string& path, int64_t step,
                     uint64_t seed);
struct LoadedCheckpoint {
  std::unique_ptr<RestorationModel> model;
  int64_t step = 0;
  uint64_t seed = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Model config (de)serialization shared by checkpoints and the CLI.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace phymoe
