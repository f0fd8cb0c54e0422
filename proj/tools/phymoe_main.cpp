// phymoe: physics-guided mixture-of-experts restoration toolkit.
// Subcommands: synth, train, eval, restore, gradcheck, route-inspect.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "phymoe/config.hpp"
#include "phymoe/gradcheck.hpp"
#include "phymoe/metrics.hpp"
#include "phymoe/train.hpp"

namespace fs = std::filesystem;
using namespace phymoe;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;      // user/config errors
constexpr int kExitInternal = 2;  // invariant violations, divergence

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs
};

CliConfig resolve_config(const CommonOpts& common) {
  CliConfig cfg;
  if (!common.config_path.empty()) load_config_file(cfg, common.config_path);
  for (const auto& kv : common.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must be key=value: " + kv);
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void attach_common(CLI::App* cmd, CommonOpts& common) {
  cmd->add_option("--config", common.config_path, "key=value config file");
  cmd->add_option("--set", common.overrides, "config override key=value (repeatable)");
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << text;
  }
  fs::rename(tmp, path);
}

int cmd_synth(const CommonOpts& common, const std::string& clean_dir,
              const std::string& out_dir, uint64_t seed) {
  CliConfig cfg = resolve_config(common);
  fs::create_directories(out_dir);
  const CorpusManifest manifest =
      build_corpus(clean_dir, (fs::path(out_dir) / "images").string(), cfg.synth, seed);
  manifest.save((fs::path(out_dir) / "manifest.json").string());

  std::array<int, 3> split_counts{};
  for (const auto& e : manifest.entries) split_counts[static_cast<size_t>(e.split)]++;
  std::cout << "entries: " << manifest.entries.size() << "\n"
            << "train: " << split_counts[0] << "  val: " << split_counts[1]
            << "  test: " << split_counts[2] << "\n"
            << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& manifest_path,
              const std::string& out_dir, uint64_t seed, int k_flag, double tau_flag,
              int image_size_flag) {
  CliConfig cfg = resolve_config(common);
  cfg.train.seed = seed;
  if (k_flag > 0) cfg.model.k_train = k_flag;
  if (tau_flag > 0) cfg.model.tau = tau_flag;
  if (image_size_flag > 0) cfg.train.image_size = image_size_flag;

  const CorpusManifest manifest = CorpusManifest::load(manifest_path);
  RestorationModel model(cfg.model);
  fs::create_directories(out_dir);

  TrainResult result;
  try {
    result = train(model, manifest, cfg.train);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged at step " << e.step << ": " << e.what() << "\n";
    return kExitInternal;
  }

  std::string log_text;
  for (const auto& line : result.log_lines) log_text += line + "\n";
  write_text_atomic((fs::path(out_dir) / "train_log.jsonl").string(), log_text);
  save_checkpoint(model, (fs::path(out_dir) / "model.ckpt").string(), result.steps, seed);

  const EvalReport val = evaluate(model, manifest, Split::kVal);
  std::cout << "steps: " << result.steps << "\n"
            << "final train total: " << result.final_train_total << "\n"
            << val.to_table();
  return kExitOk;
}

int cmd_eval(const CommonOpts& common, const std::string& manifest_path,
             const std::string& ckpt_path, const std::string& split_name_s, int k_flag,
             double tau_flag, const std::string& json_out) {
  resolve_config(common);  // validates overrides even though eval uses the checkpoint config
  const CorpusManifest manifest = CorpusManifest::load(manifest_path);
  Split split = Split::kTest;
  if (split_name_s == "train") split = Split::kTrain;
  else if (split_name_s == "val") split = Split::kVal;
  else if (split_name_s != "test")
    throw std::invalid_argument("unknown split: " + split_name_s);

  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const EvalReport report = evaluate(*ckpt.model, manifest, split, k_flag,
                                     tau_flag > 0 ? tau_flag : 0.0);
  std::cout << report.to_table();
  if (!json_out.empty()) write_text_atomic(json_out, report.to_json() + "\n");
  return kExitOk;
}

int cmd_restore(const CommonOpts& common, const std::string& ckpt_path,
                const std::vector<std::string>& inputs, const std::string& out_dir,
                int k_flag, double tau_flag) {
  resolve_config(common);
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  fs::create_directories(out_dir);
  for (const auto& in_path : inputs) {
    const ImageTensor degraded = load_image(in_path);
    ForwardOut out = ckpt.model->forward(ops::image_var(degraded),
                                         k_flag > 0 ? k_flag : 0,
                                         tau_flag > 0 ? tau_flag : 0.0);
    const ImageTensor restored = ops::to_image_clamped(out.xhat);
    const fs::path dst = fs::path(out_dir) / fs::path(in_path).filename();
    save_image(restored, dst.string());
    std::cout << in_path << " -> " << dst.string() << "\n";
  }
  return kExitOk;
}

// Gradient verification over the op and loss inventory; exit 0 iff every
// entry passes at the tolerance.
int cmd_gradcheck(const CommonOpts& common, double tolerance, const std::string& json_out) {
  resolve_config(common);
  Rng rng(1234);
  auto rt = [&](std::vector<int> shape, double scale, double offset = 0.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = offset + scale * rng.normal();
    return t;
  };

  struct Entry {
    std::string name;
    GradCheckReport report;
  };
  std::vector<Entry> entries;
  using namespace ops;

  {
    Var x = make_param(rt({4, 4, 2}, 0.6));
    Var w = make_param(rt({3, 3, 2, 3}, 0.5));
    entries.push_back({"conv2d", grad_check([&] { return mean_all(square(conv2d(x, w))); },
                                            {{"x", x}, {"w", w}}, {tolerance, 1e-5})});
    Var wd = make_param(rt({3, 3, 1, 2}, 0.5));
    entries.push_back({"dwconv2d",
                       grad_check([&] { return mean_all(square(conv2d(x, wd, 2))); },
                                  {{"x", x}, {"w", wd}}, {tolerance, 1e-5})});
  }
  {
    Var x = make_param(rt({3, 3, 4}, 1.0));
    Var g = make_param(rt({4}, 0.3, 1.0));
    Var b = make_param(rt({4}, 0.3));
    entries.push_back({"group_norm",
                       grad_check([&] { return mean_all(square(group_norm(x, g, b, 2))); },
                                  {{"x", x}, {"g", g}, {"b", b}}, {tolerance, 1e-5})});
  }
  {
    Var x = make_param(rt({3, 4, 2}, 0.8));
    entries.push_back({"gelu", grad_check([&] { return mean_all(gelu(x)); }, {{"x", x}},
                                          {tolerance, 1e-5})});
    entries.push_back({"adaptive_pool",
                       grad_check([&] { return mean_all(square(adaptive_pool(x, 2, 2))); },
                                  {{"x", x}}, {tolerance, 1e-5})});
    entries.push_back({"dft2", grad_check([&] { return mean_all(square(dft2_reim(x))); },
                                          {{"x", x}}, {tolerance, 1e-5})});
  }
  {
    Var l = make_param(rt({4}, 1.2));
    entries.push_back({"softmax",
                       grad_check([&] { return sum_all(square(softmax_vec(l))); },
                                  {{"l", l}}, {tolerance, 1e-5})});
    Var xi = make_param(rt({6}, 0.7));
    Var wl = make_param(rt({6, 3}, 0.5));
    Var bl = make_param(rt({3}, 0.5));
    entries.push_back({"linear",
                       grad_check([&] { return mean_all(square(linear(xi, wl, bl))); },
                                  {{"x", xi}, {"w", wl}, {"b", bl}}, {tolerance, 1e-5})});
  }
  {
    Var r = make_param(rt({6, 6, 2}, 0.3));
    entries.push_back(
        {"physics_freq_reg",
         grad_check([&] { return physics_freq_reg(r, Tensor::full({4}, 0.25),
                                                  PhysicsBandSpec{}); },
                    {{"r", r}}, {tolerance, 1e-5})});
  }
  {
    std::vector<Var> a, b;
    for (int i = 0; i < 3; ++i) {
      a.push_back(make_param(rt({4, 4, 1}, 0.4)));
      b.push_back(make_const(rt({4, 4, 1}, 0.4)));
    }
    entries.push_back({"w2_sliced",
                       grad_check([&] { return w2_sliced(a, b, 8, 3); },
                                  {{"a0", a[0]}, {"a1", a[1]}, {"a2", a[2]}},
                                  {tolerance, 1e-5})});
  }
  {
    Var pred = make_param(rt({8, 8, 1}, 0.2, 0.5));
    Var tgt = make_const(rt({8, 8, 1}, 0.2, 0.5));
    LossWeights lw;
    entries.push_back(
        {"pixel_loss",
         grad_check([&] { return pixel_loss(pred, tgt, DegradationKind::kHaze, lw).total; },
                    {{"pred", pred}}, {tolerance, 1e-5, 16})});
    Var wv = make_param(Tensor::from({4}, {0.4, 0.1, 0.3, 0.2}));
    entries.push_back({"balance_loss",
                       grad_check([&] { return balance_loss(wv); }, {{"w", wv}},
                                  {tolerance, 1e-5})});
    std::vector<Var> z;
    for (uint64_t i = 0; i < 4; ++i) z.push_back(make_param(rt({5}, 1.0)));
    std::vector<int> labels{0, 1, 0, 1};
    entries.push_back(
        {"contrastive_loss",
         grad_check(
             [&] {
               std::vector<Var> zn;
               for (const auto& v : z) zn.push_back(l2_normalize(v));
               return contrastive_loss(zn, labels, 0.2);
             },
             {{"z0", z[0]}, {"z1", z[1]}, {"z2", z[2]}, {"z3", z[3]}}, {tolerance, 1e-5})});
  }
  {
    // the full two-stage composite at a relaxed tolerance
    ModelConfig mc = ModelConfig::desk();
    mc.expert_width = 4;
    mc.fadd_width = 2;
    mc.w2_projections = 4;
    RestorationModel model(mc);
    Tensor img = rt({16, 16, 3}, 0.2, 0.5);
    for (int64_t i = 0; i < img.size(); ++i)
      img[i] = img[i] < 0.01 ? 0.01 : (img[i] > 0.99 ? 0.99 : img[i]);
    Var y = make_const(img);
    GradCheckOptions opt;
    opt.tolerance = std::max(tolerance, 1e-3);
    opt.step = 1e-5;
    opt.max_coords_per_param = 1;
    entries.push_back({"two_stage_composite",
                       grad_check(
                           [&] {
                             ForwardOut out = model.forward(y, 2, 1.0);
                             return add(mean_all(square(out.xhat)),
                                        sum_all(square(out.pi.pi)));
                           },
                           model.params(), opt)});
  }

  json report = json::array();
  bool all_pass = true;
  for (const auto& e : entries) {
    json j;
    j["op"] = e.name;
    j["max_rel_err"] = e.report.max_rel_err;
    j["tolerance"] = e.report.tolerance;
    j["pass"] = e.report.pass;
    report.push_back(j);
    all_pass = all_pass && e.report.pass;
    std::cout << (e.report.pass ? "pass " : "FAIL ") << e.name
              << "  max_rel_err=" << e.report.max_rel_err << "\n";
  }
  if (!json_out.empty()) write_text_atomic(json_out, report.dump(2) + "\n");
  return all_pass ? kExitOk : kExitUser;
}

int cmd_route_inspect(const CommonOpts& common, const std::string& manifest_path,
                      const std::string& ckpt_path, const std::string& split_name_s,
                      int k_flag, double tau_flag, const std::string& out_path) {
  resolve_config(common);
  const CorpusManifest manifest = CorpusManifest::load(manifest_path);
  Split split = Split::kTest;
  if (split_name_s == "train") split = Split::kTrain;
  else if (split_name_s == "val") split = Split::kVal;
  else if (split_name_s != "test")
    throw std::invalid_argument("unknown split: " + split_name_s);

  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const RouteInspection insp = route_inspect(*ckpt.model, manifest, split,
                                             k_flag > 0 ? k_flag : 0,
                                             tau_flag > 0 ? tau_flag : 0.0);

  if (!out_path.empty()) {
    std::string text;
    for (const auto& line : insp.trace_lines) text += line + "\n";
    write_text_atomic(out_path, text);
  }

  std::cout << "samples: " << insp.samples << "\n";
  std::cout << "expert usage:";
  for (int e = 0; e < kNumKinds; ++e)
    std::cout << " " << kind_name(static_cast<DegradationKind>(e)) << "="
              << insp.usage_histogram[static_cast<size_t>(e)];
  std::cout << "\nconfusion (rows: true kind, cols: selected expert):\n";
  for (int r = 0; r < kNumKinds; ++r) {
    std::cout << "  " << kind_name(static_cast<DegradationKind>(r)) << ":";
    for (int c = 0; c < kNumKinds; ++c)
      std::cout << " " << insp.confusion[static_cast<size_t>(r)][static_cast<size_t>(c)];
    std::cout << "\n";
  }
  std::cout << "routing accuracy: " << insp.routing_accuracy << "\n"
            << "posterior accuracy: " << insp.posterior_accuracy << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physics-guided mixture-of-experts restoration toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_common, train_common, eval_common, restore_common, grad_common,
      route_common;

  // synth
  auto* synth = app.add_subcommand("synth", "build a degraded corpus with 8:1:1 splits");
  std::string synth_clean, synth_out;
  uint64_t synth_seed = 0;
  bool synth_seed_set = false;
  synth->add_option("--clean", synth_clean, "directory of clean PNG images")->required();
  synth->add_option("--out", synth_out, "output corpus directory")->required();
  synth->add_option("--seed", synth_seed, "RNG seed")->required()
      ->each([&](const std::string&) { synth_seed_set = true; });
  attach_common(synth, synth_common);

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a corpus manifest");
  std::string train_manifest, train_out;
  uint64_t train_seed = 0;
  int train_k = 0, train_image_size = 0;
  double train_tau = 0;
  train_cmd->add_option("--manifest", train_manifest, "corpus manifest path")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--seed", train_seed, "RNG seed")->required();
  train_cmd->add_option("--k", train_k, "experts per sample during training");
  train_cmd->add_option("--tau", train_tau, "routing temperature");
  train_cmd->add_option("--image-size", train_image_size, "expected image size");
  attach_common(train_cmd, train_common);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "per-kind PSNR/SSIM of a checkpoint");
  std::string eval_manifest, eval_ckpt, eval_split = "test", eval_json;
  int eval_k = 0;
  double eval_tau = 0;
  eval_cmd->add_option("--manifest", eval_manifest, "corpus manifest path")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  eval_cmd->add_option("--k", eval_k, "experts per sample");
  eval_cmd->add_option("--tau", eval_tau, "routing temperature");
  eval_cmd->add_option("--json-out", eval_json, "write the report as JSON");
  attach_common(eval_cmd, eval_common);

  // restore
  auto* restore_cmd = app.add_subcommand("restore", "restore image files");
  std::string restore_ckpt, restore_out;
  std::vector<std::string> restore_inputs;
  int restore_k = 0;
  double restore_tau = 0;
  restore_cmd->add_option("--checkpoint", restore_ckpt, "checkpoint path")->required();
  restore_cmd->add_option("--out", restore_out, "output directory")->required();
  restore_cmd->add_option("images", restore_inputs, "input PNG files")->required();
  restore_cmd->add_option("--k", restore_k, "experts per sample");
  restore_cmd->add_option("--tau", restore_tau, "routing temperature");
  attach_common(restore_cmd, restore_common);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference verification suite");
  double grad_tol = 1e-4;
  std::string grad_json;
  grad_cmd->add_option("--tolerance", grad_tol, "relative error tolerance");
  grad_cmd->add_option("--json-out", grad_json, "machine-readable report path");
  attach_common(grad_cmd, grad_common);

  // route-inspect
  auto* route_cmd = app.add_subcommand("route-inspect", "routing traces and usage stats");
  std::string route_manifest, route_ckpt, route_split = "test", route_out;
  int route_k = 0;
  double route_tau = 0;
  route_cmd->add_option("--manifest", route_manifest, "corpus manifest path")->required();
  route_cmd->add_option("--checkpoint", route_ckpt, "checkpoint path")->required();
  route_cmd->add_option("--split", route_split, "train|val|test");
  route_cmd->add_option("--k", route_k, "experts per sample");
  route_cmd->add_option("--tau", route_tau, "routing temperature");
  route_cmd->add_option("--out", route_out, "trace JSONL output path");
  attach_common(route_cmd, route_common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_common, synth_clean, synth_out, synth_seed);
    if (train_cmd->parsed())
      return cmd_train(train_common, train_manifest, train_out, train_seed, train_k,
                       train_tau, train_image_size);
    if (eval_cmd->parsed())
      return cmd_eval(eval_common, eval_manifest, eval_ckpt, eval_split, eval_k, eval_tau,
                      eval_json);
    if (restore_cmd->parsed())
      return cmd_restore(restore_common, restore_ckpt, restore_inputs, restore_out,
                         restore_k, restore_tau);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_common, grad_tol, grad_json);
    if (route_cmd->parsed())
      return cmd_route_inspect(route_common, route_manifest, route_ckpt, route_split,
                               route_k, route_tau, route_out);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  }
  return kExitUser;
}
