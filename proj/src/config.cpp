#include "phymoe/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace phymoe {

namespace {

int to_int(const std::string& v) {
  size_t pos = 0;
  const int r = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return r;
}

double to_double(const std::string& v) {
  size_t pos = 0;
  const double r = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return r;
}

uint64_t to_u64(const std::string& v) {
  size_t pos = 0;
  const unsigned long long r = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return static_cast<uint64_t>(r);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(item));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

using Setter = std::function<void(CliConfig&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = {
      {"preset",
       [](CliConfig& c, const std::string& v) {
         if (v == "desk")
           c.model = ModelConfig::desk();
         else if (v == "paper")
           c.model = ModelConfig();
         else
           throw std::invalid_argument("unknown preset: " + v);
       }},
      {"embed_dim", [](CliConfig& c, const std::string& v) { c.model.embed_dim = to_int(v); }},
      {"encoder_groups",
       [](CliConfig& c, const std::string& v) { c.model.encoder_groups = to_int_list(v); }},
      {"decoder_blocks",
       [](CliConfig& c, const std::string& v) { c.model.decoder_blocks = to_int_list(v); }},
      {"heads", [](CliConfig& c, const std::string& v) { c.model.heads = to_int_list(v); }},
      {"adapter_rank",
       [](CliConfig& c, const std::string& v) { c.model.adapter_rank = to_int(v); }},
      {"k_train", [](CliConfig& c, const std::string& v) { c.model.k_train = to_int(v); }},
      {"k_infer", [](CliConfig& c, const std::string& v) { c.model.k_infer = to_int(v); }},
      {"tau", [](CliConfig& c, const std::string& v) { c.model.tau = to_double(v); }},
      {"tau_c", [](CliConfig& c, const std::string& v) { c.model.tau_c = to_double(v); }},
      {"alpha", [](CliConfig& c, const std::string& v) { c.model.alpha = to_double(v); }},
      {"stage1_blocks",
       [](CliConfig& c, const std::string& v) { c.model.stage1_blocks = to_int(v); }},
      {"expert_width",
       [](CliConfig& c, const std::string& v) { c.model.expert_width = to_int(v); }},
      {"fadd_width", [](CliConfig& c, const std::string& v) { c.model.fadd_width = to_int(v); }},
      {"router_visual_width",
       [](CliConfig& c, const std::string& v) { c.model.router_visual_width = to_int(v); }},
      {"gn_groups", [](CliConfig& c, const std::string& v) { c.model.gn_groups = to_int(v); }},
      {"gdfn_expand",
       [](CliConfig& c, const std::string& v) { c.model.gdfn_expand = to_int(v); }},
      {"w2_projections",
       [](CliConfig& c, const std::string& v) { c.model.w2_projections = to_int(v); }},
      {"posterior_pool",
       [](CliConfig& c, const std::string& v) { c.model.posterior_pool = to_int(v); }},
      {"init_seed", [](CliConfig& c, const std::string& v) { c.model.init_seed = to_u64(v); }},
      {"lambda1", [](CliConfig& c, const std::string& v) { c.model.losses.lambda1 = to_double(v); }},
      {"lambda2", [](CliConfig& c, const std::string& v) { c.model.losses.lambda2 = to_double(v); }},
      {"lambda3", [](CliConfig& c, const std::string& v) { c.model.losses.lambda3 = to_double(v); }},
      {"lambda_freq",
       [](CliConfig& c, const std::string& v) { c.model.losses.lambda_freq = to_double(v); }},
      {"lr", [](CliConfig& c, const std::string& v) { c.train.lr = to_double(v); }},
      {"min_lr", [](CliConfig& c, const std::string& v) { c.train.min_lr = to_double(v); }},
      {"weight_decay",
       [](CliConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); }},
      {"warmup_epochs",
       [](CliConfig& c, const std::string& v) { c.train.warmup_epochs = to_int(v); }},
      {"epochs", [](CliConfig& c, const std::string& v) { c.train.epochs = to_int(v); }},
      {"batch_size", [](CliConfig& c, const std::string& v) { c.train.batch_size = to_int(v); }},
      {"image_size", [](CliConfig& c, const std::string& v) { c.train.image_size = to_int(v); }},
      {"crop_size", [](CliConfig& c, const std::string& v) { c.train.crop_size = to_int(v); }},
      {"seed", [](CliConfig& c, const std::string& v) { c.train.seed = to_u64(v); }},
      {"freeze_stage1",
       [](CliConfig& c, const std::string& v) { c.train.freeze_stage1 = to_bool(v); }},
      {"enable_balance",
       [](CliConfig& c, const std::string& v) { c.train.enable_balance = to_bool(v); }},
      {"enable_contrast",
       [](CliConfig& c, const std::string& v) { c.train.enable_contrast = to_bool(v); }},
      {"use_gt_pi_for_freq",
       [](CliConfig& c, const std::string& v) { c.train.use_gt_pi_for_freq = to_bool(v); }},
      {"posterior_ce_weight",
       [](CliConfig& c, const std::string& v) { c.train.posterior_ce_weight = to_double(v); }},
      {"stage1_l1_weight",
       [](CliConfig& c, const std::string& v) { c.train.stage1_l1_weight = to_double(v); }},
      {"val_every", [](CliConfig& c, const std::string& v) { c.train.val_every = to_int(v); }},
      {"t_min", [](CliConfig& c, const std::string& v) { c.synth.t_min = to_double(v); }},
      {"t_max", [](CliConfig& c, const std::string& v) { c.synth.t_max = to_double(v); }},
      {"a_min", [](CliConfig& c, const std::string& v) { c.synth.a_min = to_double(v); }},
      {"a_max", [](CliConfig& c, const std::string& v) { c.synth.a_max = to_double(v); }},
      {"sigma_min", [](CliConfig& c, const std::string& v) { c.synth.sigma_min = to_double(v); }},
      {"sigma_max", [](CliConfig& c, const std::string& v) { c.synth.sigma_max = to_double(v); }},
      {"kernel_sizes",
       [](CliConfig& c, const std::string& v) { c.synth.kernel_sizes = to_int_list(v); }},
      {"blur_sigma_min",
       [](CliConfig& c, const std::string& v) { c.synth.blur_sigma_min = to_double(v); }},
      {"blur_sigma_max",
       [](CliConfig& c, const std::string& v) { c.synth.blur_sigma_max = to_double(v); }},
      {"gamma_min", [](CliConfig& c, const std::string& v) { c.synth.gamma_min = to_double(v); }},
      {"gamma_max", [](CliConfig& c, const std::string& v) { c.synth.gamma_max = to_double(v); }},
      {"haze_field_mode",
       [](CliConfig& c, const std::string& v) { c.synth.haze_field_mode = to_bool(v); }},
  };
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_kv(CliConfig& cfg, const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end()) throw std::invalid_argument("unknown config key: " + key);
  it->second(cfg, value);
}

void load_config_file(CliConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::vector<std::string> config_schema_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, fn] : schema()) keys.push_back(k);
  return keys;
}

}  // namespace phymoe
