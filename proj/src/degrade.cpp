#include "phymoe/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace phymoe {

const char* kind_name(DegradationKind k) {
  switch (k) {
    case DegradationKind::kHaze: return "haze";
    case DegradationKind::kNoise: return "noise";
    case DegradationKind::kLowlight: return "lowlight";
    case DegradationKind::kBlur: return "blur";
  }
  return "?";
}

DegradationKind kind_from_name(const std::string& name) {
  for (int i = 0; i < kNumKinds; ++i) {
    const auto k = static_cast<DegradationKind>(i);
    if (name == kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown degradation kind: " + name);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

static Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + s);
}

void DegradationSpec::validate() const {
  switch (kind) {
    case DegradationKind::kHaze: {
      const auto& p = std::get<HazeSpec>(params);
      if (!(p.t > 0.0 && p.t <= 1.0)) throw std::invalid_argument("haze t out of (0,1]");
      for (double a : p.A)
        if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("haze A out of [0,1]");
      break;
    }
    case DegradationKind::kNoise: {
      const auto& p = std::get<NoiseSpec>(params);
      if (!(p.sigma >= 0.0 && p.sigma <= 0.5))
        throw std::invalid_argument("noise sigma out of [0,0.5]");
      break;
    }
    case DegradationKind::kLowlight: {
      const auto& p = std::get<LowlightSpec>(params);
      if (!(p.gamma > 1.0)) throw std::invalid_argument("lowlight gamma must exceed 1");
      break;
    }
    case DegradationKind::kBlur: {
      const auto& p = std::get<BlurSpec>(params);
      if (!(p.kappa >= 0.0)) throw std::invalid_argument("blur kappa must be >= 0");
      if (!(p.sigma_x > 0.0 && p.sigma_y > 0.0))
        throw std::invalid_argument("blur sigmas must be positive");
      if (!(p.theta >= 0.0 && p.theta < 1.0))
        throw std::invalid_argument("blur theta out of [0,1)");
      if (p.kernel_size < 3 || p.kernel_size % 2 == 0)
        throw std::invalid_argument("kernel size must be odd and >= 3");
      break;
    }
  }
}

static double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

ImageTensor apply_haze(const ImageTensor& clean, double t, const std::array<double, 3>& A) {
  if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("t out of (0,1]");
  Tensor out = clean.tensor();
  const int ch = clean.channels();
  for (int y = 0; y < clean.height(); ++y)
    for (int x = 0; x < clean.width(); ++x)
      for (int c = 0; c < ch; ++c) {
        const double a = A[static_cast<size_t>(c % 3)];
        out.at3(y, x, c) = clamp01(clean.at(y, x, c) * t + a * (1.0 - t));
      }
  return ImageTensor::from_tensor(std::move(out));
}

ImageTensor apply_haze(const ImageTensor& clean, const Tensor& t_field,
                       const std::array<double, 3>& A) {
  if (t_field.rank() != 2 || t_field.dim(0) != clean.height() ||
      t_field.dim(1) != clean.width())
    throw std::invalid_argument("transmittance field shape mismatch");
  Tensor out = clean.tensor();
  const int ch = clean.channels();
  for (int y = 0; y < clean.height(); ++y)
    for (int x = 0; x < clean.width(); ++x) {
      const double t = t_field.at2(y, x);
      if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("t field out of (0,1]");
      for (int c = 0; c < ch; ++c) {
        const double a = A[static_cast<size_t>(c % 3)];
        out.at3(y, x, c) = clamp01(clean.at(y, x, c) * t + a * (1.0 - t));
      }
    }
  return ImageTensor::from_tensor(std::move(out));
}

Tensor make_transmittance_field(int h, int w, double lo, double hi, uint64_t seed) {
  // coarse grid of uniform draws, bilinear upsample
  const int gh = std::max(2, h / 16), gw = std::max(2, w / 16);
  Rng rng(seed);
  Tensor grid({gh, gw});
  for (int64_t i = 0; i < grid.size(); ++i) grid[i] = rng.uniform(lo, hi);
  Tensor field({h, w});
  for (int y = 0; y < h; ++y) {
    const double fy = (gh - 1) * static_cast<double>(y) / std::max(1, h - 1);
    const int y0 = std::min(static_cast<int>(fy), gh - 2);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = (gw - 1) * static_cast<double>(x) / std::max(1, w - 1);
      const int x0 = std::min(static_cast<int>(fx), gw - 2);
      const double wx = fx - x0;
      field.at2(y, x) = (1 - wy) * ((1 - wx) * grid.at2(y0, x0) + wx * grid.at2(y0, x0 + 1)) +
                        wy * ((1 - wx) * grid.at2(y0 + 1, x0) + wx * grid.at2(y0 + 1, x0 + 1));
    }
  }
  return field;
}

ImageTensor apply_noise(const ImageTensor& clean, double sigma, uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  Tensor out = clean.tensor();
  Rng rng(seed);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = clamp01(out[i] + rng.normal(0.0, sigma));
  return ImageTensor::from_tensor(std::move(out));
}

Tensor make_blur_kernel(const BlurSpec& spec) {
  DegradationSpec d{DegradationKind::kBlur, spec};
  d.validate();
  const int n = spec.kernel_size;
  const int half = n / 2;
  const double angle = spec.theta * M_PI;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double ix = 1.0 / (2.0 * spec.sigma_x * spec.sigma_x);
  const double iy = 1.0 / (2.0 * spec.sigma_y * spec.sigma_y);
  Tensor k({n, n});
  double sum = 0.0;
  for (int y = -half; y <= half; ++y)
    for (int x = -half; x <= half; ++x) {
      // rotate into the principal-axis frame
      const double u = ca * x + sa * y;
      const double v = -sa * x + ca * y;
      const double g = std::exp(-(u * u * ix + v * v * iy));
      k.at2(y + half, x + half) = g;
      sum += g;
    }
  k.scale_inplace(1.0 / sum);
  return k;
}

static int reflect_index(int i, int n) {
  // reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

ImageTensor apply_blur(const ImageTensor& clean, const BlurSpec& spec) {
  const Tensor k = make_blur_kernel(spec);
  const int n = spec.kernel_size, half = n / 2;
  const int h = clean.height(), w = clean.width(), ch = clean.channels();
  Tensor out({h, w, ch});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int dy = -half; dy <= half; ++dy) {
          const int yy = reflect_index(y + dy, h);
          for (int dx = -half; dx <= half; ++dx) {
            const int xx = reflect_index(x + dx, w);
            acc += k.at2(dy + half, dx + half) * clean.at(yy, xx, c);
          }
        }
        out.at3(y, x, c) = clamp01(acc);
      }
  return ImageTensor::from_tensor(std::move(out));
}

ImageTensor apply_lowlight(const ImageTensor& clean, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  Tensor out = clean.tensor();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], gamma);
  return ImageTensor::from_tensor(std::move(out));
}

ImageTensor apply_degradation(const ImageTensor& clean, const DegradationSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DegradationKind::kHaze: {
      const auto& p = std::get<HazeSpec>(spec.params);
      if (p.field_mode) {
        const Tensor f = make_transmittance_field(clean.height(), clean.width(),
                                                  std::max(1e-3, p.t - 0.15),
                                                  std::min(1.0, p.t + 0.15), p.field_seed);
        return apply_haze(clean, f, p.A);
      }
      return apply_haze(clean, p.t, p.A);
    }
    case DegradationKind::kNoise: {
      const auto& p = std::get<NoiseSpec>(spec.params);
      return apply_noise(clean, p.sigma, p.seed);
    }
    case DegradationKind::kLowlight: {
      const auto& p = std::get<LowlightSpec>(spec.params);
      return apply_lowlight(clean, p.gamma);
    }
    case DegradationKind::kBlur: {
      const auto& p = std::get<BlurSpec>(spec.params);
      return apply_blur(clean, p);
    }
  }
  throw std::logic_error("unreachable");
}

DegradationSpec sample_spec(DegradationKind kind, const SynthesisRanges& r, Rng& rng) {
  DegradationSpec spec;
  spec.kind = kind;
  switch (kind) {
    case DegradationKind::kHaze: {
      HazeSpec p;
      p.t = rng.uniform(r.t_min, r.t_max);
      for (double& a : p.A) a = rng.uniform(r.a_min, r.a_max);
      p.field_mode = r.haze_field_mode;
      p.field_seed = rng.next_u64();
      spec.params = p;
      break;
    }
    case DegradationKind::kNoise: {
      NoiseSpec p;
      p.sigma = rng.uniform(r.sigma_min, r.sigma_max);
      p.seed = rng.next_u64();
      spec.params = p;
      break;
    }
    case DegradationKind::kLowlight: {
      LowlightSpec p;
      p.gamma = rng.uniform(r.gamma_min, r.gamma_max);
      spec.params = p;
      break;
    }
    case DegradationKind::kBlur: {
      BlurSpec p;
      p.kernel_size = r.kernel_sizes[rng.uniform_index(r.kernel_sizes.size())];
      p.sigma_x = rng.uniform(r.blur_sigma_min, r.blur_sigma_max);
      p.sigma_y = rng.uniform(r.blur_sigma_min, r.blur_sigma_max);
      p.theta = rng.uniform();
      p.kappa = rng.uniform(0.5, 2.0);
      spec.params = p;
      break;
    }
  }
  spec.validate();
  return spec;
}

static json spec_to_json(const DegradationSpec& spec) {
  json j;
  switch (spec.kind) {
    case DegradationKind::kHaze: {
      const auto& p = std::get<HazeSpec>(spec.params);
      j = {{"t", p.t}, {"A", p.A}, {"field_mode", p.field_mode}, {"field_seed", p.field_seed}};
      break;
    }
    case DegradationKind::kNoise: {
      const auto& p = std::get<NoiseSpec>(spec.params);
      j = {{"sigma", p.sigma}, {"seed", p.seed}};
      break;
    }
    case DegradationKind::kLowlight: {
      const auto& p = std::get<LowlightSpec>(spec.params);
      j = {{"gamma", p.gamma}};
      break;
    }
    case DegradationKind::kBlur: {
      const auto& p = std::get<BlurSpec>(spec.params);
      j = {{"kappa", p.kappa}, {"sigma_x", p.sigma_x}, {"sigma_y", p.sigma_y},
           {"theta", p.theta}, {"kernel_size", p.kernel_size}};
      break;
    }
  }
  return j;
}

static DegradationSpec spec_from_json(DegradationKind kind, const json& j) {
  DegradationSpec spec;
  spec.kind = kind;
  switch (kind) {
    case DegradationKind::kHaze: {
      HazeSpec p;
      p.t = j.at("t");
      p.A = j.at("A");
      p.field_mode = j.value("field_mode", false);
      p.field_seed = j.value("field_seed", 0ull);
      spec.params = p;
      break;
    }
    case DegradationKind::kNoise: {
      NoiseSpec p;
      p.sigma = j.at("sigma");
      p.seed = j.at("seed");
      spec.params = p;
      break;
    }
    case DegradationKind::kLowlight: {
      LowlightSpec p;
      p.gamma = j.at("gamma");
      spec.params = p;
      break;
    }
    case DegradationKind::kBlur: {
      BlurSpec p;
      p.kappa = j.at("kappa");
      p.sigma_x = j.at("sigma_x");
      p.sigma_y = j.at("sigma_y");
      p.theta = j.at("theta");
      p.kernel_size = j.at("kernel_size");
      spec.params = p;
      break;
    }
  }
  spec.validate();
  return spec;
}

std::string CorpusManifest::to_json() const {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"clean_path", e.clean_path},
                   {"degraded_path", e.degraded_path},
                   {"kind", kind_name(e.spec.kind)},
                   {"params", spec_to_json(e.spec)},
                   {"split", split_name(e.split)}});
  }
  return json{{"entries", arr}}.dump(2);
}

CorpusManifest CorpusManifest::from_json(const std::string& text) {
  CorpusManifest m;
  const json j = json::parse(text);
  for (const auto& je : j.at("entries")) {
    CorpusEntry e;
    e.clean_path = je.at("clean_path");
    e.degraded_path = je.at("degraded_path");
    const DegradationKind kind = kind_from_name(je.at("kind"));
    e.spec = spec_from_json(kind, je.at("params"));
    e.split = split_from_name(je.at("split"));
    m.entries.push_back(std::move(e));
  }
  return m;
}

void CorpusManifest::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << to_json() << "\n";
  }
  fs::rename(tmp, path);
}

CorpusManifest CorpusManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::vector<const CorpusEntry*> CorpusManifest::split_entries(Split s) const {
  std::vector<const CorpusEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

CorpusManifest build_corpus(const std::string& clean_dir, const std::string& out_dir,
                            const SynthesisRanges& ranges, uint64_t seed) {
  std::vector<std::string> names;
  if (!fs::is_directory(clean_dir))
    throw std::runtime_error("clean directory does not exist: " + clean_dir);
  for (const auto& entry : fs::directory_iterator(clean_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().filename().string());
  }
  if (names.empty()) throw std::runtime_error("no PNG images in " + clean_dir);
  std::sort(names.begin(), names.end());

  // Seeded shuffle of image order per kind, then round-robin interleave
  // across kinds. Taking the first round(0.8N) interleaved entries as train
  // hits the 8:1:1 counts exactly and keeps every split balanced in kind.
  const int n_img = static_cast<int>(names.size());
  const int n_total = n_img * kNumKinds;
  const int n_train = static_cast<int>(std::lround(0.8 * n_total));
  const int n_val = (n_total - n_train + 1) / 2;  // val gets the odd remainder

  std::vector<std::vector<int>> kind_order(kNumKinds);
  for (int k = 0; k < kNumKinds; ++k) {
    kind_order[k].resize(names.size());
    for (int i = 0; i < n_img; ++i) kind_order[k][static_cast<size_t>(i)] = i;
    Rng split_rng(mix_seed(seed, 0x5e17u + static_cast<uint64_t>(k)));
    split_rng.shuffle(kind_order[k]);
  }
  // split_of[i][k]
  std::vector<std::array<Split, kNumKinds>> split_of(names.size());
  int rank = 0;
  for (int i = 0; i < n_img; ++i)
    for (int k = 0; k < kNumKinds; ++k) {
      const int img = kind_order[k][static_cast<size_t>(i)];
      split_of[static_cast<size_t>(img)][static_cast<size_t>(k)] =
          rank < n_train ? Split::kTrain
                         : (rank < n_train + n_val ? Split::kVal : Split::kTest);
      ++rank;
    }

  fs::create_directories(out_dir);
  CorpusManifest manifest;
  int64_t entry_index = 0;
  for (size_t i = 0; i < names.size(); ++i) {
    const std::string clean_path = (fs::path(clean_dir) / names[i]).string();
    const ImageTensor clean = load_image(clean_path);
    for (int k = 0; k < kNumKinds; ++k) {
      const auto kind = static_cast<DegradationKind>(k);
      Rng rng(mix_seed(seed, static_cast<uint64_t>(entry_index)));
      const DegradationSpec spec = sample_spec(kind, ranges, rng);
      const ImageTensor degraded = apply_degradation(clean, spec);

      const std::string stem = fs::path(names[i]).stem().string();
      const std::string out_name = stem + "_" + kind_name(kind) + ".png";
      const std::string out_path = (fs::path(out_dir) / out_name).string();
      save_image(degraded, out_path);

      CorpusEntry e;
      e.clean_path = clean_path;
      e.degraded_path = out_path;
      e.spec = spec;
      e.split = split_of[i][static_cast<size_t>(k)];
      manifest.entries.push_back(std::move(e));
      ++entry_index;
    }
  }
  return manifest;
}

}  // namespace phymoe
