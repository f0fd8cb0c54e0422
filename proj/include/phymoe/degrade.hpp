#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "phymoe/image.hpp"
#include "phymoe/rng.hpp"

namespace phymoe {

// Canonical degradation order used everywhere: posterior components,
// expert ids, loss tables, confusion rows.
enum class DegradationKind { kHaze = 0, kNoise = 1, kLowlight = 2, kBlur = 3 };
inline constexpr int kNumKinds = 4;

const char* kind_name(DegradationKind k);
DegradationKind kind_from_name(const std::string& name);

struct HazeSpec {
  double t = 0.7;                      // scalar transmittance in (0,1]
  std::array<double, 3> A{0.9, 0.9, 0.9};  // atmospheric light per channel
  bool field_mode = false;             // smooth random transmittance field
  uint64_t field_seed = 0;
};

struct NoiseSpec {
  double sigma = 0.05;  // std-dev in [0, 0.5]
  uint64_t seed = 0;
};

struct BlurSpec {
  double kappa = 1.0;     // intensity >= 0 (used by the deblur expert side)
  double sigma_x = 1.5;   // kernel std-dev in pixels, > 0
  double sigma_y = 1.5;
  double theta = 0.0;     // orientation in [0,1), fraction of pi
  int kernel_size = 11;   // odd, >= 3
};

struct LowlightSpec {
  double gamma = 2.2;  // exponent > 1 darkens
};

struct DegradationSpec {
  DegradationKind kind = DegradationKind::kHaze;
  std::variant<HazeSpec, NoiseSpec, LowlightSpec, BlurSpec> params;

  void validate() const;  // throws on out-of-range parameters
};

// I = J*t + A*(1-t), clamped to [0,1]. t broadcast when scalar.
ImageTensor apply_haze(const ImageTensor& clean, double t, const std::array<double, 3>& A);
ImageTensor apply_haze(const ImageTensor& clean, const Tensor& t_field,
                       const std::array<double, 3>& A);

// Low-frequency transmittance field in [lo,hi]: coarse seeded noise,
// bilinearly upsampled.
Tensor make_transmittance_field(int h, int w, double lo, double hi, uint64_t seed);

ImageTensor apply_noise(const ImageTensor& clean, double sigma, uint64_t seed);

// Normalized anisotropic Gaussian, principal axis at angle theta*pi.
Tensor make_blur_kernel(const BlurSpec& spec);

ImageTensor apply_blur(const ImageTensor& clean, const BlurSpec& spec);

ImageTensor apply_lowlight(const ImageTensor& clean, double gamma);

ImageTensor apply_degradation(const ImageTensor& clean, const DegradationSpec& spec);

// Parameter sampling ranges for corpus synthesis.
struct SynthesisRanges {
  double t_min = 0.3, t_max = 0.9;
  double a_min = 0.7, a_max = 1.0;
  double sigma_min = 0.02, sigma_max = 0.15;
  std::vector<int> kernel_sizes{7, 11, 15};
  double blur_sigma_min = 0.5, blur_sigma_max = 3.0;
  double gamma_min = 1.5, gamma_max = 3.5;
  bool haze_field_mode = false;
};

DegradationSpec sample_spec(DegradationKind kind, const SynthesisRanges& ranges, Rng& rng);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);

struct CorpusEntry {
  std::string clean_path;
  std::string degraded_path;
  DegradationSpec spec;
  Split split = Split::kTrain;
};

struct CorpusManifest {
  std::vector<CorpusEntry> entries;

  std::string to_json() const;
  static CorpusManifest from_json(const std::string& text);
  void save(const std::string& path) const;  // atomic: tmp file + rename
  static CorpusManifest load(const std::string& path);

  std::vector<const CorpusEntry*> split_entries(Split s) const;
};

// One degraded image per (clean image, kind); 8:1:1 split assigned by a
// seeded shuffle of the clean images so no clean target leaks across splits.
CorpusManifest build_corpus(const std::string& clean_dir, const std::string& out_dir,
                            const SynthesisRanges& ranges, uint64_t seed);

}  // namespace phymoe
