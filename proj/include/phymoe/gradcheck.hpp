#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phymoe/autodiff.hpp"

namespace phymoe {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  double analytic = 0.0;   // value at the worst coordinate
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // 0 probes every coordinate; otherwise a seeded sample per parameter
  // (always including the largest-magnitude analytic entry).
  int max_coords_per_param = 0;
  uint64_t seed = 17;
};

// Central finite differences against the analytic gradient of a scalar
// function rebuilt from scratch at every probe. Relative error uses
// |a - n| / max(|a|, |n|, 1e-4) so near-zero gradients are compared on an
// absolute scale compatible with the difference scheme's round-off.
GradCheckReport grad_check(const std::function<Var()>& f,
                           const std::vector<std::pair<std::string, Var>>& params,
                           const GradCheckOptions& opt = {});

// Convenience over a ParamStore.
GradCheckReport grad_check(const std::function<Var()>& f, ParamStore& store,
                           const GradCheckOptions& opt = {});

}  // namespace phymoe
