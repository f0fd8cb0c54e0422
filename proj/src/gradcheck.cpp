#include "phymoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace phymoe {

GradCheckReport grad_check(const std::function<Var()>& f,
                           const std::vector<std::pair<std::string, Var>>& params,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;

  // analytic pass
  for (const auto& [name, p] : params) p.zero_grad();
  Var loss = f();
  if (!loss.val().all_finite()) throw std::runtime_error("grad_check: non-finite loss");
  backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(p.grad());

  Rng coord_rng(opt.seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    GradCheckEntry entry;
    entry.param = name;
    Tensor& value = p.val_mut();
    const int64_t n = value.size();

    std::vector<int64_t> coords;
    if (opt.max_coords_per_param <= 0 || n <= opt.max_coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::set<int64_t> chosen;
      int64_t worst = 0;
      for (int64_t i = 1; i < n; ++i)
        if (std::fabs(analytic[pi][i]) > std::fabs(analytic[pi][worst])) worst = i;
      chosen.insert(worst);
      while (static_cast<int>(chosen.size()) < opt.max_coords_per_param)
        chosen.insert(static_cast<int64_t>(coord_rng.uniform_index(static_cast<uint64_t>(n))));
      coords.assign(chosen.begin(), chosen.end());
    }

    for (int64_t i : coords) {
      const double saved = value[i];
      value[i] = saved + opt.step;
      const double fp = f().val()[0];
      value[i] = saved - opt.step;
      const double fm = f().val()[0];
      value[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite probe at " + name);
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[pi][i];
      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < opt.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Var()>& f, ParamStore& store,
                           const GradCheckOptions& opt) {
  std::vector<std::pair<std::string, Var>> params;
  for (const auto& [name, v] : store.items()) params.emplace_back(name, v);
  return grad_check(f, params, opt);
}

}  // namespace phymoe
