#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stylediff/rng.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

struct GradCheckReport {
  std::string param_name;
  double max_rel_error = 0.0;
  bool passed = false;
  std::vector<Index> sampled_coords;  // which coordinates were probed
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // probe at most this many coordinates per parameter (0 = all)
  int max_coords = 0;
  uint64_t coord_seed = 7;
};

// parameter under test together with its analytic gradient
struct GradCheckTarget {
  std::string name;
  Tensor<double>* value = nullptr;
  Tensor<double> analytic;
};

// Central-difference check, (f(p+eps)-f(p-eps))/(2 eps) per probed coordinate.
// loss_fn is treated as a black box over the current parameter values; the
// derivative estimate uses forward evaluations only, independent of any
// autodiff machinery behind loss_fn.
template <class LossFn>
std::vector<GradCheckReport> finite_diff_grad_check(LossFn&& loss_fn,
                                                    std::vector<GradCheckTarget> targets,
                                                    const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0 && opt.eps <= 1e-2))
    throw ParameterError("finite_diff_grad_check: eps must lie in (0, 1e-2], got " +
                         std::to_string(opt.eps));
  double f0 = loss_fn();
  double f1 = loss_fn();
  if (f0 != f1)
    throw DeterminismError("loss_fn returned " + std::to_string(f0) + " then " +
                           std::to_string(f1) + " at identical parameters");

  std::vector<GradCheckReport> reports;
  reports.reserve(targets.size());
  for (auto& tgt : targets) {
    Tensor<double>& p = *tgt.value;
    if (!p.same_shape(tgt.analytic))
      throw DimensionError("gradcheck " + tgt.name + ": analytic grad " +
                           shape_str(tgt.analytic.shape()) + " vs value " + shape_str(p.shape()));
    GradCheckReport rep;
    rep.param_name = tgt.name;

    std::vector<Index> coords;
    if (opt.max_coords > 0 && p.numel() > opt.max_coords) {
      Rng rng(opt.coord_seed);
      for (char ch : tgt.name) rng.next_u64(), rng.set_state(rng.state() ^ static_cast<uint64_t>(ch));
      std::vector<Index> all(static_cast<size_t>(p.numel()));
      for (Index i = 0; i < p.numel(); ++i) all[static_cast<size_t>(i)] = i;
      rng.shuffle(all);
      coords.assign(all.begin(), all.begin() + opt.max_coords);
      std::sort(coords.begin(), coords.end());
    } else {
      for (Index i = 0; i < p.numel(); ++i) coords.push_back(i);
    }
    rep.sampled_coords = coords;

    double worst = 0.0;
    for (Index i : coords) {
      double orig = p[i];
      p[i] = orig + opt.eps;
      double fp = loss_fn();
      p[i] = orig - opt.eps;
      double fm = loss_fn();
      p[i] = orig;
      double fd = (fp - fm) / (2.0 * opt.eps);
      double an = tgt.analytic[i];
      double err = std::abs(fd - an) / (std::abs(fd) + std::abs(an) + 1e-4);
      worst = std::max(worst, err);
    }
    rep.max_rel_error = worst;
    rep.passed = worst < opt.tol;
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace stylediff
