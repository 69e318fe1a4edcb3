#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "parakit/rng.hpp"
#include "parakit/tensor.hpp"

namespace parakit {

struct GradCheckOptions {
  double step = 1e-3;            // central-difference half-width
  int max_entries_per_param = 0; // 0 checks every entry
  double denom_floor = 1e-8;
  std::uint64_t sample_seed = 1234;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  int entries_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of a scalar-producing closure against
// central finite differences. The closure must rebuild its graph per call.
// Differences are taken and accumulated in double; with T = double the whole
// evaluation runs at 64-bit precision over the given parameter values.
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn,
                           const std::vector<std::pair<std::string, BasicTensor<T>>>& params,
                           double tolerance, GradCheckOptions opt = {}) {
  GradCheckReport report;
  report.tolerance = tolerance;

  for (auto& [name, p] : params) const_cast<BasicTensor<T>&>(p).zero_grad();
  BasicTensor<T> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  SeededRng sampler(opt.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = const_cast<BasicTensor<T>&>(params[pi].second);
    GradCheckEntry entry;
    entry.name = params[pi].first;

    std::vector<std::size_t> indices(p.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    if (opt.max_entries_per_param > 0 &&
        indices.size() > static_cast<std::size_t>(opt.max_entries_per_param)) {
      sampler.shuffle(indices);
      indices.resize(static_cast<std::size_t>(opt.max_entries_per_param));
    }

    for (std::size_t idx : indices) {
      const T saved = p.data()[idx];
      double fp, fm;
      {
        NoGradGuard ng;
        p.data()[idx] = saved + static_cast<T>(opt.step);
        fp = static_cast<double>(loss_fn().item());
        p.data()[idx] = saved - static_cast<T>(opt.step);
        fm = static_cast<double>(loss_fn().item());
        p.data()[idx] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = static_cast<double>(analytic[pi][idx]);
      const double rel =
          std::abs(a - numeric) / std::max(opt.denom_floor, std::abs(a) + std::abs(numeric));
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = idx;
        entry.analytic = a;
        entry.numeric = numeric;
      }
      ++entry.entries_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace parakit
