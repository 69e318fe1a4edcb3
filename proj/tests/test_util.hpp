#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "parakit/tensor.hpp"

namespace testutil {

// Independent finite-difference oracle: exhaustive central differences over
// every entry of every parameter, all in double. The closure must rebuild its
// graph from these same tensors on each call.
template <typename F>
double fd_max_rel(F&& loss, std::vector<parakit::TensorD> params, double h = 1e-5) {
  using namespace parakit;
  for (auto& p : params) p.zero_grad();
  auto l = loss();
  l.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double saved = params[pi].data()[i];
      double fp, fm;
      {
        NoGradGuard ng;
        params[pi].data()[i] = saved + h;
        fp = loss().item();
        params[pi].data()[i] = saved - h;
        fm = loss().item();
        params[pi].data()[i] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline parakit::TensorD randn_d(std::vector<int> shape, parakit::SeededRng& rng,
                                double stddev = 1.0, bool requires_grad = true) {
  return parakit::TensorD::randn(std::move(shape), rng, stddev, requires_grad);
}

}  // namespace testutil
