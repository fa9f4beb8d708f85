#pragma once

#include "mmrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mmrl::testing {

/// Largest relative error between stored analytic gradients and central
/// differences of `loss`, over a few random entries of every parameter.
/// Gradients below 1e-5 are compared absolutely.
template <typename LossFn>
double max_relative_gradient_error(const nn::ParamList<double>& params, LossFn&& loss, int samples_per_param = 6,
                                   std::uint64_t seed = 1, double h = 1e-6) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto* p : params) {
    const Index n = p->value.size();
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (int s = 0; s < std::min<Index>(samples_per_param, n); ++s) {
      const Index i = pick(rng);
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(scale, 1e-5));
    }
  }
  return worst;
}

}  // namespace mmrl::testing
