#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dpfusion/environment.hpp"
#include "dpfusion/nn.hpp"

// Shared test oracles. These stay independent of the implementation paths
// they check: finite differences for gradients, the Riccati recursion for
// the linear filtering benchmark.

namespace dpfusion::testing {

// Max relative disagreement between backward() gradients and central finite
// differences over every coordinate of every parameter. `loss_fn` must
// rebuild the loss from the parameters' current values on each call.
inline double finite_difference_check(
    const std::function<ad::Tensor()>& loss_fn,
    const std::vector<ad::Tensor>& params, double h = 1e-5) {
  ad::Tensor loss = loss_fn();
  for (const auto& p : params) {
    const_cast<ad::Tensor&>(p).zero_grad();
  }
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(const_cast<ad::Tensor&>(p).grad());
  }

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& values = const_cast<ad::Tensor&>(params[t]).values_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      double up = loss_fn().scalar_value();
      values[i] = saved - h;
      double down = loss_fn().scalar_value();
      values[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max({std::fabs(numeric), std::fabs(analytic[t][i]),
                               1e-6});
      worst = std::max(worst, std::fabs(numeric - analytic[t][i]) / denom);
    }
  }
  return worst;
}

// Steady per-step filtering MSE of the scalar conditional-mean filter on a
// LinearGaussianEnv, averaged over the horizon. Works on raw measurements,
// so it lower-bounds anything downstream of the noisy fusion channel.
inline double kalman_mean_mse(const env::LinearGaussianConfig& cfg) {
  const double a = cfg.transition[0][0];
  const double q = cfg.process_var[0];
  double p = cfg.init_var[0];
  double total = 0.0;
  for (int k = 0; k < cfg.horizon; ++k) {
    if (k > 0) p = a * a * p + q;
    double info = 1.0 / p;
    for (int i = 0; i < cfg.sensors; ++i) {
      const double c = cfg.sensor_gain.empty() ? 1.0 : cfg.sensor_gain[i][0];
      info += c * c / cfg.sensor_var[i];
    }
    p = 1.0 / info;
    total += p;
  }
  return total / cfg.horizon;
}

}  // namespace dpfusion::testing
